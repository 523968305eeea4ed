//! Density-driven optimal control (D²OC) for multi-agent non-uniform coverage.
//!
//! Agents are steered by a finite-horizon optimal controller so that the
//! time-averaged cloud of their positions (agent-points) matches a weighted
//! reference cloud (sample-points). Every step runs three stages:
//!
//! 1. **Optimal control** ([`controller`]): pick local sample-points by
//!    weight-normalized distance and compute the analytic optimal input.
//! 2. **Weight update** ([`transport`]): transport mass from sample-points to
//!    the new agent-point.
//! 3. **Weight sharing** ([`sharing`]): agents in communication range merge
//!    their coverage ledgers.
//!
//! The numerical core (`dynamics`, `controller`, `transport`, `sharing`) is
//! generic over the scalar type through [`Real`]; the `f64` aliases below are
//! what the simulation and CLI use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod density;
pub mod dynamics;
pub mod metrics;
pub mod scalar;
pub mod sharing;
pub mod sim;
pub mod transport;

mod error;

pub use error::{Error, Result};
pub use scalar::Real;

pub type LtiModel64 = dynamics::LtiModel<f64>;
pub type NonlinearModel64 = dynamics::NonlinearModel<f64>;
pub type Model64 = dynamics::Model<f64>;
pub type ControllerConfig64 = controller::ControllerConfig<f64>;
pub type LocalSelection64 = controller::LocalSelection<f64>;
pub type KktSystem64 = controller::KktSystem<f64>;
pub type TransportPlan64 = transport::TransportPlan<f64>;
pub type DiscreteDistribution64 = transport::DiscreteDistribution<f64>;
pub type CoverageLedger64 = sharing::CoverageLedger<f64>;

pub type LtiModel32 = dynamics::LtiModel<f32>;
pub type ControllerConfig32 = controller::ControllerConfig<f32>;
pub type TransportPlan32 = transport::TransportPlan<f32>;
pub type CoverageLedger32 = sharing::CoverageLedger<f32>;
