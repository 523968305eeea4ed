//! Coverage quality and sharing efficiency measures.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::density::SamplePointCloud;
use crate::scalar::compensated_sum;
use crate::sharing::SharingMethod;
use crate::sim::SimResult;
use crate::transport::{solve_exact, wasserstein2_sinkhorn, DiscreteDistribution};
use crate::{Error, Result};

/// Sinkhorn settings used above the exact-solver limit.
pub const SINKHORN_EPSILON_FACTOR: f64 = 1e-3;
pub const SINKHORN_MAX_ITERS: usize = 5000;
pub const SINKHORN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "kebab-case")]
pub enum W2Method {
    Exact { pivots: usize },
    Sinkhorn { epsilon: f64, iterations: usize, converged: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W2Estimate {
    pub value: f64,
    pub method: W2Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario_id: String,
    pub seed: u64,
    pub method: SharingMethod,
    pub terminal_steps: usize,
    pub w2: f64,
    pub w2_method: W2Method,
    /// Average remaining weight (%) after each tick, starting at tick 0.
    pub avg_remaining: Vec<f64>,
    pub work_redundancy: f64,
    pub wall_time: f64,
}

impl MetricsReport {
    pub fn from_result(result: &SimResult, cloud: &SamplePointCloud, exact_limit: usize) -> Result<Self> {
        let w2 = coverage_wasserstein(result, cloud, exact_limit)?;
        Ok(MetricsReport {
            scenario_id: result.scenario_id.clone(),
            seed: result.seed,
            method: result.method,
            terminal_steps: result.step_budgets.iter().copied().max().unwrap_or(0),
            w2: w2.value,
            w2_method: w2.method,
            avg_remaining: average_remaining_series(result),
            work_redundancy: work_redundancy(result),
            wall_time: result.wall_time,
        })
    }
}

/// Agent-points with their mass `α`, rescaled to a probability distribution.
pub fn agent_point_distribution(result: &SimResult) -> Result<DiscreteDistribution<f64>> {
    let points = result.agent_points();
    if points.is_empty() {
        return Err(Error::NoData("run produced no agent-points".into()));
    }
    let masses = vec![result.alpha.max(f64::MIN_POSITIVE); points.len()];
    DiscreteDistribution::normalized(points, masses)
}

/// W₂ between the agent-points and the reference cloud; exact when both sides
/// fit within `exact_limit` atoms, Sinkhorn otherwise.
pub fn coverage_wasserstein(result: &SimResult, cloud: &SamplePointCloud, exact_limit: usize) -> Result<W2Estimate> {
    let agents = agent_point_distribution(result)?;
    let reference = DiscreteDistribution::from_cloud(cloud)?;
    distribution_wasserstein(&agents, &reference, exact_limit)
}

pub fn distribution_wasserstein(
    a: &DiscreteDistribution<f64>,
    b: &DiscreteDistribution<f64>,
    exact_limit: usize,
) -> Result<W2Estimate> {
    if a.len() <= exact_limit && b.len() <= exact_limit {
        let sol = solve_exact(a, b, exact_limit)?;
        return Ok(W2Estimate {
            value: sol.distance(),
            method: W2Method::Exact { pivots: sol.pivots },
        });
    }
    let epsilon = SINKHORN_EPSILON_FACTOR * diameter_sq(a.atoms().iter().chain(b.atoms()));
    log::info!(
        "{}x{} atoms exceed the exact limit {exact_limit}; Sinkhorn with epsilon {epsilon:e}",
        a.len(),
        b.len()
    );
    let r = wasserstein2_sinkhorn(a, b, epsilon.max(f64::MIN_POSITIVE), SINKHORN_MAX_ITERS, SINKHORN_TOL)?;
    Ok(W2Estimate {
        value: r.distance(),
        method: W2Method::Sinkhorn {
            epsilon,
            iterations: r.iterations,
            converged: r.converged,
        },
    })
}

fn diameter_sq<'a, I: Iterator<Item = &'a Vector2<f64>>>(points: I) -> f64 {
    let (mut lo, mut hi) = (Vector2::repeat(f64::MAX), Vector2::repeat(f64::MIN));
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm_squared()
}

/// `(1/L) Σ_r Σ_j β_j × 100` from per-agent ledger totals.
pub fn average_remaining_weight(remaining: &[f64]) -> f64 {
    if remaining.is_empty() {
        return 0.0;
    }
    compensated_sum(remaining.iter().copied()) / remaining.len() as f64 * 100.0
}

/// Average remaining weight after every recorded tick.
pub fn average_remaining_series(result: &SimResult) -> Vec<f64> {
    (0..=result.last_tick())
        .map(|k| average_remaining_weight(&result.remaining_at(k)))
        .collect()
}

/// `(Σ γ* − 1) × 100` over every agent and step.
pub fn work_redundancy(result: &SimResult) -> f64 {
    (result.total_transported() - 1.0) * 100.0
}
