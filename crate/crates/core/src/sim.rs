//! The three-stage coverage loop over a fleet of agents.

use std::time::Instant;

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::controller::{optimal_control, select_local_samples, ControllerConfig, LtiGains};
use crate::density::{sample_points, Bounds, DensitySpec, SamplePointCloud};
use crate::dynamics::{build_model, Model, ModelKind};
use crate::scalar::{compensated_sum, mass_tol};
use crate::sharing::{merge_original, merge_proposed, CoverageLedger, SharingMethod};
use crate::transport::{weight_update_plan, TransportPlan};
use crate::{Error, Result};

/// Mass below which the reference is considered fully covered.
pub const EXHAUSTED_MASS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub model: ModelKind,
    pub x0: Vec<f64>,
    /// Step budget `M`.
    pub steps: usize,
}

/// When an agent stops stepping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Termination {
    /// After `M` steps, or earlier if its ledger cannot supply `α`.
    #[default]
    Budget,
    /// Until its ledger cannot supply `α`, capped at `max_steps`. `α` is
    /// still derived from the step budgets.
    Exhaustion { max_steps: usize },
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub bounds: Bounds,
    pub density: DensitySpec,
    pub samples: usize,
    pub seed: u64,
    pub agents: Vec<AgentSpec>,
    pub dt: f64,
    pub controller: ControllerConfig<f64>,
    pub r_comm: f64,
    pub method: SharingMethod,
    pub termination: Termination,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        self.density.validate()?;
        if self.agents.is_empty() {
            return Err(Error::Validation("scenario needs at least one agent".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Validation(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.r_comm >= 0.0) {
            return Err(Error::Validation(format!("r_comm must be nonnegative, got {}", self.r_comm)));
        }
        if self.samples == 0 {
            return Err(Error::Validation("sample count must be at least 1".into()));
        }
        self.controller.validate()?;
        for (r, agent) in self.agents.iter().enumerate() {
            agent.model.validate()?;
            let mdt = agent.model.dt();
            if (mdt - self.dt).abs() > 1e-12 * self.dt.max(1.0) {
                return Err(Error::Validation(format!(
                    "agent {r}: model dt {mdt} differs from scenario dt {}",
                    self.dt
                )));
            }
            let n = agent.model.state_dim();
            if agent.x0.len() != n {
                return Err(Error::Validation(format!(
                    "agent {r}: initial state has {} entries, model needs {n}",
                    agent.x0.len()
                )));
            }
            if agent.x0.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("agent {r}: initial state is not finite")));
            }
            let (ix, iy) = agent.model.position_indices();
            let p = Vector2::new(agent.x0[ix], agent.x0[iy]);
            if !self.bounds.contains(&p) {
                return Err(Error::OutsideDomain { x: p.x, y: p.y });
            }
            self.controller.check_dims(n, 2).map_err(|e| {
                Error::Validation(format!("agent {r}: penalties do not fit the model ({e})"))
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    /// Every agent used its step budget.
    StepBudget,
    /// The reference mass is fully covered.
    MassExhausted,
    /// At least one agent stopped because its ledger could not supply `α`.
    LedgerExhausted,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationReason::StepBudget => "step-budget",
            TerminationReason::MassExhausted => "mass-exhausted",
            TerminationReason::LedgerExhausted => "ledger-exhausted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub k: usize,
    pub t: f64,
    pub state: Vec<f64>,
    pub position: Vector2<f64>,
}

/// Mass absorbed by `agent` into agent-point `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRecord {
    pub k: usize,
    pub agent: usize,
    pub entries: Vec<(usize, f64)>,
}

/// `Σ_j β_j` of `agent`'s ledger after tick `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerRecord {
    pub k: usize,
    pub agent: usize,
    pub remaining: f64,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub scenario_id: String,
    pub seed: u64,
    pub method: SharingMethod,
    pub alpha: f64,
    pub dt: f64,
    /// Configured `M` per agent.
    pub step_budgets: Vec<usize>,
    pub cloud: SamplePointCloud,
    pub trajectories: Vec<Vec<TrajectoryRow>>,
    pub plans: Vec<PlanRecord>,
    pub ledger_series: Vec<LedgerRecord>,
    pub final_ledgers: Vec<CoverageLedger<f64>>,
    pub exchanges: usize,
    pub termination: TerminationReason,
    /// Seconds spent stepping, excluding sampling and output.
    pub wall_time: f64,
}

impl SimResult {
    pub fn agents(&self) -> usize {
        self.trajectories.len()
    }

    /// Agent-point positions, excluding initial states.
    pub fn agent_points(&self) -> Vec<Vector2<f64>> {
        self.trajectories
            .iter()
            .flat_map(|t| t.iter().skip(1).map(|r| r.position))
            .collect()
    }

    /// Total mass moved over all agents and steps.
    pub fn total_transported(&self) -> f64 {
        compensated_sum(self.plans.iter().flat_map(|p| p.entries.iter().map(|e| e.1)))
    }

    /// Ledger totals of every agent after tick `k`, in agent order.
    pub fn remaining_at(&self, k: usize) -> Vec<f64> {
        let mut out = vec![f64::NAN; self.agents()];
        for rec in self.ledger_series.iter().filter(|r| r.k == k) {
            out[rec.agent] = rec.remaining;
        }
        out
    }

    /// Last recorded tick.
    pub fn last_tick(&self) -> usize {
        self.ledger_series.iter().map(|r| r.k).max().unwrap_or(0)
    }
}

/// `α = 1 / Σ_r M_r`, or zero when no agent has any steps.
pub fn uniform_alpha(agents: &[AgentSpec]) -> f64 {
    let total: usize = agents.iter().map(|a| a.steps).sum();
    if total == 0 {
        0.0
    } else {
        1.0 / total as f64
    }
}

/// Result of one Stage A + B update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: DVector<f64>,
    pub position: Vector2<f64>,
    pub plan: TransportPlan<f64>,
}

/// Stage A (select, control, move) then Stage B (transport at the new
/// position) for one agent. `row` is the progress row credited; it is the
/// agent's own index.
#[allow(clippy::too_many_arguments)]
pub fn agent_step(
    model: &Model<f64>,
    gains: Option<&LtiGains<f64>>,
    controller: &ControllerConfig<f64>,
    x: &DVector<f64>,
    ledger: &mut CoverageLedger<f64>,
    row: usize,
    positions: &[Vector2<f64>],
    alpha: f64,
) -> Result<StepOutcome> {
    let y = output_position(model, x);
    let selection = select_local_samples(&y, ledger.beta(), positions, alpha)?;
    let u = match gains {
        Some(g) => controller.saturate(g.input(&selection.centroid, x)),
        None => optimal_control(model, controller, &selection, x)?,
    };
    let state = model.step(x, &u)?;
    let position = output_position(model, &state);
    let plan = weight_update_plan(&position, ledger.beta(), positions, alpha)?;
    ledger.record_progress(row, &plan)?;
    Ok(StepOutcome { state, position, plan })
}

fn output_position(model: &Model<f64>, x: &DVector<f64>) -> Vector2<f64> {
    let y = model.output(x);
    Vector2::new(y[0], y[1])
}

/// Merges every in-range pair of participating ledgers, in ascending `(r, s)`
/// order, repeating until nothing changes. The first pass merges every
/// in-range pair; later passes only pairs whose ledgers still differ.
/// Returns the number of merges.
pub fn sharing_pass(
    positions: &[Vector2<f64>],
    participating: &[bool],
    ledgers: &mut [CoverageLedger<f64>],
    method: SharingMethod,
    r_comm: f64,
) -> Result<usize> {
    if method == SharingMethod::Centralized {
        return Ok(0);
    }
    let l = ledgers.len();
    let mut pairs = Vec::new();
    for r in 0..l {
        for s in r + 1..l {
            if participating[r] && participating[s] && (positions[r] - positions[s]).norm() <= r_comm {
                pairs.push((r, s));
            }
        }
    }
    let mut merges = 0;
    let mut first = true;
    loop {
        let mut changed = false;
        for &(r, s) in &pairs {
            let (head, tail) = ledgers.split_at_mut(s);
            let (a, b) = (&mut head[r], &mut tail[0]);
            if !first && !differs(a, b, method) {
                continue;
            }
            let c = match method {
                SharingMethod::Proposed => merge_proposed(a, b)?,
                SharingMethod::Original => merge_original(a, b)?,
                SharingMethod::Centralized => unreachable!(),
            };
            merges += 1;
            changed |= c;
        }
        first = false;
        if !changed {
            break;
        }
    }
    Ok(merges)
}

fn differs(a: &CoverageLedger<f64>, b: &CoverageLedger<f64>, method: SharingMethod) -> bool {
    match method {
        SharingMethod::Proposed => a.progress() != b.progress(),
        _ => a.beta() != b.beta(),
    }
}

/// Samples the reference cloud and runs the scenario.
pub fn run_scenario(scenario: &Scenario) -> Result<SimResult> {
    scenario.validate()?;
    let cloud = sample_points(&scenario.density, scenario.samples, scenario.seed, &scenario.bounds)?;
    run_with_cloud(scenario, cloud)
}

/// Runs the scenario against a given reference cloud.
pub fn run_with_cloud(scenario: &Scenario, cloud: SamplePointCloud) -> Result<SimResult> {
    scenario.validate()?;
    cloud.validate()?;
    let started = Instant::now();
    let l = scenario.agents.len();
    let n = cloud.len();
    let alpha = uniform_alpha(&scenario.agents);
    let tol = mass_tol::<f64>();
    let centralized = scenario.method == SharingMethod::Centralized;

    let mut models = Vec::with_capacity(l);
    let mut gains = Vec::with_capacity(l);
    for (r, agent) in scenario.agents.iter().enumerate() {
        let model = build_model::<f64>(&agent.model)?;
        let g = match (&model, alpha > 0.0) {
            (Model::Lti(lti), true) => Some(LtiGains::new(lti, &scenario.controller, alpha)?),
            (Model::Nonlinear(_), _) => {
                if scenario.controller.horizon > 1 {
                    log::warn!("agent {r}: nonlinear model plans a single step; horizon {} ignored", scenario.controller.horizon);
                }
                None
            }
            _ => None,
        };
        models.push(model);
        gains.push(g);
    }

    let budgets: Vec<usize> = scenario
        .agents
        .iter()
        .map(|a| match scenario.termination {
            Termination::Budget => a.steps,
            Termination::Exhaustion { max_steps } => max_steps,
        })
        .collect();

    let ledger_count = if centralized { 1 } else { l };
    let mut ledgers = (0..ledger_count)
        .map(|r| CoverageLedger::new(r, l, cloud.weights.clone()))
        .collect::<Result<Vec<_>>>()?;

    let mut states: Vec<DVector<f64>> = scenario
        .agents
        .iter()
        .map(|a| DVector::from_column_slice(&a.x0))
        .collect();
    let mut positions: Vec<Vector2<f64>> = states
        .iter()
        .zip(&models)
        .map(|(x, m)| output_position(m, x))
        .collect();
    let mut trajectories: Vec<Vec<TrajectoryRow>> = states
        .iter()
        .zip(&positions)
        .map(|(x, p)| {
            vec![TrajectoryRow {
                k: 0,
                t: 0.0,
                state: x.as_slice().to_vec(),
                position: *p,
            }]
        })
        .collect();
    let mut steps_done = vec![0usize; l];
    let mut active = vec![true; l];
    let mut ledger_starved = false;
    let mut absorbed = vec![0.0; n];
    let mut plans = Vec::new();
    let mut ledger_series = Vec::new();
    let mut exchanges = 0;

    let ledger_of = |r: usize| if centralized { 0 } else { r };
    let record = |series: &mut Vec<LedgerRecord>, ledgers: &[CoverageLedger<f64>], k: usize| {
        for r in 0..l {
            series.push(LedgerRecord {
                k,
                agent: r,
                remaining: ledgers[ledger_of(r)].remaining(),
            });
        }
    };
    record(&mut ledger_series, &ledgers, 0);

    let mut k = 0;
    let mut exhausted = global_remaining(&cloud.weights, &absorbed) < EXHAUSTED_MASS;
    while active.iter().any(|&a| a) && !exhausted {
        for r in 0..l {
            if !active[r] {
                continue;
            }
            if steps_done[r] >= budgets[r] {
                active[r] = false;
                continue;
            }
            let ledger = &mut ledgers[ledger_of(r)];
            let have = ledger.remaining();
            if have < alpha - tol || have < EXHAUSTED_MASS {
                active[r] = false;
                ledger_starved = true;
                continue;
            }
            let out = agent_step(
                &models[r],
                gains[r].as_ref(),
                &scenario.controller,
                &states[r],
                ledger,
                r,
                &cloud.positions,
                alpha,
            )?;
            for &(j, g) in &out.plan.entries {
                absorbed[j] += g;
            }
            steps_done[r] += 1;
            trajectories[r].push(TrajectoryRow {
                k: k + 1,
                t: (k + 1) as f64 * scenario.dt,
                state: out.state.as_slice().to_vec(),
                position: out.position,
            });
            plans.push(PlanRecord {
                k: k + 1,
                agent: r,
                entries: out.plan.entries,
            });
            states[r] = out.state;
            positions[r] = out.position;
        }
        if !active.iter().any(|&a| a) {
            break;
        }
        if !centralized {
            exchanges += sharing_pass(&positions, &active, &mut ledgers, scenario.method, scenario.r_comm)?;
        }
        k += 1;
        record(&mut ledger_series, &ledgers, k);
        exhausted = global_remaining(&cloud.weights, &absorbed) < EXHAUSTED_MASS;
    }

    let termination = if exhausted {
        TerminationReason::MassExhausted
    } else if ledger_starved {
        TerminationReason::LedgerExhausted
    } else {
        TerminationReason::StepBudget
    };
    let wall_time = started.elapsed().as_secs_f64();
    Ok(SimResult {
        scenario_id: scenario.id.clone(),
        seed: scenario.seed,
        method: scenario.method,
        alpha,
        dt: scenario.dt,
        step_budgets: scenario.agents.iter().map(|a| a.steps).collect(),
        cloud,
        trajectories,
        plans,
        ledger_series,
        final_ledgers: ledgers,
        exchanges,
        termination,
        wall_time,
    })
}

/// `Σ_j max(0, β⁰_j − absorbed_j)`.
fn global_remaining(beta0: &[f64], absorbed: &[f64]) -> f64 {
    compensated_sum(beta0.iter().zip(absorbed).map(|(b, a)| (b - a).max(0.0)))
}
