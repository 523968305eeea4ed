//! Randomized drivers that compare the library against the oracles. Each
//! returns the worst deviation it saw; callers pick the sample counts and
//! tolerances.

use d2oc::controller::{
    assemble_kkt, invert_structured, optimal_control_nonlinear, plan_lti, rollout, stage_cost, ControllerConfig,
    KktSystem,
};
use d2oc::dynamics::{Model, NonlinearModel};
use d2oc::sharing::{centralized_remaining, merge_original, merge_proposed, omission_delta, CoverageLedger};
use d2oc::transport::{solve_exact, wasserstein2_sinkhorn, weight_update_plan, DiscreteDistribution, TransportPlan};
use nalgebra::{DMatrix, DVector, Vector2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_config<R: Rng>(rng: &mut R, n: usize, m: usize, horizon: usize) -> ControllerConfig<f64> {
    let rank = rng.gen_range(0..=n);
    let q = random_psd(rng, n, rank, 0.1);
    ControllerConfig::new(q, random_pd(rng, m), horizon, None).unwrap()
}

fn random_state<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0))
}

#[derive(Debug, Default, Clone, Copy)]
pub struct KktReport {
    pub worst_residual: f64,
    pub worst_input_diff: f64,
}

/// Structured solves of random LTI problems against a dense LU solve.
pub fn kkt_exactness(seed: u64, instances: usize) -> KktReport {
    let mut rng = rng(seed);
    let mut out = KktReport::default();
    let dims = [2, 4, 8];
    let horizons = [1, 5, 15];
    for k in 0..instances {
        let n = dims[k % 3];
        let t = horizons[(k / 3) % 3];
        let model = random_lti(&mut rng, n, 2, 0);
        let config = random_config(&mut rng, n, 2, t);
        let (k, total) = (rng.gen_range(1..6), rng.gen_range(0.01..1.0));
        let sel = random_selection(&mut rng, k, total);
        let x = random_state(&mut rng, n);
        let plan = plan_lti(&model, &config, &sel, &x).unwrap();
        let kkt = assemble_kkt(&model, &config, &sel, &x).unwrap();
        let dense = dense_kkt_solve(&kkt);
        let mt = 2 * t;
        let u_dense = dense.rows(dense.len() - mt, mt).into_owned();
        out.worst_residual = out.worst_residual.max(plan.residual);
        out.worst_input_diff = out.worst_input_diff.max(rel_diff(&plan.solution.inputs, &u_dense));
    }
    out
}

#[derive(Debug, Default, Clone, Copy)]
pub struct InverseReport {
    pub worst_inverse_diff: f64,
    pub worst_identity_err: f64,
}

/// Closed-form block inverse against a dense inverse of random KKT matrices.
pub fn structured_inverse(seed: u64, instances: usize) -> InverseReport {
    let mut rng = rng(seed);
    let mut out = InverseReport::default();
    for _ in 0..instances {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=3);
        let t = rng.gen_range(1..=8);
        let model = random_lti(&mut rng, n, m, 0);
        let rank = rng.gen_range(0..=n);
        let kkt = KktSystem::from_blocks(
            model.a().clone(),
            model.b().clone(),
            random_psd(&mut rng, n, rank, 1.0),
            random_pd(&mut rng, m),
            t,
            DVector::zeros(n * t),
            DVector::zeros(n * t),
        )
        .unwrap();
        let inv = invert_structured(&kkt).unwrap().dense();
        let e = kkt.dense();
        let reference = e.clone().try_inverse().expect("dense inverse");
        out.worst_inverse_diff = out.worst_inverse_diff.max(rel_diff_mat(&inv, &reference));
        let size = e.nrows();
        let identity_err = (&e * &inv - DMatrix::identity(size, size)).amax();
        out.worst_identity_err = out.worst_identity_err.max(identity_err);
    }
    out
}

/// Smallest `J(u* + Δ) − J(u*)` over random perturbations of the optimal
/// input sequence.
pub fn minimality(seed: u64, instances: usize, perturbations: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..instances {
        let n = [2, 4][rng.gen_range(0..2)];
        let t = rng.gen_range(1..=6);
        let lti = random_lti(&mut rng, n, 2, 0);
        let config = random_config(&mut rng, n, 2, t);
        let (k, total) = (rng.gen_range(1..6), rng.gen_range(0.01..1.0));
        let sel = random_selection(&mut rng, k, total);
        let x = random_state(&mut rng, n);
        let plan = plan_lti(&lti, &config, &sel, &x).unwrap();
        let model = Model::Lti(lti);
        let split = |v: &DVector<f64>| -> Vec<DVector<f64>> { (0..t).map(|i| v.rows(2 * i, 2).into_owned()).collect() };
        let cost = |inputs: &[DVector<f64>]| {
            let states = rollout(&model, &x, inputs).unwrap();
            stage_cost(&sel, &config, &states, inputs, &model).unwrap()
        };
        let best = cost(&split(&plan.solution.inputs));
        for _ in 0..perturbations {
            let scale = 10f64.powf(rng.gen_range(-3.0..0.0));
            let delta = DVector::from_fn(2 * t, |_, _| rng.gen_range(-scale..scale));
            let trial = cost(&split(&(&plan.solution.inputs + delta)));
            worst = worst.min(trial - best);
        }
    }
    worst
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ExistenceReport {
    pub failures: usize,
    pub singular: usize,
    pub uncontrollable: usize,
    pub worst_residual: f64,
}

/// Structured solves on generic, singular-`A` and uncontrollable models.
pub fn existence(seed: u64, instances: usize) -> ExistenceReport {
    let mut rng = rng(seed);
    let mut out = ExistenceReport::default();
    for k in 0..instances {
        let kind = (k % 3) as u8;
        let n = rng.gen_range(2..=6);
        let t = rng.gen_range(1..=10);
        let model = random_lti(&mut rng, n, 2, kind);
        match kind {
            1 => out.singular += usize::from(model.a().determinant().abs() < 1e-12),
            2 => out.uncontrollable += 1,
            _ => {}
        }
        let config = random_config(&mut rng, n, 2, t);
        let (k, total) = (rng.gen_range(1..6), rng.gen_range(0.01..1.0));
        let sel = random_selection(&mut rng, k, total);
        let x = random_state(&mut rng, n);
        match plan_lti(&model, &config, &sel, &x) {
            Ok(plan) => out.worst_residual = out.worst_residual.max(plan.residual),
            Err(_) => out.failures += 1,
        }
    }
    out
}

/// `½Σγ‖C x⁺ − q‖² + ½ x⁺ᵀQx⁺ + ½uᵀRu` written out for the unicycle.
fn unicycle_cost(
    x: &DVector<f64>,
    dt: f64,
    u: &[f64],
    sel: &d2oc::controller::LocalSelection<f64>,
    config: &ControllerConfig<f64>,
) -> f64 {
    let next = DVector::from_vec(vec![
        x[0] + dt * x[2].cos() * u[0],
        x[1] + dt * x[2].sin() * u[0],
        x[2] + dt * u[1],
    ]);
    let y = Vector2::new(next[0], next[1]);
    let track: f64 = sel
        .gamma
        .iter()
        .zip(&sel.positions)
        .map(|(g, q)| g * (y - q).norm_squared())
        .sum();
    let uv = DVector::from_column_slice(u);
    0.5 * (track + next.dot(&(&config.q * &next)) + uv.dot(&(&config.r * &uv)))
}

/// Worst input-norm gap between the analytic unicycle input and a numerical
/// minimizer of the single-step cost.
pub fn unicycle_inputs(seed: u64, instances: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let dt = rng.gen_range(0.05..0.5);
        let model = NonlinearModel::unicycle(dt);
        let config = random_config(&mut rng, 3, 2, 1);
        let (k, total) = (rng.gen_range(1..6), rng.gen_range(0.01..1.0));
        let sel = random_selection(&mut rng, k, total);
        let x = DVector::from_vec(vec![
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-3.0..3.0),
        ]);
        let u = optimal_control_nonlinear(&model, &config, &sel, &x).unwrap();
        let found = numerical_minimize(|v| unicycle_cost(&x, dt, v, &sel, &config), &[0.0, 0.0], 20_000);
        let gap = ((u[0] - found[0]).powi(2) + (u[1] - found[1]).powi(2)).sqrt();
        worst = worst.max(gap);
    }
    worst
}

/// Worst relative gap between the control-affine path on `f = Ax, g = B` and
/// the `T = 1` LTI solve.
pub fn constant_g_inputs(seed: u64, instances: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.gen_range(2..=6);
        let lti = random_lti(&mut rng, n, 2, 0);
        let config = random_config(&mut rng, n, 2, 1);
        let (k, total) = (rng.gen_range(1..6), rng.gen_range(0.01..1.0));
        let sel = random_selection(&mut rng, k, total);
        let x = random_state(&mut rng, n);
        let affine = optimal_control_nonlinear(&NonlinearModel::from_lti(&lti), &config, &sel, &x).unwrap();
        let linear = plan_lti(&lti, &config, &sel, &x).unwrap().first_input(2);
        worst = worst.max((&affine - &linear).norm() / linear.norm().max(1.0));
    }
    worst
}

fn plan_cost(plan: &TransportPlan<f64>, positions: &[Vector2<f64>]) -> f64 {
    plan.entries
        .iter()
        .map(|&(j, g)| g * (positions[j] - plan.target).norm_squared())
        .sum()
}

/// Worst gap between the greedy plan objective and the LP optimum.
pub fn weight_update(seed: u64, instances: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.gen_range(1..=12);
        let positions: Vec<Vector2<f64>> = (0..n)
            .map(|_| Vector2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
            .collect();
        let beta: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..1.0) })
            .collect();
        let total: f64 = beta.iter().sum();
        let alpha = total * rng.gen_range(0.0..1.0);
        let y = Vector2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
        let plan = weight_update_plan(&y, &beta, &positions, alpha).unwrap();
        let cost: Vec<f64> = positions.iter().map(|p| (p - y).norm_squared()).collect();
        let best = lp_vertex_minimum(&beta, &cost, alpha);
        worst = worst.max((plan_cost(&plan, &positions) - best).abs());
    }
    worst
}

fn random_distribution<R: Rng>(rng: &mut R, n: usize, spread: f64) -> DiscreteDistribution<f64> {
    let atoms = (0..n)
        .map(|_| Vector2::new(rng.gen_range(0.0..spread), rng.gen_range(0.0..spread)))
        .collect();
    let masses = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    DiscreteDistribution::normalized(atoms, masses).unwrap()
}

fn cost_matrix(a: &DiscreteDistribution<f64>, b: &DiscreteDistribution<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| (a.atoms()[i] - b.atoms()[j]).norm_squared())
}

/// Worst gap between the exact solver's cost and basis enumeration.
pub fn exact_transport(seed: u64, instances: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (ka, kb) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let a = random_distribution(&mut rng, ka, 10.0);
        let b = random_distribution(&mut rng, kb, 10.0);
        let sol = solve_exact(&a, &b, 16).unwrap();
        let best = transport_by_enumeration(a.weights(), b.weights(), &cost_matrix(&a, &b));
        worst = worst.max((sol.cost - best).abs());
    }
    worst
}

#[derive(Debug, Default, Clone, Copy)]
pub struct MetricReport {
    pub worst_asymmetry: f64,
    /// Largest `W(a,c) − W(a,b) − W(b,c)`.
    pub worst_triangle: f64,
}

pub fn metric_axioms(seed: u64, triples: usize) -> MetricReport {
    let mut rng = rng(seed);
    let mut out = MetricReport {
        worst_triangle: f64::NEG_INFINITY,
        ..Default::default()
    };
    let w = |x: &DiscreteDistribution<f64>, y: &DiscreteDistribution<f64>| solve_exact(x, y, 64).unwrap().distance();
    for _ in 0..triples {
        let d: Vec<_> = (0..3)
            .map(|_| {
                let k = rng.gen_range(1..=20);
                random_distribution(&mut rng, k, 10.0)
            })
            .collect();
        let (ab, ba) = (w(&d[0], &d[1]), w(&d[1], &d[0]));
        let (bc, ac) = (w(&d[1], &d[2]), w(&d[0], &d[2]));
        out.worst_asymmetry = out.worst_asymmetry.max((ab - ba).abs());
        out.worst_triangle = out.worst_triangle.max(ac - ab - bc);
    }
    out
}

/// Worst relative gap between the Sinkhorn and exact distances on 50×50
/// clouds at `ε = 1e-3·diam²`.
pub fn sinkhorn_accuracy(seed: u64, instances: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let a = random_distribution(&mut rng, 50, 100.0);
        let b = random_distribution(&mut rng, 50, 100.0);
        let pts: Vec<_> = a.atoms().iter().chain(b.atoms()).collect();
        let (mut lo, mut hi) = (Vector2::repeat(f64::MAX), Vector2::repeat(f64::MIN));
        for p in pts {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let eps = 1e-3 * (hi - lo).norm_squared();
        let exact = solve_exact(&a, &b, 64).unwrap().distance();
        let approx = wasserstein2_sinkhorn(&a, &b, eps, 5000, 1e-9).unwrap().distance();
        worst = worst.max((approx - exact).abs() / exact);
    }
    worst
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ReplayReport {
    pub events: usize,
    /// Largest `β_centralized − β_proposed`.
    pub worst_central_over_proposed: f64,
    /// Largest `β_proposed − β_original`.
    pub worst_proposed_over_original: f64,
    pub worst_negative_delta: f64,
}

/// Replays one random history of transports and pairwise shares under every
/// bookkeeping. Transports are drawn within the true (centralized) remaining
/// weights, so they are feasible for every ledger, and each agent's original
/// ledger is paired with its proposed ledger as the shadow progress.
pub fn replay_history(seed: u64) -> ReplayReport {
    let mut rng = rng(seed);
    let agents = rng.gen_range(2..=6);
    let n = rng.gen_range(3..=25);
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let beta0: Vec<f64> = raw.iter().map(|b| b / s).collect();
    let new_set = || -> Vec<CoverageLedger<f64>> {
        (0..agents)
            .map(|r| CoverageLedger::new(r, agents, beta0.clone()).unwrap())
            .collect()
    };
    let mut proposed = new_set();
    let mut original = new_set();
    let mut truth = vec![vec![0.0; n]; agents];
    let mut out = ReplayReport::default();
    let events = rng.gen_range(10..80);
    for _ in 0..events {
        if rng.gen_bool(0.6) {
            let r = rng.gen_range(0..agents);
            let central = centralized_remaining(&truth, &beta0).unwrap();
            let mut entries = Vec::new();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for &j in order.iter().take(rng.gen_range(1..=3)) {
                let g = central[j] * rng.gen_range(0.0..1.0);
                if g > 0.0 {
                    entries.push((j, g));
                }
            }
            let alpha = entries.iter().map(|e| e.1).sum();
            let plan = TransportPlan {
                entries,
                target: Vector2::zeros(),
                alpha,
            };
            for &(j, g) in &plan.entries {
                truth[r][j] += g;
            }
            proposed[r].record_own_progress(&plan).unwrap();
            original[r].record_own_progress(&plan).unwrap();
        } else {
            let r = rng.gen_range(0..agents);
            let s = (r + rng.gen_range(1..agents)) % agents;
            let (lo, hi) = (r.min(s), r.max(s));
            let (head, tail) = proposed.split_at_mut(hi);
            merge_proposed(&mut head[lo], &mut tail[0]).unwrap();
            let (head, tail) = original.split_at_mut(hi);
            merge_original(&mut head[lo], &mut tail[0]).unwrap();
        }
        out.events += 1;
        let central = centralized_remaining(&truth, &beta0).unwrap();
        for r in 0..agents {
            let p = proposed[r].beta();
            let o = original[r].beta();
            let delta = omission_delta(o, &proposed[r].progress_rows(), &beta0);
            for j in 0..n {
                out.worst_central_over_proposed = out.worst_central_over_proposed.max(central[j] - p[j]);
                out.worst_proposed_over_original = out.worst_proposed_over_original.max(p[j] - o[j]);
                out.worst_negative_delta = out.worst_negative_delta.max(-delta[j]);
            }
        }
    }
    out
}
