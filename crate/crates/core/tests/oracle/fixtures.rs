//! Scenario builders for the desk-scale runs.

use d2oc::controller::ControllerConfig;
use d2oc::density::{Bounds, DensitySpec, GaussianComponent};
use d2oc::dynamics::ModelKind;
use d2oc::sharing::SharingMethod;
use d2oc::sim::{AgentSpec, Scenario, SimResult, Termination};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-component mixture on a square of side `side`, placed as in the
/// 100 m integrator study and scaled with the domain.
pub fn two_bumps(side: f64) -> (Bounds, DensitySpec) {
    let s = side / 100.0;
    let bounds = Bounds::new(0.0, side, 0.0, side).unwrap();
    let comp = |mean: [f64; 2], cov: [[f64; 2]; 2]| GaussianComponent {
        mean: [mean[0] * s, mean[1] * s],
        cov: [[cov[0][0] * s * s, cov[0][1] * s * s], [cov[1][0] * s * s, cov[1][1] * s * s]],
        weight: 0.5,
    };
    let density = DensitySpec::mixture(
        bounds,
        vec![
            comp([30.0, 30.0], [[150.0, 0.0], [0.0, 150.0]]),
            comp([70.0, 65.0], [[200.0, 50.0], [50.0, 120.0]]),
        ],
    )
    .unwrap();
    (bounds, density)
}

fn random_positions(bounds: &Bounds, count: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    (0..count)
        .map(|_| (rng.gen_range(bounds.xmin..bounds.xmax), rng.gen_range(bounds.ymin..bounds.ymax)))
        .collect()
}

/// Six single integrators at `Δt = 0.1`, `T = 15`, `u_max = 10`, on the
/// 100 m domain.
pub fn integrators(steps: usize, seed: u64, method: SharingMethod) -> Scenario {
    let (bounds, density) = two_bumps(100.0);
    let agents = random_positions(&bounds, 6, seed)
        .into_iter()
        .map(|(x, y)| AgentSpec {
            model: ModelKind::SingleIntegrator { dt: 0.1 },
            x0: vec![x, y],
            steps,
        })
        .collect();
    Scenario {
        id: "integrators".into(),
        bounds,
        density,
        samples: 300,
        seed,
        agents,
        dt: 0.1,
        controller: ControllerConfig::from_diagonals(&[0.0, 0.0], &[1.0, 1.0], 15, Some(10.0)).unwrap(),
        r_comm: 25.0,
        method,
        termination: Termination::Budget,
    }
}

pub const QUAD_Q_DIAG: [f64; 8] = [0.0, 1e-5, 1e-3, 1e-3, 0.0, 1e-5, 1e-3, 1e-3];

/// Planar quadrotors on a square of side `side` that step until the shared
/// reference is used up (capped at `cap` steps each).
#[allow(clippy::too_many_arguments)]
pub fn quadrotors(
    agents: usize,
    steps: usize,
    cap: usize,
    side: f64,
    samples: usize,
    seed: u64,
    r_comm: f64,
    method: SharingMethod,
) -> Scenario {
    let (bounds, density) = two_bumps(side);
    let agents = random_positions(&bounds, agents, seed)
        .into_iter()
        .map(|(x, y)| AgentSpec {
            model: ModelKind::PlanarQuadrotor {
                gravity: 9.81,
                ixx: 0.0075,
                iyy: 0.0075,
                dt: 0.1,
            },
            x0: vec![x, 0.0, 0.0, 0.0, y, 0.0, 0.0, 0.0],
            steps,
        })
        .collect();
    Scenario {
        id: "quadrotors".into(),
        bounds,
        density,
        samples,
        seed,
        agents,
        dt: 0.1,
        controller: ControllerConfig::from_diagonals(&QUAD_Q_DIAG, &[1.0, 1.0], 15, None).unwrap(),
        r_comm,
        method,
        termination: Termination::Exhaustion { max_steps: cap },
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Conservation {
    /// Largest `|Σγ − α|` over all recorded steps.
    pub worst_step_mass: f64,
    /// Smallest remaining weight in any final ledger.
    pub min_beta: f64,
}

pub fn conservation(result: &SimResult) -> Conservation {
    let mut out = Conservation {
        min_beta: f64::INFINITY,
        ..Default::default()
    };
    for p in &result.plans {
        let mass: f64 = p.entries.iter().map(|e| e.1).sum();
        out.worst_step_mass = out.worst_step_mass.max((mass - result.alpha).abs());
    }
    for led in &result.final_ledgers {
        for &b in led.beta() {
            out.min_beta = out.min_beta.min(b);
        }
    }
    out
}
