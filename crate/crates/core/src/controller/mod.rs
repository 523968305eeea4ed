//! Stage A: local sample selection and the analytic optimal input.

mod kkt;
mod selection;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, Vector2};

pub use kkt::{
    assemble_kkt, augmented_state_penalty, invert_e12, invert_structured, kkt_residual, solve_structured,
    KktSolution, KktSystem, StructuredInverse,
};
pub use selection::{select_local_samples, wne_distance, LocalSelection};

use crate::dynamics::{LtiModel, Model, NonlinearModel};
use crate::scalar::{lit, Real};
use crate::{Error, Result};

/// Penalties, horizon and optional input bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig<T: Real> {
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub horizon: usize,
    pub u_max: Option<T>,
}

impl<T: Real> ControllerConfig<T> {
    pub fn new(q: DMatrix<T>, r: DMatrix<T>, horizon: usize, u_max: Option<T>) -> Result<Self> {
        let cfg = ControllerConfig { q, r, horizon, u_max };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_diagonals(q_diag: &[T], r_diag: &[T], horizon: usize, u_max: Option<T>) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(q_diag)),
            DMatrix::from_diagonal(&DVector::from_column_slice(r_diag)),
            horizon,
            u_max,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Parameter("horizon T must be at least 1".into()));
        }
        if let Some(u) = self.u_max {
            if !(u > T::zero()) || !u.is_finite() {
                return Err(Error::Parameter(format!("u_max must be positive and finite, got {u}")));
            }
        }
        check_symmetric("Q", &self.q)?;
        check_symmetric("R", &self.r)?;
        let tol = lit::<T>(1e-12);
        if self.q.nrows() > 0 {
            let min_q = SymmetricEigen::new(self.q.clone()).eigenvalues.min();
            let scale = self.q.amax().max(T::one());
            if min_q < -tol * scale {
                return Err(Error::Parameter(format!(
                    "Q must be positive semidefinite (smallest eigenvalue {min_q})"
                )));
            }
        }
        if self.r.nrows() == 0 || Cholesky::new(self.r.clone()).is_none() {
            return Err(Error::Parameter("R must be positive definite".into()));
        }
        Ok(())
    }

    pub fn check_dims(&self, n: usize, m: usize) -> Result<()> {
        if self.q.nrows() != n {
            return Err(Error::Dimension {
                what: "Q",
                expected: n,
                got: self.q.nrows(),
            });
        }
        if self.r.nrows() != m {
            return Err(Error::Dimension {
                what: "R",
                expected: m,
                got: self.r.nrows(),
            });
        }
        Ok(())
    }

    /// Componentwise clamp to `±u_max`, if configured.
    pub fn saturate(&self, mut u: DVector<T>) -> DVector<T> {
        if let Some(lim) = self.u_max {
            for v in u.iter_mut() {
                *v = v.max(-lim).min(lim);
            }
        }
        u
    }
}

fn check_symmetric<T: Real>(name: &str, m: &DMatrix<T>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Parameter(format!("{name} must be square, got {:?}", m.shape())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("{name} has non-finite entries")));
    }
    let scale = m.amax().max(T::one());
    if (m - m.transpose()).amax() > lit::<T>(1e-12) * scale {
        return Err(Error::Parameter(format!("{name} must be symmetric")));
    }
    Ok(())
}

/// Full horizon solution of the LTI problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiPlan<T: Real> {
    pub solution: KktSolution<T>,
    /// Relative KKT residual of `solution`.
    pub residual: T,
}

impl<T: Real> LtiPlan<T> {
    /// The unsaturated first input `u^k`.
    pub fn first_input(&self, m: usize) -> DVector<T> {
        self.solution.inputs.rows(0, m).into_owned()
    }
}

/// Solves the horizon problem and recovers inputs, states and costates.
pub fn plan_lti<T: Real>(
    model: &LtiModel<T>,
    config: &ControllerConfig<T>,
    selection: &LocalSelection<T>,
    x: &DVector<T>,
) -> Result<LtiPlan<T>> {
    let kkt = assemble_kkt(model, config, selection, x)?;
    let inv = invert_structured(&kkt)?;
    let solution = solve_structured(&kkt, &inv);
    let residual = kkt_residual(&kkt, &solution);
    Ok(LtiPlan { solution, residual })
}

/// Optimal first input for an LTI agent, clamped to `u_max` when configured.
pub fn optimal_control_lti<T: Real>(
    model: &LtiModel<T>,
    config: &ControllerConfig<T>,
    selection: &LocalSelection<T>,
    x: &DVector<T>,
) -> Result<DVector<T>> {
    let plan = plan_lti(model, config, selection, x)?;
    Ok(config.saturate(plan.first_input(model.input_dim())))
}

/// Single-step optimal input `K(γ̄Cᵀq̄ − Q̄f(x))` for a control-affine agent.
/// The configured horizon is not used.
pub fn optimal_control_nonlinear<T: Real>(
    model: &NonlinearModel<T>,
    config: &ControllerConfig<T>,
    selection: &LocalSelection<T>,
    x: &DVector<T>,
) -> Result<DVector<T>> {
    let n = model.state_dim();
    let m = model.input_dim();
    config.check_dims(n, m)?;
    if x.len() != n {
        return Err(Error::Dimension {
            what: "state",
            expected: n,
            got: x.len(),
        });
    }
    let c = model.c();
    let gamma_sum = selection.gamma_sum;
    let q_bar = augmented_state_penalty(c, &config.q, gamma_sum);
    let g = model.input_matrix(x);
    let f = model.drift(x);
    if g.shape() != (n, m) || f.len() != n {
        return Err(Error::Contract("drift or input matrix has the wrong shape".into()));
    }
    let lhs = &config.r + g.transpose() * &q_bar * &g;
    let target = c.transpose() * centroid_vec(&selection.centroid) * gamma_sum - &q_bar * f;
    let rhs = g.transpose() * target;
    let chol = Cholesky::new(symmetrized(&lhs)).ok_or(Error::Conditioning {
        condition: f64::INFINITY,
    })?;
    Ok(config.saturate(chol.solve(&rhs)))
}

/// Optimal input for either model family.
pub fn optimal_control<T: Real>(
    model: &Model<T>,
    config: &ControllerConfig<T>,
    selection: &LocalSelection<T>,
    x: &DVector<T>,
) -> Result<DVector<T>> {
    match model {
        Model::Lti(m) => optimal_control_lti(m, config, selection, x),
        Model::Nonlinear(m) => optimal_control_nonlinear(m, config, selection, x),
    }
}

/// Precomputed first-input law `u = Kq q̄ + Kx x` for a fixed `Σγ`.
///
/// The KKT matrix depends on the selection only through `Σγ`, so one
/// factorization serves every step that plans against the same mass.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiGains<T: Real> {
    pub kq: DMatrix<T>,
    pub kx: DMatrix<T>,
    pub gamma_sum: T,
}

impl<T: Real> LtiGains<T> {
    pub fn new(model: &LtiModel<T>, config: &ControllerConfig<T>, gamma_sum: T) -> Result<Self> {
        let n = model.state_dim();
        let m = model.input_dim();
        config.check_dims(n, m)?;
        let t = config.horizon;
        let q_bar = augmented_state_penalty(model.c(), &config.q, gamma_sum);
        let kkt = KktSystem::from_blocks(
            model.a().clone(),
            model.b().clone(),
            q_bar,
            config.r.clone(),
            t,
            DVector::zeros(n * t),
            DVector::zeros(n * t),
        )?;
        let inv = invert_structured(&kkt)?;
        // First m rows of X13ᵀ, summed over the T repeated F1 blocks.
        let x13t = inv.x13.transpose();
        let mut acc = DMatrix::zeros(m, n);
        for i in 0..t {
            acc += x13t.view((0, i * n), (m, n));
        }
        let kq = acc * model.c().transpose() * gamma_sum;
        let kx = -(inv.x23.transpose().view((0, 0), (m, n)) * model.a());
        Ok(LtiGains { kq, kx, gamma_sum })
    }

    /// Unsaturated first input.
    pub fn input(&self, centroid: &Vector2<T>, x: &DVector<T>) -> DVector<T> {
        &self.kq * centroid_vec(centroid) + &self.kx * x
    }
}

/// Rolls `model` forward from `x0` under `inputs`, returning `x0` followed by
/// every successor state.
pub fn rollout<T: Real>(model: &Model<T>, x0: &DVector<T>, inputs: &[DVector<T>]) -> Result<Vec<DVector<T>>> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.clone());
    for u in inputs {
        let next = model.step(states.last().expect("nonempty"), u)?;
        states.push(next);
    }
    Ok(states)
}

/// Horizon cost with the local set frozen:
/// `Σ_{i=0}^{T} [½ Σ_j γ_j ‖C xⁱ − q_j‖² + ½ xⁱᵀ Q xⁱ] + Σ_{i=0}^{T-1} ½ uⁱᵀ R uⁱ`.
/// The `i = T` state term is the terminal cost.
pub fn stage_cost<T: Real>(
    selection: &LocalSelection<T>,
    config: &ControllerConfig<T>,
    states: &[DVector<T>],
    inputs: &[DVector<T>],
    model: &Model<T>,
) -> Result<T> {
    if states.len() != inputs.len() + 1 {
        return Err(Error::Contract(format!(
            "trajectory has {} states for {} inputs",
            states.len(),
            inputs.len()
        )));
    }
    config.check_dims(model.state_dim(), model.input_dim())?;
    for (i, u) in inputs.iter().enumerate() {
        let next = model.step(&states[i], u)?;
        let scale = next.amax().max(T::one());
        if (&next - &states[i + 1]).amax() > lit::<T>(1e-9) * scale {
            return Err(Error::Contract(format!("state {} does not follow from the dynamics", i + 1)));
        }
    }
    let half = lit::<T>(0.5);
    let mut j = T::zero();
    for x in states {
        let y = model.output(x);
        let y = Vector2::new(y[0], y[1]);
        for (g, q) in selection.gamma.iter().zip(&selection.positions) {
            j += half * *g * (y - q).norm_squared();
        }
        j += half * x.dot(&(&config.q * x));
    }
    for u in inputs {
        j += half * u.dot(&(&config.r * u));
    }
    Ok(j)
}

fn centroid_vec<T: Real>(c: &Vector2<T>) -> DVector<T> {
    DVector::from_column_slice(c.as_slice())
}

fn symmetrized<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}
