//! Discrete-time agent models.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::scalar::{lit, Real};
use crate::{Error, Result};

/// `x⁺ = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiModel<T: Real> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    c: DMatrix<T>,
}

impl<T: Real> LtiModel<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension {
                what: "A columns",
                expected: n,
                got: a.ncols(),
            });
        }
        if b.nrows() != n {
            return Err(Error::Dimension {
                what: "B rows",
                expected: n,
                got: b.nrows(),
            });
        }
        if c.ncols() != n {
            return Err(Error::Dimension {
                what: "C columns",
                expected: n,
                got: c.ncols(),
            });
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("system matrices must be finite".into()));
        }
        Ok(LtiModel { a, b, c })
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn output(&self, x: &DVector<T>) -> DVector<T> {
        &self.c * x
    }
}

pub fn step_lti<T: Real>(model: &LtiModel<T>, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
    check_len("state", model.state_dim(), x.len())?;
    check_len("input", model.input_dim(), u.len())?;
    Ok(&model.a * x + &model.b * u)
}

pub type DriftFn<T> = Arc<dyn Fn(&DVector<T>) -> DVector<T> + Send + Sync>;
pub type InputMatrixFn<T> = Arc<dyn Fn(&DVector<T>) -> DMatrix<T> + Send + Sync>;

/// Control-affine model `x⁺ = f(x) + g(x) u`, `y = C x`.
#[derive(Clone)]
pub struct NonlinearModel<T: Real> {
    n: usize,
    m: usize,
    drift: DriftFn<T>,
    input: InputMatrixFn<T>,
    c: DMatrix<T>,
}

impl<T: Real> fmt::Debug for NonlinearModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearModel")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("c", &self.c)
            .finish_non_exhaustive()
    }
}

impl<T: Real> NonlinearModel<T> {
    pub fn new(n: usize, m: usize, drift: DriftFn<T>, input: InputMatrixFn<T>, c: DMatrix<T>) -> Result<Self> {
        if c.ncols() != n {
            return Err(Error::Dimension {
                what: "C columns",
                expected: n,
                got: c.ncols(),
            });
        }
        Ok(NonlinearModel {
            n,
            m,
            drift,
            input,
            c,
        })
    }

    /// Wraps an LTI model as `f(x) = A x`, `g(x) = B`.
    pub fn from_lti(model: &LtiModel<T>) -> Self {
        let a = model.a.clone();
        let b = model.b.clone();
        NonlinearModel {
            n: model.state_dim(),
            m: model.input_dim(),
            drift: Arc::new(move |x| &a * x),
            input: Arc::new(move |_| b.clone()),
            c: model.c.clone(),
        }
    }

    /// Unicycle with state `(p_x, p_y, θ)` and input `(v, ω)`.
    pub fn unicycle(dt: T) -> Self {
        let c = DMatrix::from_row_slice(
            2,
            3,
            &[T::one(), T::zero(), T::zero(), T::zero(), T::one(), T::zero()],
        );
        NonlinearModel {
            n: 3,
            m: 2,
            drift: Arc::new(|x| x.clone()),
            input: Arc::new(move |x| {
                let th = x[2];
                DMatrix::from_row_slice(
                    3,
                    2,
                    &[
                        dt * th.cos(),
                        T::zero(),
                        dt * th.sin(),
                        T::zero(),
                        T::zero(),
                        dt,
                    ],
                )
            }),
            c,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }

    pub fn drift(&self, x: &DVector<T>) -> DVector<T> {
        (self.drift)(x)
    }

    pub fn input_matrix(&self, x: &DVector<T>) -> DMatrix<T> {
        (self.input)(x)
    }

    pub fn output(&self, x: &DVector<T>) -> DVector<T> {
        &self.c * x
    }
}

pub fn step_nonlinear<T: Real>(
    model: &NonlinearModel<T>,
    x: &DVector<T>,
    u: &DVector<T>,
) -> Result<DVector<T>> {
    check_len("state", model.n, x.len())?;
    check_len("input", model.m, u.len())?;
    let f = model.drift(x);
    let g = model.input_matrix(x);
    check_len("drift output", model.n, f.len())?;
    if g.shape() != (model.n, model.m) {
        return Err(Error::Contract(format!(
            "input matrix shape {:?}, expected {:?}",
            g.shape(),
            (model.n, model.m)
        )));
    }
    Ok(f + g * u)
}

#[derive(Debug, Clone)]
pub enum Model<T: Real> {
    Lti(LtiModel<T>),
    Nonlinear(NonlinearModel<T>),
}

impl<T: Real> Model<T> {
    pub fn state_dim(&self) -> usize {
        match self {
            Model::Lti(m) => m.state_dim(),
            Model::Nonlinear(m) => m.state_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Lti(m) => m.input_dim(),
            Model::Nonlinear(m) => m.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.c().nrows()
    }

    pub fn c(&self) -> &DMatrix<T> {
        match self {
            Model::Lti(m) => m.c(),
            Model::Nonlinear(m) => m.c(),
        }
    }

    pub fn step(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        match self {
            Model::Lti(m) => step_lti(m, x, u),
            Model::Nonlinear(m) => step_nonlinear(m, x, u),
        }
    }

    pub fn output(&self, x: &DVector<T>) -> DVector<T> {
        self.c() * x
    }

    pub fn as_lti(&self) -> Option<&LtiModel<T>> {
        match self {
            Model::Lti(m) => Some(m),
            Model::Nonlinear(_) => None,
        }
    }
}

/// Concrete plants with SI parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelKind {
    SingleIntegrator {
        dt: f64,
    },
    PlanarQuadrotor {
        gravity: f64,
        ixx: f64,
        iyy: f64,
        dt: f64,
    },
    Unicycle {
        dt: f64,
    },
}

impl ModelKind {
    pub fn state_dim(&self) -> usize {
        match self {
            ModelKind::SingleIntegrator { .. } => 2,
            ModelKind::PlanarQuadrotor { .. } => 8,
            ModelKind::Unicycle { .. } => 3,
        }
    }

    pub fn dt(&self) -> f64 {
        match *self {
            ModelKind::SingleIntegrator { dt }
            | ModelKind::PlanarQuadrotor { dt, .. }
            | ModelKind::Unicycle { dt } => dt,
        }
    }

    /// State indices of the output coordinates `(p_x, p_y)`.
    pub fn position_indices(&self) -> (usize, usize) {
        match self {
            ModelKind::SingleIntegrator { .. } | ModelKind::Unicycle { .. } => (0, 1),
            ModelKind::PlanarQuadrotor { .. } => (0, 4),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dt = self.dt();
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
        }
        if let ModelKind::PlanarQuadrotor { gravity, ixx, iyy, .. } = *self {
            if !(ixx > 0.0) || !(iyy > 0.0) {
                return Err(Error::Parameter(format!(
                    "moments of inertia must be positive, got ixx={ixx}, iyy={iyy}"
                )));
            }
            if !gravity.is_finite() {
                return Err(Error::Parameter("gravity must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Builds the model for `kind`.
///
/// The quadrotor uses increment coordinates per axis, state
/// `(p, dp, θ, dθ)`, with `dp⁺ = dp + g Δt² θ` and `dθ⁺ = dθ + Δt²/I τ`.
pub fn build_model<T: Real>(kind: &ModelKind) -> Result<Model<T>> {
    kind.validate()?;
    Ok(match *kind {
        ModelKind::SingleIntegrator { .. } => {
            let eye = DMatrix::<T>::identity(2, 2);
            Model::Lti(LtiModel::new(eye.clone(), eye.clone(), eye)?)
        }
        ModelKind::PlanarQuadrotor {
            gravity,
            ixx,
            iyy,
            dt,
        } => {
            let n = 8;
            let mut a = DMatrix::<T>::zeros(n, n);
            let mut b = DMatrix::<T>::zeros(n, 2);
            let coupling: T = lit(gravity * dt * dt);
            for (axis, inertia) in [(0usize, ixx), (1usize, iyy)] {
                let o = 4 * axis;
                for i in 0..4 {
                    a[(o + i, o + i)] = T::one();
                }
                a[(o, o + 1)] = T::one();
                a[(o + 1, o + 2)] = coupling;
                a[(o + 2, o + 3)] = T::one();
                b[(o + 3, axis)] = lit(dt * dt / inertia);
            }
            let mut c = DMatrix::<T>::zeros(2, n);
            c[(0, 0)] = T::one();
            c[(1, 4)] = T::one();
            Model::Lti(LtiModel::new(a, b, c)?)
        }
        ModelKind::Unicycle { dt } => Model::Nonlinear(NonlinearModel::unicycle(lit(dt))),
    })
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
