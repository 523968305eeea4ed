//! Finite-horizon KKT system and its closed-form block inverse.
//!
//! Unknowns are stacked as `(x̄, λ̄, ū)` with `x̄ = (x^{k+1}, …, x^{k+T})`,
//! `λ̄` the matching costates and `ū = (u^k, …, u^{k+T-1})`. The system is
//!
//! ```text
//! [ E11   E12  0   ] [x̄]   [F1]
//! [ E12ᵀ  0    E23 ] [λ̄] = [F2]
//! [ 0     E23ᵀ E33 ] [ū]   [0 ]
//! ```
//!
//! with `E11 = diag(Q̄,…,Q̄)`, `E12` upper block-bidiagonal (`−I` on the
//! diagonal, `Aᵀ` above it), `E23 = diag(B,…,B)` and `E33 = diag(R,…,R)`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::{ControllerConfig, LocalSelection};
use crate::dynamics::LtiModel;
use crate::scalar::{to_f64, Real};
use crate::{Error, Result};

/// Structured KKT system for one planning step.
#[derive(Debug, Clone, PartialEq)]
pub struct KktSystem<T: Real> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    q_bar: DMatrix<T>,
    r: DMatrix<T>,
    horizon: usize,
    f1: DVector<T>,
    f2: DVector<T>,
}

impl<T: Real> KktSystem<T> {
    /// Builds a system from raw blocks. `q_bar` must be symmetric PSD and `r`
    /// symmetric PD for the inverse to exist.
    pub fn from_blocks(
        a: DMatrix<T>,
        b: DMatrix<T>,
        q_bar: DMatrix<T>,
        r: DMatrix<T>,
        horizon: usize,
        f1: DVector<T>,
        f2: DVector<T>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let checks = [
            ("A columns", n, a.ncols()),
            ("B rows", n, b.nrows()),
            ("Q̄ rows", n, q_bar.nrows()),
            ("Q̄ columns", n, q_bar.ncols()),
            ("R rows", m, r.nrows()),
            ("R columns", m, r.ncols()),
            ("F1 length", n * horizon, f1.len()),
            ("F2 length", n * horizon, f2.len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::Dimension { what, expected, got });
            }
        }
        if horizon == 0 {
            return Err(Error::Contract("horizon must be at least 1".into()));
        }
        Ok(KktSystem {
            a,
            b,
            q_bar,
            r,
            horizon,
            f1,
            f2,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn q_bar(&self) -> &DMatrix<T> {
        &self.q_bar
    }

    pub fn f1(&self) -> &DVector<T> {
        &self.f1
    }

    pub fn f2(&self) -> &DVector<T> {
        &self.f2
    }

    pub fn e11(&self) -> DMatrix<T> {
        block_diag(&self.q_bar, self.horizon)
    }

    pub fn e12(&self) -> DMatrix<T> {
        let n = self.state_dim();
        let t = self.horizon;
        let at = self.a.transpose();
        let mut e = DMatrix::zeros(n * t, n * t);
        for i in 0..t {
            for d in 0..n {
                e[(i * n + d, i * n + d)] = -T::one();
            }
            if i + 1 < t {
                e.view_mut((i * n, (i + 1) * n), (n, n)).copy_from(&at);
            }
        }
        e
    }

    pub fn e23(&self) -> DMatrix<T> {
        block_diag(&self.b, self.horizon)
    }

    pub fn e33(&self) -> DMatrix<T> {
        block_diag(&self.r, self.horizon)
    }

    /// Dense `E`, for verification.
    pub fn dense(&self) -> DMatrix<T> {
        let nt = self.state_dim() * self.horizon;
        let mt = self.input_dim() * self.horizon;
        let size = 2 * nt + mt;
        let mut e = DMatrix::zeros(size, size);
        let e12 = self.e12();
        let e23 = self.e23();
        e.view_mut((0, 0), (nt, nt)).copy_from(&self.e11());
        e.view_mut((0, nt), (nt, nt)).copy_from(&e12);
        e.view_mut((nt, 0), (nt, nt)).copy_from(&e12.transpose());
        e.view_mut((nt, 2 * nt), (nt, mt)).copy_from(&e23);
        e.view_mut((2 * nt, nt), (mt, nt)).copy_from(&e23.transpose());
        e.view_mut((2 * nt, 2 * nt), (mt, mt)).copy_from(&self.e33());
        e
    }

    /// Stacked right-hand side `(F1, F2, 0)`.
    pub fn rhs(&self) -> DVector<T> {
        let nt = self.state_dim() * self.horizon;
        let mt = self.input_dim() * self.horizon;
        let mut v = DVector::zeros(2 * nt + mt);
        v.rows_mut(0, nt).copy_from(&self.f1);
        v.rows_mut(nt, nt).copy_from(&self.f2);
        v
    }
}

/// Q̄ = (Σγ) CᵀC + Q.
pub fn augmented_state_penalty<T: Real>(c: &DMatrix<T>, q: &DMatrix<T>, gamma_sum: T) -> DMatrix<T> {
    c.transpose() * c * gamma_sum + q
}

/// Assembles the KKT system for the current state and local selection.
pub fn assemble_kkt<T: Real>(
    model: &LtiModel<T>,
    config: &ControllerConfig<T>,
    selection: &LocalSelection<T>,
    x: &DVector<T>,
) -> Result<KktSystem<T>> {
    let n = model.state_dim();
    config.check_dims(n, model.input_dim())?;
    if x.len() != n {
        return Err(Error::Dimension {
            what: "state",
            expected: n,
            got: x.len(),
        });
    }
    if model.output_dim() != 2 {
        return Err(Error::Dimension {
            what: "output",
            expected: 2,
            got: model.output_dim(),
        });
    }
    let t = config.horizon;
    let c = model.c();
    let gamma_sum = selection.gamma_sum;
    let q_bar = augmented_state_penalty(c, &config.q, gamma_sum);
    let target = c.transpose() * DVector::from_column_slice(selection.centroid.as_slice()) * gamma_sum;
    let mut f1 = DVector::zeros(n * t);
    for i in 0..t {
        f1.rows_mut(i * n, n).copy_from(&target);
    }
    let mut f2 = DVector::zeros(n * t);
    f2.rows_mut(0, n).copy_from(&(-(model.a() * x)));
    KktSystem::from_blocks(
        model.a().clone(),
        model.b().clone(),
        q_bar,
        config.r.clone(),
        t,
        f1,
        f2,
    )
}

/// Blocks of `E⁻¹` in the layout
///
/// ```text
/// [ X11   X12   X13 ]
/// [ X12ᵀ  X22   X23 ]
/// [ X13ᵀ  X23ᵀ  X33 ]
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredInverse<T: Real> {
    pub x11: DMatrix<T>,
    pub x12: DMatrix<T>,
    pub x13: DMatrix<T>,
    pub x22: DMatrix<T>,
    pub x23: DMatrix<T>,
    pub x33: DMatrix<T>,
}

impl<T: Real> StructuredInverse<T> {
    /// Reassembles the dense inverse.
    pub fn dense(&self) -> DMatrix<T> {
        let nt = self.x11.nrows();
        let mt = self.x33.nrows();
        let size = 2 * nt + mt;
        let mut m = DMatrix::zeros(size, size);
        m.view_mut((0, 0), (nt, nt)).copy_from(&self.x11);
        m.view_mut((0, nt), (nt, nt)).copy_from(&self.x12);
        m.view_mut((0, 2 * nt), (nt, mt)).copy_from(&self.x13);
        m.view_mut((nt, 0), (nt, nt)).copy_from(&self.x12.transpose());
        m.view_mut((nt, nt), (nt, nt)).copy_from(&self.x22);
        m.view_mut((nt, 2 * nt), (nt, mt)).copy_from(&self.x23);
        m.view_mut((2 * nt, 0), (mt, nt)).copy_from(&self.x13.transpose());
        m.view_mut((2 * nt, nt), (mt, nt)).copy_from(&self.x23.transpose());
        m.view_mut((2 * nt, 2 * nt), (mt, mt)).copy_from(&self.x33);
        m
    }
}

/// `E12⁻¹` by block back-substitution on `E12 G = I`.
///
/// Block row `T` gives `G_T = −e_T`; for `i < T`, `G_i = Aᵀ G_{i+1} − e_i`,
/// so `G` is upper block-triangular with `G_{ij} = −(Aᵀ)^{j−i}`.
pub fn invert_e12<T: Real>(a: &DMatrix<T>, horizon: usize) -> DMatrix<T> {
    let n = a.nrows();
    let nt = n * horizon;
    let at = a.transpose();
    let mut g = DMatrix::zeros(nt, nt);
    for i in (0..horizon).rev() {
        if i + 1 < horizon {
            // Only columns j > i of the next block row are nonzero.
            let next = g.view(((i + 1) * n, (i + 1) * n), (n, nt - (i + 1) * n)).clone_owned();
            g.view_mut((i * n, (i + 1) * n), (n, nt - (i + 1) * n))
                .copy_from(&(&at * next));
        }
        for d in 0..n {
            g[(i * n + d, i * n + d)] = -T::one();
        }
    }
    g
}

/// Closed-form block inverse of the KKT matrix, built from `E12⁻¹` and the
/// Schur pivot `(E33 + E23ᵀ H E23)` with `H = E12⁻¹ E11 E12⁻ᵀ`; the dense
/// `E` is never factored.
pub fn invert_structured<T: Real>(kkt: &KktSystem<T>) -> Result<StructuredInverse<T>> {
    let n = kkt.state_dim();
    let m = kkt.input_dim();
    let t = kkt.horizon;
    let g = invert_e12(&kkt.a, t);
    let gt = g.transpose();

    // H = G E11 Gᵀ, using the block-diagonal E11.
    let g_e11 = mul_block_diag_right(&g, &kkt.q_bar, t);
    let h = &g_e11 * &gt;
    // H E23 with the block-diagonal E23.
    let h_e23 = mul_block_diag_right(&h, &kkt.b, t);
    let pivot = mul_block_diag_left_transposed(&kkt.b, &h_e23, t) + block_diag(&kkt.r, t);
    let pivot = symmetrize(&pivot);

    let x33 = invert_spd(&pivot)?;
    let gt_e23 = mul_block_diag_right(&gt, &kkt.b, t);
    let x13 = -(&gt_e23 * &x33);
    let x23 = &h_e23 * &x33;
    // E23ᵀ G and E23ᵀ H.
    let e23t_g = transpose_then_block(&kkt.b, &g, t);
    let e23t_h = h_e23.transpose();
    let x11 = -(&x13 * &e23t_g);
    let x12 = &gt + &x13 * &e23t_h;
    let x22 = &x23 * &e23t_h - &h;
    debug_assert_eq!(x33.nrows(), m * t);
    debug_assert_eq!(x11.nrows(), n * t);
    Ok(StructuredInverse {
        x11,
        x12,
        x13,
        x22,
        x23,
        x33,
    })
}

/// Full primal-dual solution of the KKT system.
#[derive(Debug, Clone, PartialEq)]
pub struct KktSolution<T: Real> {
    pub states: DVector<T>,
    pub costates: DVector<T>,
    pub inputs: DVector<T>,
}

impl<T: Real> KktSolution<T> {
    pub fn stacked(&self) -> DVector<T> {
        let a = self.states.len();
        let b = self.costates.len();
        let c = self.inputs.len();
        let mut v = DVector::zeros(a + b + c);
        v.rows_mut(0, a).copy_from(&self.states);
        v.rows_mut(a, b).copy_from(&self.costates);
        v.rows_mut(a + b, c).copy_from(&self.inputs);
        v
    }
}

pub fn solve_structured<T: Real>(kkt: &KktSystem<T>, inv: &StructuredInverse<T>) -> KktSolution<T> {
    let (f1, f2) = (&kkt.f1, &kkt.f2);
    KktSolution {
        states: &inv.x11 * f1 + &inv.x12 * f2,
        costates: inv.x12.tr_mul(f1) + &inv.x22 * f2,
        inputs: inv.x13.tr_mul(f1) + inv.x23.tr_mul(f2),
    }
}

/// `‖E s − rhs‖ / ‖rhs‖`, evaluated with the structured blocks.
pub fn kkt_residual<T: Real>(kkt: &KktSystem<T>, sol: &KktSolution<T>) -> T {
    let t = kkt.horizon;
    let e12 = kkt.e12();
    let r1 = mul_block_diag_left(&kkt.q_bar, &sol.states, t) + &e12 * &sol.costates - &kkt.f1;
    let r2 = e12.tr_mul(&sol.states) + mul_block_diag_left(&kkt.b, &sol.inputs, t) - &kkt.f2;
    let r3 = block_diag(&kkt.b, t).tr_mul(&sol.costates) + mul_block_diag_left(&kkt.r, &sol.inputs, t);
    let num = (r1.norm_squared() + r2.norm_squared() + r3.norm_squared()).sqrt();
    let den = (kkt.f1.norm_squared() + kkt.f2.norm_squared()).sqrt();
    if den > T::zero() {
        num / den
    } else {
        num
    }
}

pub(crate) fn block_diag<T: Real>(block: &DMatrix<T>, count: usize) -> DMatrix<T> {
    let (r, c) = block.shape();
    let mut m = DMatrix::zeros(r * count, c * count);
    for i in 0..count {
        m.view_mut((i * r, i * c), (r, c)).copy_from(block);
    }
    m
}

/// `M · diag(D, …, D)`.
fn mul_block_diag_right<T: Real>(m: &DMatrix<T>, d: &DMatrix<T>, count: usize) -> DMatrix<T> {
    let (dr, dc) = d.shape();
    let mut out = DMatrix::zeros(m.nrows(), dc * count);
    for i in 0..count {
        let panel = m.columns(i * dr, dr) * d;
        out.columns_mut(i * dc, dc).copy_from(&panel);
    }
    out
}

/// `diag(D, …, D) · v` for a vector.
fn mul_block_diag_left<T: Real>(d: &DMatrix<T>, v: &DVector<T>, count: usize) -> DVector<T> {
    let (dr, dc) = d.shape();
    let mut out = DVector::zeros(dr * count);
    for i in 0..count {
        out.rows_mut(i * dr, dr).copy_from(&(d * v.rows(i * dc, dc)));
    }
    out
}

/// `diag(D, …, D)ᵀ · M`.
fn mul_block_diag_left_transposed<T: Real>(d: &DMatrix<T>, m: &DMatrix<T>, count: usize) -> DMatrix<T> {
    let (dr, dc) = d.shape();
    let mut out = DMatrix::zeros(dc * count, m.ncols());
    for i in 0..count {
        let panel = d.tr_mul(&m.rows(i * dr, dr));
        out.rows_mut(i * dc, dc).copy_from(&panel);
    }
    out
}

fn transpose_then_block<T: Real>(d: &DMatrix<T>, m: &DMatrix<T>, count: usize) -> DMatrix<T> {
    mul_block_diag_left_transposed(d, m, count)
}

fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * nalgebra::convert::<f64, T>(0.5)
}

fn invert_spd<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    match Cholesky::new(m.clone()) {
        Some(chol) => {
            let inv = chol.inverse();
            if inv.iter().all(|v| v.is_finite()) {
                Ok(inv)
            } else {
                Err(Error::Conditioning {
                    condition: condition_estimate(m),
                })
            }
        }
        None => Err(Error::Conditioning {
            condition: condition_estimate(m),
        }),
    }
}

fn condition_estimate<T: Real>(m: &DMatrix<T>) -> f64 {
    if m.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let eig = SymmetricEigen::new(m.clone());
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| to_f64(v.abs())).collect();
    let max = abs.iter().cloned().fold(0.0, f64::max);
    let min = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}
