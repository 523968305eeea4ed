//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use d2oc::controller::{KktSystem, LocalSelection};
use d2oc::dynamics::LtiModel;
use nalgebra::{DMatrix, DVector, Vector2};
use rand::Rng;

pub mod checks;
pub mod fixtures;

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// `LLᵀ` with `L` of the given rank.
pub fn random_psd<R: Rng>(rng: &mut R, n: usize, rank: usize, scale: f64) -> DMatrix<f64> {
    let l = random_matrix(rng, n, rank, 1.0);
    let m = &l * l.transpose() * scale;
    (&m + m.transpose()) * 0.5
}

pub fn random_pd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    random_psd(rng, n, n, 1.0) + DMatrix::identity(n, n) * rng.gen_range(0.1..2.0)
}

/// Output matrix reading two state coordinates.
pub fn position_output(n: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(2, n);
    c[(0, 0)] = 1.0;
    c[(1, n / 2)] = 1.0;
    c
}

/// Random LTI model with `‖A‖₂ ≤ 1.05`. `kind` 0 is generic, 1 has a singular `A`, 2 has an
/// uncontrollable pair (`B` only reaches the first state).
pub fn random_lti<R: Rng>(rng: &mut R, n: usize, m: usize, kind: u8) -> LtiModel<f64> {
    let mut a = DMatrix::identity(n, n) + random_matrix(rng, n, n, 0.3);
    let norm = a.clone().svd(false, false).singular_values.max();
    a *= rng.gen_range(0.7..1.05) / norm;
    let mut b = random_matrix(rng, n, m, 1.0);
    match kind {
        1 => {
            for j in 0..n {
                a[(n - 1, j)] = 0.0;
            }
            let row = a.row(0).clone_owned();
            a.row_mut(1).copy_from(&row);
        }
        2 => {
            b = DMatrix::zeros(n, m);
            b[(0, 0)] = 1.0;
            for i in 1..n {
                a[(i, 0)] = 0.0;
            }
        }
        _ => {}
    }
    LtiModel::new(a, b, position_output(n)).unwrap()
}

pub fn random_selection<R: Rng>(rng: &mut R, k: usize, total: f64) -> LocalSelection<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let gamma = raw.iter().map(|g| g / s * total).collect();
    let positions = (0..k)
        .map(|_| Vector2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
        .collect();
    LocalSelection::from_parts((0..k).collect(), positions, gamma).unwrap()
}

/// Solves the assembled dense KKT system with a generic LU factorization.
pub fn dense_kkt_solve(kkt: &KktSystem<f64>) -> DVector<f64> {
    kkt.dense().lu().solve(&kkt.rhs()).expect("dense KKT matrix is singular")
}

pub fn rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn rel_diff_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Minimum of `Σ γ_j c_j` over `0 ≤ γ ≤ β, Σ γ = α` by enumerating every
/// vertex: all coordinates at a bound except at most one.
pub fn lp_vertex_minimum(beta: &[f64], cost: &[f64], alpha: f64) -> f64 {
    let n = beta.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        let full: f64 = (0..n).filter(|j| mask & (1 << j) != 0).map(|j| beta[j]).sum();
        let full_cost: f64 = (0..n).filter(|j| mask & (1 << j) != 0).map(|j| beta[j] * cost[j]).sum();
        let gap = alpha - full;
        if gap.abs() <= 1e-13 {
            best = best.min(full_cost);
        }
        for f in (0..n).filter(|j| mask & (1 << j) == 0) {
            if gap > 0.0 && gap <= beta[f] {
                best = best.min(full_cost + gap * cost[f]);
            }
        }
    }
    best
}

/// Optimal transport cost by enumerating every basis of the transportation
/// polytope: each `(m + n − 1)`-cell subset that forms a spanning tree has a
/// unique flow, and the optimum is the cheapest feasible one.
pub fn transport_by_enumeration(a: &[f64], b: &[f64], cost: &DMatrix<f64>) -> f64 {
    let (m, n) = (a.len(), b.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let k = m + n - 1;
    let mut best = f64::INFINITY;
    let mut pick = Vec::with_capacity(k);
    fn rec(
        start: usize,
        k: usize,
        cells: &[(usize, usize)],
        pick: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if pick.len() == k {
            visit(pick);
            return;
        }
        for c in start..cells.len() {
            if cells.len() - c < k - pick.len() {
                break;
            }
            pick.push(c);
            rec(c + 1, k, cells, pick, visit);
            pick.pop();
        }
    }
    let mut visit = |subset: &[usize]| {
        if let Some(flow) = tree_flow(a, b, &cells, subset) {
            if flow.iter().all(|&(_, f)| f >= -1e-12) {
                let c: f64 = flow.iter().map(|&(cell, f)| f * cost[(cells[cell].0, cells[cell].1)]).sum();
                best = best.min(c);
            }
        }
    };
    rec(0, k, &cells, &mut pick, &mut visit);
    best
}

/// Peels leaves of the cell graph; returns `None` unless the subset is a
/// spanning tree.
fn tree_flow(a: &[f64], b: &[f64], cells: &[(usize, usize)], subset: &[usize]) -> Option<Vec<(usize, f64)>> {
    let m = a.len();
    let mut bal: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut alive: Vec<usize> = subset.to_vec();
    let mut out = Vec::with_capacity(subset.len());
    while !alive.is_empty() {
        let mut degree = vec![0usize; bal.len()];
        for &c in &alive {
            degree[cells[c].0] += 1;
            degree[m + cells[c].1] += 1;
        }
        let pos = alive.iter().position(|&c| degree[cells[c].0] == 1 || degree[m + cells[c].1] == 1)?;
        let c = alive.swap_remove(pos);
        let (i, j) = (cells[c].0, m + cells[c].1);
        let f = if degree[i] == 1 { bal[i] } else { bal[j] };
        bal[i] -= f;
        bal[j] -= f;
        out.push((c, f));
    }
    if bal.iter().all(|v| v.abs() < 1e-12) {
        Some(out)
    } else {
        None
    }
}

/// Gradient descent with central-difference gradients and backtracking.
pub fn numerical_minimize<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], iters: usize) -> Vec<f64> {
    let mut x = x0.to_vec();
    let mut step = 1.0;
    let h = 1e-6;
    for _ in 0..iters {
        let fx = f(&x);
        let grad: Vec<f64> = (0..x.len())
            .map(|i| {
                let mut p = x.clone();
                let mut q = x.clone();
                p[i] += h;
                q[i] -= h;
                (f(&p) - f(&q)) / (2.0 * h)
            })
            .collect();
        let gn: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gn < 1e-12 {
            break;
        }
        let mut moved = false;
        while step > 1e-16 {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - step * gi).collect();
            if f(&trial) < fx - 0.25 * step * gn * gn {
                x = trial;
                step *= 2.0;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    x
}

/// Upper 0.999 quantile of the chi-square distribution by the
/// Wilson–Hilferty approximation.
pub fn chi_square_999(dof: usize) -> f64 {
    let k = dof as f64;
    let z = 3.090_232_306;
    let t = 1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt();
    k * t * t * t
}
