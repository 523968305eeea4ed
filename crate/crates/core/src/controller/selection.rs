//! Local sample-point selection by weight-normalized Euclidean distance.

use std::cmp::Ordering;

use nalgebra::Vector2;

use crate::scalar::{compensated_sum, mass_tol, to_f64, Real};
use crate::{Error, Result};

/// The local sample-points `S^k` an agent plans against at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSelection<T: Real> {
    /// Selected sample indices in wnE order.
    pub indices: Vec<usize>,
    /// Mass assigned to each selected index; all but the last equal the
    /// remaining weight of that sample.
    pub gamma: Vec<T>,
    /// Positions of the selected samples, aligned with `indices`.
    pub positions: Vec<Vector2<T>>,
    pub gamma_sum: T,
    /// `Σ γ_j q_j / Σ γ_j`.
    pub centroid: Vector2<T>,
}

impl<T: Real> LocalSelection<T> {
    /// Builds a selection from explicit `(index, position, γ)` triples.
    pub fn from_parts(indices: Vec<usize>, positions: Vec<Vector2<T>>, gamma: Vec<T>) -> Result<Self> {
        if indices.is_empty() || indices.len() != positions.len() || indices.len() != gamma.len() {
            return Err(Error::Contract(
                "selection needs equally many indices, positions and masses (at least one)".into(),
            ));
        }
        if gamma.iter().any(|g| !(*g > T::zero())) {
            return Err(Error::Contract("selection masses must be positive".into()));
        }
        let gamma_sum = compensated_sum(gamma.iter().copied());
        let mut centroid = Vector2::zeros();
        for (g, q) in gamma.iter().zip(&positions) {
            centroid += q * *g;
        }
        centroid /= gamma_sum;
        Ok(LocalSelection {
            indices,
            gamma,
            positions,
            gamma_sum,
            centroid,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// wnE distance `‖q − y‖ / β`.
#[inline]
pub fn wne_distance<T: Real>(q: &Vector2<T>, y: &Vector2<T>, beta: T) -> T {
    (q - y).norm() / beta
}

/// Selects the shortest wnE-ordered prefix of sample-points whose remaining
/// weight covers `alpha`. Samples with zero remaining weight are skipped and
/// ties are broken by ascending index.
pub fn select_local_samples<T: Real>(
    y: &Vector2<T>,
    beta: &[T],
    positions: &[Vector2<T>],
    alpha: T,
) -> Result<LocalSelection<T>> {
    if beta.len() != positions.len() {
        return Err(Error::Dimension {
            what: "remaining weights",
            expected: positions.len(),
            got: beta.len(),
        });
    }
    if !(alpha > T::zero()) {
        return Err(Error::Contract(format!(
            "agent-point weight must be positive, got {alpha}"
        )));
    }
    let available = compensated_sum(beta.iter().copied());
    if alpha > available + mass_tol() {
        return Err(Error::InsufficientMass {
            demanded: to_f64(alpha),
            available: to_f64(available),
        });
    }

    let mut ranked: Vec<(T, usize)> = beta
        .iter()
        .enumerate()
        .filter(|(_, b)| **b > T::zero())
        .map(|(j, b)| (wne_distance(&positions[j], y, *b), j))
        .collect();
    ranked.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));

    let mut indices = Vec::new();
    let mut gamma = Vec::new();
    let mut acc = T::zero();
    for &(_, j) in &ranked {
        let b = beta[j];
        indices.push(j);
        if acc + b >= alpha {
            gamma.push(alpha - acc);
            break;
        }
        gamma.push(b);
        acc += b;
    }
    let selected_positions = indices.iter().map(|&j| positions[j]).collect();
    LocalSelection::from_parts(indices, selected_positions, gamma)
}
