use crate::error::{Error, Result};

use super::{DensityField, PeriodicGrid, SignedMeasure};

const MASS_MISMATCH_TOL: f64 = 1e-10;

/// `h * min_c sum_j |F_j - c|` for the cumulative sums `F` of a zero-mass
/// signed measure; the minimizing constant is a median of `F`.
fn circular_cdf_norm(grid: PeriodicGrid, q: &[f64]) -> f64 {
    let mut cum = Vec::with_capacity(q.len());
    let mut acc = 0.0;
    for v in q {
        acc += v;
        cum.push(acc);
    }
    let mut sorted = cum.clone();
    let mid = sorted.len() / 2;
    let (_, median, _) = sorted.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let c = *median;
    grid.h() * cum.iter().map(|f| (f - c).abs()).sum::<f64>()
}

/// Exact Wasserstein-1 distance on the unit circle between two histograms.
pub fn wasserstein1(mu: &DensityField, nu: &DensityField) -> Result<f64> {
    if mu.grid() != nu.grid() {
        return Err(Error::GridMismatch(mu.grid().n(), nu.grid().n()));
    }
    let gap = mu.total_mass() - nu.total_mass();
    if gap.abs() > MASS_MISMATCH_TOL {
        return Err(Error::MassMismatch(gap));
    }
    let diff: Vec<f64> = mu
        .masses()
        .iter()
        .zip(nu.masses())
        .map(|(a, b)| a - b)
        .collect();
    Ok(circular_cdf_norm(mu.grid(), &diff))
}

/// Discrete dual norms of a signed measure.
///
/// `k = 0` is the total variation `sum |q_j|`. `k = 1` is the Lipschitz dual
/// norm; for a measure with nonzero total mass `m` it is evaluated as
/// `|m| + ||q - m * uniform||_{-1}`.
pub fn neg_norm(q: &SignedMeasure, k: u32) -> Result<f64> {
    match k {
        0 => Ok(q.masses().iter().map(|v| v.abs()).sum()),
        1 => {
            let grid = q.grid();
            let total = q.total_mass();
            let per_cell = total / grid.n() as f64;
            let centered: Vec<f64> = q.masses().iter().map(|v| v - per_cell).collect();
            Ok(total.abs() + circular_cdf_norm(grid, &centered))
        }
        other => Err(Error::UnsupportedOrder(other)),
    }
}
