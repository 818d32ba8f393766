//! Periodic one-dimensional grid on the unit torus, the fields that live on
//! it, and the finite-difference machinery shared by both populations.
//!
//! Cells are indexed `0..n` with centers `x_j = (j + 1/2) h`, `h = 1/n`.
//! Densities carry *mass per cell* (entries sum to one), so the discrete
//! pairing of a scalar field against a density is a plain sum.

mod distance;
pub mod io;
pub mod linalg;
mod ops;

pub use distance::{neg_norm, wasserstein1};
pub use ops::{
    fp_step, fp_step_with, gradient, hjb_step_backward, laplacian, FpScheme, FLUX_SMOOTHING,
    HJB_DIFFUSION,
};
pub(crate) use ops::{
    finish_density, fp_transport_diffuse, fp_transport_diffuse_tangent, gradient_raw, hjb_step_raw,
    hjb_step_tangent, laplacian_raw,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Mass conservation tolerance for a valid [`DensityField`].
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PeriodicGrid {
    n: usize,
}

impl PeriodicGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::GridTooSmall(n));
        }
        Ok(Self { n })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Center of cell `j`.
    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.h()
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |j| self.x(j))
    }

    #[inline]
    pub(crate) fn next(&self, j: usize) -> usize {
        if j + 1 == self.n {
            0
        } else {
            j + 1
        }
    }

    #[inline]
    pub(crate) fn prev(&self, j: usize) -> usize {
        if j == 0 {
            self.n - 1
        } else {
            j - 1
        }
    }

    /// Cell containing the torus point `x` (taken modulo one).
    pub fn cell_of(&self, x: f64) -> usize {
        let y = x.rem_euclid(1.0);
        ((y * self.n as f64).floor() as usize).min(self.n - 1)
    }
}

fn check_len(grid: &PeriodicGrid, len: usize) -> Result<()> {
    if len != grid.n() {
        return Err(Error::LengthMismatch {
            expected: grid.n(),
            got: len,
        });
    }
    Ok(())
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(j) => Err(Error::NonFinite(j)),
        None => Ok(()),
    }
}

/// Real-valued function sampled at the cell centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        check_len(&grid, values.len())?;
        check_finite(&values)?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: PeriodicGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: PeriodicGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.n()],
        }
    }

    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            values: grid.centers().map(f).collect(),
        }
    }

    /// Trusted constructor for solver internals; values are assumed finite.
    pub(crate) fn from_raw(grid: PeriodicGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n());
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Oscillation `max - min`.
    pub fn oscillation(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        hi - lo
    }

    pub fn sup_distance(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `sum_j f_j mu_j`, the discrete integral of `self` against a density.
    pub fn pair(&self, mu: &DensityField) -> f64 {
        self.values.iter().zip(mu.masses()).map(|(f, m)| f * m).sum()
    }

    pub fn scaled(&self, c: f64) -> ScalarField {
        ScalarField::from_raw(self.grid, self.values.iter().map(|v| c * v).collect())
    }

    /// Linear combination `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &ScalarField, b: f64) -> ScalarField {
        ScalarField::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
    }
}

/// Probability mass per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    grid: PeriodicGrid,
    mass: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: PeriodicGrid, mass: Vec<f64>) -> Result<Self> {
        check_len(&grid, mass.len())?;
        check_finite(&mass)?;
        if let Some(j) = mass.iter().position(|&m| m < 0.0) {
            return Err(Error::InvalidDensity(format!(
                "negative mass {:e} in cell {j}",
                mass[j]
            )));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDensity(format!("total mass {total}")));
        }
        Ok(Self { grid, mass })
    }

    /// Normalizes nonnegative weights into a density.
    pub fn from_weights(grid: PeriodicGrid, weights: Vec<f64>) -> Result<Self> {
        check_len(&grid, weights.len())?;
        check_finite(&weights)?;
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidDensity("negative weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidDensity("zero total weight".into()));
        }
        Ok(Self {
            grid,
            mass: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// Density proportional to a nonnegative profile evaluated at cell centers.
    pub fn from_profile(grid: PeriodicGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_weights(grid, grid.centers().map(f).collect())
    }

    pub fn uniform(grid: PeriodicGrid) -> Self {
        Self {
            grid,
            mass: vec![grid.h(); grid.n()],
        }
    }

    pub fn point_mass(grid: PeriodicGrid, cell: usize) -> Self {
        let mut mass = vec![0.0; grid.n()];
        mass[cell % grid.n()] = 1.0;
        Self { grid, mass }
    }

    pub(crate) fn from_raw(grid: PeriodicGrid, mass: Vec<f64>) -> Self {
        debug_assert_eq!(mass.len(), grid.n());
        Self { grid, mass }
    }

    #[inline]
    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    #[inline]
    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn min_mass(&self) -> f64 {
        self.mass.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Mean position on the lifted circle, `sum_j x_j mu_j`.
    pub fn mean_position(&self) -> f64 {
        self.grid.centers().zip(&self.mass).map(|(x, m)| x * m).sum()
    }

    /// Convex mixture `(1 - w) self + w other`.
    pub fn mix(&self, other: &DensityField, w: f64) -> Result<DensityField> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(self.grid.n(), other.grid.n()));
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidParameter(format!("mixing weight {w}")));
        }
        Ok(Self::from_raw(
            self.grid,
            self.mass
                .iter()
                .zip(&other.mass)
                .map(|(a, b)| (1.0 - w) * a + w * b)
                .collect(),
        ))
    }

    /// Rotation by `k` cells: `out[j] = self[j - k]`.
    pub fn shifted(&self, k: isize) -> DensityField {
        let n = self.grid.n() as isize;
        let mass = (0..n)
            .map(|j| self.mass[(j - k).rem_euclid(n) as usize])
            .collect();
        Self::from_raw(self.grid, mass)
    }

    /// Signed difference `self - other`.
    pub fn signed_difference(&self, other: &DensityField) -> SignedMeasure {
        SignedMeasure::from_raw(
            self.grid,
            self.mass.iter().zip(&other.mass).map(|(a, b)| a - b).collect(),
        )
    }

    /// Hash of the bit pattern of the masses (cache keys).
    pub fn bit_hash(&self) -> u64 {
        // FNV-1a over the raw bits
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for m in &self.mass {
            for b in m.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Signed per-cell measure; used for perturbation directions and the
/// linearized population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedMeasure {
    grid: PeriodicGrid,
    mass: Vec<f64>,
}

impl SignedMeasure {
    pub fn new(grid: PeriodicGrid, mass: Vec<f64>) -> Result<Self> {
        check_len(&grid, mass.len())?;
        check_finite(&mass)?;
        Ok(Self { grid, mass })
    }

    pub fn zeros(grid: PeriodicGrid) -> Self {
        Self {
            grid,
            mass: vec![0.0; grid.n()],
        }
    }

    pub(crate) fn from_raw(grid: PeriodicGrid, mass: Vec<f64>) -> Self {
        debug_assert_eq!(mass.len(), grid.n());
        Self { grid, mass }
    }

    #[inline]
    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    #[inline]
    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn scaled(&self, c: f64) -> SignedMeasure {
        Self::from_raw(self.grid, self.mass.iter().map(|m| c * m).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.mass.iter().all(|&m| m == 0.0)
    }

    pub fn pair(&self, f: &ScalarField) -> f64 {
        self.mass.iter().zip(f.values()).map(|(m, v)| m * v).sum()
    }

    pub fn sup_norm(&self) -> f64 {
        self.mass.iter().fold(0.0, |a, m| a.max(m.abs()))
    }
}
