//! Periodic (cyclic) tridiagonal solves via Sherman–Morrison on top of the
//! Thomas algorithm.

use crate::error::{Error, Result};

use super::PeriodicGrid;

/// Factorized cyclic tridiagonal matrix
///
/// Row `j` reads `sub[j] x[j-1] + diag[j] x[j] + sup[j] x[j+1]` with indices
/// taken modulo `n`.
#[derive(Debug, Clone)]
pub struct CyclicSystem {
    sub: Vec<f64>,
    /// Thomas forward-sweep super-diagonal multipliers.
    cprime: Vec<f64>,
    /// Thomas pivots.
    pivot: Vec<f64>,
    /// Sherman–Morrison correction vector and scalars.
    z: Vec<f64>,
    beta_over_gamma: f64,
    denom: f64,
}

const PIVOT_FLOOR: f64 = 1e-300;

impl CyclicSystem {
    pub fn new(sub: &[f64], diag: &[f64], sup: &[f64]) -> Result<Self> {
        let n = diag.len();
        if n < 3 || sub.len() != n || sup.len() != n {
            return Err(Error::InvalidParameter(format!(
                "cyclic system needs n >= 3 matching bands, got {n}"
            )));
        }
        let alpha = sup[n - 1];
        let beta = sub[0];
        let gamma = if diag[0] != 0.0 { -diag[0] } else { -1.0 };
        let mut bb = diag.to_vec();
        bb[0] -= gamma;
        bb[n - 1] -= alpha * beta / gamma;

        let mut cprime = vec![0.0; n];
        let mut pivot = vec![0.0; n];
        pivot[0] = bb[0];
        if pivot[0].abs() < PIVOT_FLOOR {
            return Err(Error::SingularSystem);
        }
        cprime[0] = sup[0] / pivot[0];
        for j in 1..n {
            pivot[j] = bb[j] - sub[j] * cprime[j - 1];
            if pivot[j].abs() < PIVOT_FLOOR || !pivot[j].is_finite() {
                return Err(Error::SingularSystem);
            }
            cprime[j] = if j + 1 < n { sup[j] / pivot[j] } else { 0.0 };
        }

        let mut sys = Self {
            sub: sub.to_vec(),
            cprime,
            pivot,
            z: Vec::new(),
            beta_over_gamma: beta / gamma,
            denom: 1.0,
        };
        let mut u = vec![0.0; n];
        u[0] = gamma;
        u[n - 1] = alpha;
        let z = sys.thomas(&u);
        let denom = 1.0 + z[0] + sys.beta_over_gamma * z[n - 1];
        if denom.abs() < 1e-14 || !denom.is_finite() {
            return Err(Error::SingularSystem);
        }
        sys.z = z;
        sys.denom = denom;
        Ok(sys)
    }

    /// `I - tau * nu * Laplacian_h` on the periodic grid.
    pub fn implicit_diffusion(grid: PeriodicGrid, tau: f64, nu: f64) -> Result<Self> {
        let n = grid.n();
        let k = tau * nu / (grid.h() * grid.h());
        Self::new(&vec![-k; n], &vec![1.0 + 2.0 * k; n], &vec![-k; n])
    }

    fn thomas(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut y = vec![0.0; n];
        y[0] = rhs[0] / self.pivot[0];
        for j in 1..n {
            y[j] = (rhs[j] - self.sub[j] * y[j - 1]) / self.pivot[j];
        }
        for j in (0..n - 1).rev() {
            y[j] -= self.cprime[j] * y[j + 1];
        }
        y
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut x = self.thomas(rhs);
        let fact = (x[0] + self.beta_over_gamma * x[n - 1]) / self.denom;
        for (xi, zi) in x.iter_mut().zip(&self.z) {
            *xi -= fact * zi;
        }
        x
    }

    pub fn len(&self) -> usize {
        self.pivot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pivot.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apply(sub: &[f64], diag: &[f64], sup: &[f64], x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|j| sub[j] * x[(j + n - 1) % n] + diag[j] * x[j] + sup[j] * x[(j + 1) % n])
            .collect()
    }

    #[test]
    fn solves_nonsymmetric_cyclic_system() {
        let n = 9;
        let sub: Vec<f64> = (0..n).map(|j| -0.3 - 0.01 * j as f64).collect();
        let sup: Vec<f64> = (0..n).map(|j| -0.2 + 0.02 * j as f64).collect();
        let diag: Vec<f64> = (0..n).map(|j| 2.0 + 0.1 * j as f64).collect();
        let x: Vec<f64> = (0..n).map(|j| (j as f64 * 0.7).sin()).collect();
        let rhs = apply(&sub, &diag, &sup, &x);
        let sys = CyclicSystem::new(&sub, &diag, &sup).unwrap();
        let got = sys.solve(&rhs);
        for (a, b) in got.iter().zip(&x) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn pure_periodic_laplacian_is_singular() {
        let n = 8;
        let err = CyclicSystem::new(&vec![1.0; n], &vec![-2.0; n], &vec![1.0; n]);
        assert!(matches!(err, Err(Error::SingularSystem)));
    }
}
