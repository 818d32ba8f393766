use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::torus::{DensityField, PeriodicGrid};

use super::Costs;

const SEED: u64 = 0x1a55_2105;

/// Sampled Lasry-Lions check; `monotone` means no sampled violation, not a
/// certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub samples: usize,
    /// Minimum of `int (f(mu') - f(mu)) d(mu' - mu)` over the samples.
    pub min_running: f64,
    /// Same for the terminal cost `g`.
    pub min_terminal: f64,
    pub minimum: f64,
    pub monotone: bool,
}

fn random_density(grid: PeriodicGrid, rng: &mut ChaCha8Rng) -> DensityField {
    // mixture of a few random bumps over a random floor
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.03..0.3), rng.gen_range(0.0..1.0)))
        .collect();
    let floor = rng.gen_range(0.0..0.5);
    DensityField::from_profile(grid, |x| {
        floor
            + bumps
                .iter()
                .map(|&(c, w, a)| {
                    let d = (x - c).rem_euclid(1.0);
                    let d = d.min(1.0 - d);
                    a * (-(d / w).powi(2)).exp()
                })
                .sum::<f64>()
            + 1e-9
    })
    .unwrap_or_else(|_| DensityField::uniform(grid))
}

pub fn check_lasry_lions(cost: &dyn Costs, grid: PeriodicGrid, n_samples: usize) -> MonotonicityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let pairing = |a: &[f64], b: &[f64], mu: &DensityField, nu: &DensityField| -> f64 {
        a.iter()
            .zip(b)
            .zip(mu.masses().iter().zip(nu.masses()))
            .map(|((fa, fb), (m, n))| (fb - fa) * (n - m))
            .sum()
    };
    let (mut min_running, mut min_terminal) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..n_samples.max(1) {
        let mu = random_density(grid, &mut rng);
        let nu = random_density(grid, &mut rng);
        let t = rng.gen_range(0.0..2.0);
        let x0 = rng.gen_range(-2.0..2.0);
        let f_mu = cost.minor_running(t, x0, &mu);
        let f_nu = cost.minor_running(t, x0, &nu);
        min_running = min_running.min(pairing(f_mu.values(), f_nu.values(), &mu, &nu));
        let g_mu = cost.minor_terminal(x0, &mu);
        let g_nu = cost.minor_terminal(x0, &nu);
        min_terminal = min_terminal.min(pairing(g_mu.values(), g_nu.values(), &mu, &nu));
    }
    let minimum = min_running.min(min_terminal);
    MonotonicityReport {
        samples: n_samples.max(1),
        min_running,
        min_terminal,
        minimum,
        monotone: minimum >= -1e-12,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CouplingCosts;

    fn grid() -> PeriodicGrid {
        PeriodicGrid::new(48).unwrap()
    }

    #[test]
    fn positive_kernel_is_monotone() {
        let c = CouplingCosts {
            interaction: 1.0,
            terminal_interaction: 0.5,
            minor_repulsion: 2.0,
            ..CouplingCosts::zero()
        };
        let r = check_lasry_lions(&c, grid(), 200);
        assert!(r.minimum >= -1e-12, "{r:?}");
        assert!(r.monotone);
        assert!(r.min_running > 0.0);
    }

    #[test]
    fn zero_cost_has_zero_minimum() {
        let r = check_lasry_lions(&CouplingCosts::zero(), grid(), 20);
        assert_eq!(r.minimum, 0.0);
    }

    #[test]
    fn sign_flip_is_detected() {
        let c = CouplingCosts {
            interaction: -1.0,
            ..CouplingCosts::zero()
        };
        let r = check_lasry_lions(&c, grid(), 50);
        assert!(r.minimum < -1e-6, "{r:?}");
        assert!(!r.monotone);
    }

    #[test]
    fn plancherel_oracle() {
        // int (rho * q) dq = sum_k w_k (C_k^2 + S_k^2) for q = nu - mu
        let g = grid();
        let c = CouplingCosts {
            interaction: 1.0,
            kernel: vec![0.7, 0.2, 0.1],
            ..CouplingCosts::zero()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mu = random_density(g, &mut rng);
        let nu = random_density(g, &mut rng);
        let f_mu = c.minor_running(0.0, 0.0, &mu);
        let f_nu = c.minor_running(0.0, 0.0, &nu);
        let direct: f64 = (0..g.n())
            .map(|j| (f_nu.values()[j] - f_mu.values()[j]) * (nu.masses()[j] - mu.masses()[j]))
            .sum();
        let q: Vec<f64> = (0..g.n()).map(|j| nu.masses()[j] - mu.masses()[j]).collect();
        let oracle: f64 = c
            .kernel
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let k = (i + 1) as f64 * 2.0 * std::f64::consts::PI;
                let (cs, sn) = g.centers().zip(&q).fold((0.0, 0.0), |(a, b), (x, v)| {
                    (a + v * (k * x).cos(), b + v * (k * x).sin())
                });
                w * (cs * cs + sn * sn)
            })
            .sum();
        assert!((direct - oracle).abs() < 1e-14, "{direct} vs {oracle}");
    }
}
