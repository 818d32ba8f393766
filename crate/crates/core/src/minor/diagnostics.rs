use rayon::prelude::*;
use serde::Serialize;

use crate::torus::{gradient_raw, ScalarField};
use crate::tree::{conditional_sums, TreeProcess};

use super::MinorSolution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientDiagnostic {
    /// `sup |grad u|` with the central difference fed to the Hamiltonian.
    pub sup_grad_u: f64,
    pub sup_second: f64,
    pub sup_third: f64,
    /// `max(sup_second, sup_third)`.
    pub sup_higher: f64,
}

/// Forward divided differences of order 1..=3 on the periodic grid.
fn divided_differences(f: &ScalarField) -> [f64; 3] {
    let h = f.grid().h();
    let mut d = f.values().to_vec();
    let mut out = [0.0; 3];
    for slot in out.iter_mut() {
        let n = d.len();
        d = (0..n).map(|j| (d[(j + 1) % n] - d[j]) / h).collect();
        *slot = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    }
    out
}

pub fn gradient_diagnostic(sol: &MinorSolution) -> GradientDiagnostic {
    let (g, s2, s3) = sol
        .u
        .values()
        .par_iter()
        .map(|f| {
            let grad = gradient_raw(f.grid(), f.values())
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            let [_, d2, d3] = divided_differences(f);
            (grad, d2, d3)
        })
        .reduce(|| (0.0, 0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2)));
    GradientDiagnostic {
        sup_grad_u: g,
        sup_second: s2,
        sup_third: s3,
        sup_higher: s2.max(s3),
    }
}

/// Exact conditional sums of `sigma0^2 |v0 - mean v0|_sup^2 dt` from each node
/// to the horizon.
pub fn v0_bmo_sums(v0: &TreeProcess<ScalarField>, sigma0: f64) -> TreeProcess<f64> {
    let dt = v0.tree().dt();
    let a = v0.map(|v| {
        let m = v.mean();
        let s = v.values().iter().fold(0.0f64, |a, x| a.max((x - m).abs()));
        sigma0 * sigma0 * s * s * dt
    });
    conditional_sums(&a)
}

/// Sup over nodes of [`v0_bmo_sums`].
pub fn v0_bmo_diagnostic(sol: &MinorSolution) -> f64 {
    v0_bmo_sums(&sol.v0, sol.sigma0)
        .values()
        .iter()
        .fold(0.0, |a: f64, &v| a.max(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::PeriodicGrid;
    use crate::tree::NoiseTree;
    use std::f64::consts::PI;

    #[test]
    fn divided_differences_of_a_sine() {
        let g = PeriodicGrid::new(256).unwrap();
        let f = ScalarField::from_fn(g, |x| (2.0 * PI * x).sin());
        let d = divided_differences(&f);
        for (k, v) in d.iter().enumerate() {
            let exact = (2.0 * PI).powi(k as i32 + 1);
            assert!((v / exact - 1.0).abs() < 0.01, "{k}: {v}");
        }
        assert_eq!(divided_differences(&ScalarField::zeros(g)), [0.0; 3]);
    }

    #[test]
    fn bmo_sums_match_path_enumeration() {
        let g = PeriodicGrid::new(4).unwrap();
        let tree = NoiseTree::new(3, 0.2).unwrap();
        let sigma0 = 1.7;
        let v0 = TreeProcess::from_fn(tree, |id| {
            if tree.is_leaf(id) {
                ScalarField::zeros(g)
            } else {
                ScalarField::from_fn(g, |x| (id as f64 + 1.0) * (x - 0.3 * id as f64).sin())
            }
        });
        let sums = v0_bmo_sums(&v0, sigma0);
        let term = |id: usize| {
            let v = v0.get(id);
            let m = v.mean();
            let s = v.values().iter().fold(0.0f64, |a, x| a.max((x - m).abs()));
            sigma0 * sigma0 * s * s * tree.dt()
        };
        for start in 0..tree.level_range(3).start {
            let k0 = tree.level_of(start);
            let paths = 1usize << (3 - k0);
            let mut total = 0.0;
            for p in 0..paths {
                let mut id = start;
                let mut acc = 0.0;
                for bit in (0..3 - k0).rev() {
                    acc += term(id);
                    id = 2 * id + 1 + ((p >> bit) & 1);
                }
                total += acc;
            }
            total /= paths as f64;
            assert!((total - sums.get(start)).abs() <= 1e-14 * total.max(1.0));
        }
    }
}
