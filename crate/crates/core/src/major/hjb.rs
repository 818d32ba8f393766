use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::torus::linalg::CyclicSystem;
use crate::tree::{conditional_sums, TreeProcess};

use super::MajorTriple;

/// Periodized major-state box `[-L, L)` with `n` nodes `x_j = -L + j h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxGrid {
    pub n: usize,
    pub half_width: f64,
}

impl BoxGrid {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::GridTooSmall(n));
        }
        if !(half_width > 0.0) {
            return Err(Error::InvalidParameter(format!("box half-width {half_width}")));
        }
        Ok(Self { n, half_width })
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.h()
    }

    /// Left node index and weight of the right neighbour for periodic linear
    /// interpolation.
    fn locate(&self, x: f64) -> (usize, f64) {
        let s = ((x + self.half_width) / self.h()).rem_euclid(self.n as f64);
        let j = (s.floor() as usize).min(self.n - 1);
        (j, s - j as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W0Config {
    pub n: usize,
    /// Time step of the backward solve.
    pub dt: f64,
}

impl Default for W0Config {
    fn default() -> Self {
        Self { n: 256, dt: 5e-3 }
    }
}

/// Solution of `d_t w + 1/2 sigma0^2 w'' + F0 - H0(x, w') = 0`, `w(T) = 0`,
/// with all time slices kept (`w0[k]` at `t = k dt`).
#[derive(Debug, Clone, Serialize)]
pub struct AuxiliaryHjb {
    pub grid: BoxGrid,
    pub dt: f64,
    pub horizon: f64,
    pub w0: Vec<Vec<f64>>,
    pub grad_w0: Vec<Vec<f64>>,
}

impl AuxiliaryHjb {
    pub fn sup_grad(&self) -> f64 {
        self.grad_w0
            .iter()
            .flatten()
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }

    fn interp(&self, data: &[Vec<f64>], t: f64, x: f64) -> f64 {
        let steps = data.len() - 1;
        let s = (t / self.dt).clamp(0.0, steps as f64);
        let k = (s.floor() as usize).min(steps.saturating_sub(1));
        let wt = s - k as f64;
        let (j, wx) = self.grid.locate(x);
        let j1 = (j + 1) % self.grid.n;
        let at = |slice: &Vec<f64>| (1.0 - wx) * slice[j] + wx * slice[j1];
        if steps == 0 {
            return at(&data[0]);
        }
        (1.0 - wt) * at(&data[k]) + wt * at(&data[k + 1])
    }

    pub fn value_at(&self, t: f64, x: f64) -> f64 {
        self.interp(&self.w0, t, x)
    }

    pub fn grad_at(&self, t: f64, x: f64) -> f64 {
        self.interp(&self.grad_w0, t, x)
    }
}

fn central(grid: BoxGrid, w: &[f64]) -> Vec<f64> {
    let n = grid.n;
    let h2 = 2.0 * grid.h();
    (0..n).map(|j| (w[(j + 1) % n] - w[(j + n - 1) % n]) / h2).collect()
}

/// Backward semi-implicit solve on the model's box (`x0_half_width`):
/// `(I - dt sigma0^2/2 D2) w_k = w_{k+1} + dt (F0 - H0(x, D1 w_{k+1}))`.
pub fn solve_w0(model: &ModelSpec, cfg: &W0Config) -> Result<AuxiliaryHjb> {
    let grid = BoxGrid::new(cfg.n, model.x0_half_width())?;
    let horizon = model.horizon;
    let steps = ((horizon / cfg.dt).ceil() as usize).max(1);
    let dt = horizon / steps as f64;
    let f0: Vec<f64> = (0..grid.n)
        .map(|j| model.costs.major_long_time(grid.x(j)).ok_or(Error::MissingCoefficient("F0")))
        .collect::<Result<_>>()?;
    let k = dt * 0.5 * model.sigma0 * model.sigma0 / (grid.h() * grid.h());
    let n = grid.n;
    let sys = CyclicSystem::new(&vec![-k; n], &vec![1.0 + 2.0 * k; n], &vec![-k; n])?;
    let h0 = &model.major_hamiltonian;
    let mut w0 = vec![vec![0.0; n]; steps + 1];
    let mut grad = vec![vec![0.0; n]; steps + 1];
    for step in (0..steps).rev() {
        let p = central(grid, &w0[step + 1]);
        let rhs: Vec<f64> = (0..n)
            .map(|j| w0[step + 1][j] + dt * (f0[j] - h0.eval(grid.x(j), p[j])))
            .collect();
        let w = sys.solve(&rhs);
        if let Some(j) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(j));
        }
        grad[step + 1] = p;
        w0[step] = w;
    }
    grad[0] = central(grid, &w0[0]);
    Ok(AuxiliaryHjb {
        grid,
        dt,
        horizon,
        w0,
        grad_w0: grad,
    })
}

/// Exact conditional sums of `sigma0^2 (Z - grad w0(t, X))^2 dt` to the
/// horizon.
pub fn major_bmo_sums(triple: &MajorTriple, w0: &AuxiliaryHjb, sigma0: f64) -> TreeProcess<f64> {
    let tree = *triple.x0.tree();
    let dt = tree.dt();
    let a = TreeProcess::from_fn(tree, |id| {
        if tree.is_leaf(id) {
            return 0.0;
        }
        let d = triple.z0.get(id) - w0.grad_at(tree.time(id), *triple.x0.get(id));
        sigma0 * sigma0 * d * d * dt
    });
    conditional_sums(&a)
}

pub fn major_bmo_diagnostic(triple: &MajorTriple, w0: &AuxiliaryHjb, sigma0: f64) -> f64 {
    major_bmo_sums(triple, w0, sigma0)
        .values()
        .iter()
        .fold(0.0, |a: f64, &v| a.max(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_model;
    use crate::tree::NoiseTree;
    use std::collections::BTreeMap;

    fn params(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn zero_long_time_cost_gives_zero() {
        let m = builtin_model("assumption-b", &params(&[("kappa", 0.0)])).unwrap();
        let w = solve_w0(&m, &W0Config { n: 64, dt: 0.05 }).unwrap();
        assert!(w.w0.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(w.sup_grad(), 0.0);
    }

    #[test]
    fn constant_cost_gives_linear_in_time() {
        let c = 0.7;
        let m = builtin_model("assumption-b", &params(&[("kappa", 0.0), ("offset", c)])).unwrap();
        let w = solve_w0(&m, &W0Config { n: 64, dt: 0.05 }).unwrap();
        for (k, slice) in w.w0.iter().enumerate() {
            let exact = c * (m.horizon - k as f64 * w.dt);
            for v in slice {
                assert!((v - exact).abs() <= 1e-10);
            }
        }
        assert!(w.sup_grad() <= 1e-10);
    }

    #[test]
    fn missing_long_time_cost_is_an_error() {
        let m = builtin_model("lq", &BTreeMap::new()).unwrap();
        assert!(matches!(solve_w0(&m, &W0Config::default()), Err(Error::MissingCoefficient("F0"))));
    }

    #[test]
    fn interpolation_reproduces_nodes_and_wraps() {
        let g = BoxGrid::new(8, 2.0).unwrap();
        let w = AuxiliaryHjb {
            grid: g,
            dt: 0.5,
            horizon: 1.0,
            w0: vec![(0..8).map(|j| j as f64).collect(); 3],
            grad_w0: vec![vec![1.0; 8]; 3],
        };
        assert_eq!(w.value_at(0.0, g.x(3)), 3.0);
        assert_eq!(w.value_at(0.7, g.x(5) + 0.25), 5.5);
        assert_eq!(w.value_at(1.0, g.x(2) + 4.0), 2.0);
    }

    #[test]
    fn bmo_sums_match_path_enumeration() {
        let tree = NoiseTree::new(2, 0.3).unwrap();
        let g = BoxGrid::new(16, 3.0).unwrap();
        let w = AuxiliaryHjb {
            grid: g,
            dt: 0.3,
            horizon: 0.6,
            w0: vec![vec![0.0; 16]; 3],
            grad_w0: vec![(0..16).map(|j| 0.1 * g.x(j)).collect(); 3],
        };
        let triple = MajorTriple {
            x0: TreeProcess::from_fn(tree, |id| -0.5 + 0.25 * id as f64),
            y0: TreeProcess::constant(tree, 0.0),
            z0: TreeProcess::from_fn(tree, |id| if tree.is_leaf(id) { 0.0 } else { 1.0 + id as f64 }),
            picard_residuals: vec![],
        };
        let sigma0 = 1.3;
        let sums = major_bmo_sums(&triple, &w, sigma0);
        let a = |id: usize| {
            let d = triple.z0.get(id) - w.grad_at(tree.time(id), *triple.x0.get(id));
            sigma0 * sigma0 * d * d * tree.dt()
        };
        let paths = [[0, 1, 3], [0, 1, 4], [0, 2, 5], [0, 2, 6]];
        let enumerated = paths.iter().map(|p| a(p[0]) + a(p[1])).sum::<f64>() / 4.0;
        assert!((sums.root() - enumerated).abs() <= 1e-14);
        assert!(major_bmo_diagnostic(&triple, &w, sigma0) >= *sums.root());
    }
}
