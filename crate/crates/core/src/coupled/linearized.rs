use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minor::stepper::{average, Stepper};
use crate::model::ModelSpec;
use crate::torus::{gradient_raw, DensityField, ScalarField, SignedMeasure};
use crate::tree::TreeProcess;

use super::flat::{flat_derivative_field, flat_derivative_richardson};
use super::EquilibriumSolution;

/// Perturbation `(dx0, dmu)` of the initial data; `dmu` carries zero mass.
#[derive(Debug, Clone, Serialize)]
pub struct Direction {
    pub dx0: f64,
    pub dmu: SignedMeasure,
}

impl Direction {
    pub fn scaled(&self, c: f64) -> Direction {
        Direction {
            dx0: c * self.dx0,
            dmu: self.dmu.scaled(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearizedConfig {
    /// Stop once the sup change of an iterate is below `tol` times its size.
    pub tol: f64,
    pub max_iter: usize,
    /// Mixture step of the flat derivatives (Richardson-halved once).
    pub eps: f64,
}

impl Default for LinearizedConfig {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iter: 200,
            eps: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearizedSolution {
    pub dx0: TreeProcess<f64>,
    pub dy0: TreeProcess<f64>,
    pub dz0: TreeProcess<f64>,
    pub dmu: TreeProcess<SignedMeasure>,
    pub du: TreeProcess<ScalarField>,
    pub direction: Direction,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

/// Coefficients of the tangent system frozen along the base solution.
struct NodeData {
    /// `H_pp(x, grad u)` per cell.
    minor_hpp: Vec<f64>,
    /// Base drift `-H_p(x, grad u)`.
    drift: Vec<f64>,
    /// `d/dx0` of the minor running (leaf: terminal) cost.
    minor_dx0: Vec<f64>,
    /// Flat derivative rows `[y][x]` of the minor running (leaf: terminal) cost.
    minor_dmu: Vec<Vec<f64>>,
    major_dx0: f64,
    major_dmu: Vec<f64>,
    /// `d driver / d X` and `d driver / d Z` without the cost part.
    driver_x: f64,
    driver_z: f64,
    /// `d drift0 / dX`, `d drift0 / dZ` for `drift0 = -H0_p(X, Z)`.
    drift0_x: f64,
    drift0_z: f64,
}

fn required_derivatives(model: &ModelSpec) -> Result<()> {
    let mut missing = Vec::new();
    if model.minor_hamiltonian.hess_pp(0.0, 0.0).is_none() || model.major_hamiltonian.hess_pp(0.0, 0.0).is_none() {
        missing.push("hess_pp");
    }
    if model.major_hamiltonian.hess_xp(0.0, 0.0).is_none() {
        missing.push("hess_xp");
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingDerivatives(missing))
    }
}

fn node_data(model: &ModelSpec, base: &EquilibriumSolution, stepper: &Stepper, eps: f64) -> Result<Vec<NodeData>> {
    let tree = *base.tree();
    let grid = stepper.grid;
    let h = &model.minor_hamiltonian;
    let h0 = &model.major_hamiltonian;
    let costs = &model.costs;
    (0..tree.node_count())
        .into_par_iter()
        .map(|id| {
            let u = base.minor.u.get(id);
            let mu = base.minor.mu.get(id);
            let x = *base.major.x0.get(id);
            let z = *base.major.z0.get(id);
            let t = tree.time(id);
            let p = gradient_raw(grid, u.values());
            let minor_hpp = (0..grid.n())
                .map(|j| h.hess_pp(grid.x(j), p[j]).unwrap_or(0.0))
                .collect();
            let (drift, _) = stepper.drift(u.values());
            let leaf = tree.is_leaf(id);
            let (minor_dx0, minor_dmu, major_dx0, major_dmu) = if leaf {
                (
                    costs.minor_terminal_dx0(x, mu).into_values(),
                    flat_derivative_field(&|m: &DensityField| costs.minor_terminal(x, m), mu, eps)?,
                    costs.major_terminal_dx0(x, mu),
                    flat_derivative_richardson(&|m: &DensityField| costs.major_terminal(x, m), mu, eps)?,
                )
            } else {
                (
                    costs.minor_running_dx0(t, x, mu).into_values(),
                    flat_derivative_field(&|m: &DensityField| costs.minor_running(t, x, m), mu, eps)?,
                    costs.major_running_dx0(t, x, mu),
                    flat_derivative_richardson(&|m: &DensityField| costs.major_running(t, x, m), mu, eps)?,
                )
            };
            let hpp = h0.hess_pp(x, z).unwrap_or(0.0);
            let hxp = h0.hess_xp(x, z).unwrap_or(0.0);
            Ok(NodeData {
                minor_hpp,
                drift,
                minor_dx0,
                minor_dmu,
                major_dx0,
                major_dmu,
                driver_x: z * hxp - h0.grad_x(x, z),
                driver_z: z * hpp,
                drift0_x: -hxp,
                drift0_z: -hpp,
            })
        })
        .collect()
}

fn pair_rows(rows: &[Vec<f64>], dmu: &[f64]) -> Vec<f64> {
    let n = rows.first().map_or(0, |r| r.len());
    let mut out = vec![0.0; n];
    for (row, &w) in rows.iter().zip(dmu) {
        if w != 0.0 {
            for (o, r) in out.iter_mut().zip(row) {
                *o += w * r;
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Exact tangent of the discrete coupled scheme at `base` along `direction`,
/// solved by Picard iteration: `dmu` forward, `du` backward, `dX0` forward,
/// `(dY0, dZ0)` backward.
pub fn solve_linearized(
    base: &EquilibriumSolution,
    direction: &Direction,
    model: &ModelSpec,
    cfg: &LinearizedConfig,
) -> Result<LinearizedSolution> {
    required_derivatives(model)?;
    let tree = *base.tree();
    let grid = base.minor.mu.root().grid();
    if direction.dmu.grid() != grid {
        return Err(Error::GridMismatch(grid.n(), direction.dmu.grid().n()));
    }
    let stepper = Stepper::new(grid, model.minor_hamiltonian.clone(), tree.dt(), base.minor.substeps)?;
    let data = node_data(model, base, &stepper, cfg.eps)?;
    let n = grid.n();
    let nodes = tree.node_count();
    let sigma0 = model.sigma0;
    let dt = tree.dt();
    let s = tree.sqrt_dt();

    let mut dmu: Vec<Vec<f64>> = vec![vec![0.0; n]; nodes];
    let mut du: Vec<Vec<f64>> = vec![vec![0.0; n]; nodes];
    let mut dx: Vec<f64> = vec![direction.dx0; nodes];
    let mut dy: Vec<f64> = vec![0.0; nodes];
    let mut dz: Vec<f64> = vec![0.0; nodes];
    let mut residuals = Vec::new();

    for iter in 1..=cfg.max_iter {
        // density tangent, forward
        let new_dmu = TreeProcess::forward(tree, direction.dmu.masses().to_vec(), |id, parent_dmu| {
            let p = (id - 1) / 2;
            let d = &data[p];
            let dp = gradient_raw(grid, &du[p]);
            let ddrift: Vec<f64> = (0..n).map(|j| -d.minor_hpp[j] * dp[j]).collect();
            Ok(stepper.advance_tangent(base.minor.mu.get(p), &d.drift, parent_dmu, &ddrift))
        })?
        .into_values();

        // value tangent, backward
        let new_du = TreeProcess::backward(
            tree,
            |id| {
                let d = &data[id];
                let pm = pair_rows(&d.minor_dmu, &new_dmu[id]);
                Ok((0..n).map(|j| d.minor_dx0[j] * dx[id] + pm[j]).collect::<Vec<f64>>())
            },
            |id, dd, dup| {
                let d = &data[id];
                let (cd, cu) = tree.children(id).expect("interior node");
                let u_next = average(base.minor.u.get(cd), base.minor.u.get(cu));
                let du_next: Vec<f64> = dd.iter().zip(dup).map(|(a, b)| 0.5 * (a + b)).collect();
                let source = model
                    .costs
                    .minor_running(tree.time(id), *base.major.x0.get(id), base.minor.mu.get(id));
                let pm = pair_rows(&d.minor_dmu, &new_dmu[id]);
                let dsource: Vec<f64> = (0..n).map(|j| d.minor_dx0[j] * dx[id] + pm[j]).collect();
                Ok(stepper.retreat_tangent(&u_next, &du_next, source.values(), &dsource))
            },
        )?
        .into_values();

        // state tangent, forward
        let mut new_dx = vec![0.0; nodes];
        new_dx[0] = direction.dx0;
        for id in 1..nodes {
            let p = (id - 1) / 2;
            let d = &data[p];
            new_dx[id] = new_dx[p] + dt * (d.drift0_x * new_dx[p] + d.drift0_z * dz[p]);
        }

        // value/integrand tangent, backward
        let mut new_dy = vec![0.0; nodes];
        let mut new_dz = vec![0.0; nodes];
        let leaves = tree.level_range(tree.depth());
        for id in leaves.clone() {
            let d = &data[id];
            new_dy[id] = d.major_dx0 * new_dx[id] + dot(&d.major_dmu, &new_dmu[id]);
        }
        for id in (0..leaves.start).rev() {
            let d = &data[id];
            let (cd, cu) = (2 * id + 1, 2 * id + 2);
            let zz = (new_dy[cu] - new_dy[cd]) / (2.0 * sigma0 * s);
            let ddrv = d.major_dx0 * new_dx[id]
                + dot(&d.major_dmu, &new_dmu[id])
                + d.driver_x * new_dx[id]
                + d.driver_z * zz;
            new_dz[id] = zz;
            new_dy[id] = 0.5 * (new_dy[cd] + new_dy[cu]) + dt * ddrv;
        }

        let change = [
            sup_diff(&dx, &new_dx),
            sup_diff(&dy, &new_dy),
            sup_diff(&dz, &new_dz),
            dmu.iter().zip(&new_dmu).map(|(a, b)| sup_diff(a, b)).fold(0.0, f64::max),
            du.iter().zip(&new_du).map(|(a, b)| sup_diff(a, b)).fold(0.0, f64::max),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        let size = [
            sup(&new_dx),
            sup(&new_dy),
            sup(&new_dz),
            new_dmu.iter().map(|a| sup(a)).fold(0.0, f64::max),
            new_du.iter().map(|a| sup(a)).fold(0.0, f64::max),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        let res = if size > 0.0 { change / size } else { 0.0 };
        residuals.push(res);
        dx = new_dx;
        dy = new_dy;
        dz = new_dz;
        dmu = new_dmu;
        du = new_du;
        if res <= cfg.tol {
            return Ok(LinearizedSolution {
                dx0: TreeProcess::new(tree, dx)?,
                dy0: TreeProcess::new(tree, dy)?,
                dz0: TreeProcess::new(tree, dz)?,
                dmu: TreeProcess::new(tree, dmu.into_iter().map(|m| SignedMeasure::new(grid, m)).collect::<Result<_>>()?)?,
                du: TreeProcess::new(tree, du.into_iter().map(|v| ScalarField::new(grid, v)).collect::<Result<_>>()?)?,
                direction: direction.clone(),
                iterations: iter,
                residuals,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "linearized system",
        iterations: residuals.len(),
        last: residuals.last().copied().unwrap_or(f64::NAN),
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupled::{solve_equilibrium, EquilibriumConfig, Truncation};
    use crate::major::MajorConfig;
    use crate::minor::MinorConfig;
    use crate::model::builtin_model;
    use crate::torus::PeriodicGrid;
    use crate::tree::NoiseTree;
    use std::collections::BTreeMap;
    use std::f64::consts::PI;

    fn tight(substeps: usize) -> EquilibriumConfig {
        EquilibriumConfig {
            tol: 1e-12,
            minor: MinorConfig {
                tol: 1e-14,
                substeps,
                adaptive_substeps: false,
                ..Default::default()
            },
            major: MajorConfig {
                tol: 1e-14,
                ..Default::default()
            },
            truncation: Truncation::Off,
            ..Default::default()
        }
    }

    fn setup() -> (ModelSpec, DensityField, NoiseTree, EquilibriumSolution, EquilibriumConfig) {
        let m = builtin_model("monotone-conv", &BTreeMap::new()).unwrap();
        let g = PeriodicGrid::new(32).unwrap();
        let mu0 = DensityField::from_profile(g, |x| 1.0 + 0.4 * (2.0 * PI * x).cos()).unwrap();
        let tree = NoiseTree::over(0.5, 4).unwrap();
        let probe = solve_equilibrium(&m, 0.0, &mu0, &tree, &EquilibriumConfig::default()).unwrap();
        let cfg = tight(probe.minor.substeps);
        let base = solve_equilibrium(&m, 0.0, &mu0, &tree, &cfg).unwrap();
        (m, mu0, tree, base, cfg)
    }

    #[test]
    fn zero_direction_and_homogeneity() {
        let (m, mu0, _, base, _) = setup();
        let g = mu0.grid();
        let zero = Direction {
            dx0: 0.0,
            dmu: SignedMeasure::zeros(g),
        };
        let sol = solve_linearized(&base, &zero, &m, &LinearizedConfig::default()).unwrap();
        assert!(sol.dy0.values().iter().all(|v| *v == 0.0));
        let dir = Direction {
            dx0: 1.0,
            dmu: SignedMeasure::new(g, g.centers().map(|x| 0.01 * (2.0 * PI * x).sin() / 32.0).collect()).unwrap(),
        };
        let a = solve_linearized(&base, &dir, &m, &LinearizedConfig::default()).unwrap();
        let b = solve_linearized(&base, &dir.scaled(2.0), &m, &LinearizedConfig::default()).unwrap();
        for (p, q) in a.dy0.values().iter().zip(b.dy0.values()) {
            assert!((2.0 * p - q).abs() <= 1e-10);
        }
        for (p, q) in a.dmu.values().iter().zip(b.dmu.values()) {
            assert!(p.total_mass().abs() <= 1e-14);
            assert!(p.scaled(2.0).masses().iter().zip(q.masses()).all(|(x, y)| (x - y).abs() <= 1e-10));
        }
    }

    #[test]
    fn matches_finite_differences_in_x0() {
        let (m, mu0, tree, base, cfg) = setup();
        let g = mu0.grid();
        let dir = Direction {
            dx0: 1.0,
            dmu: SignedMeasure::zeros(g),
        };
        let lin = solve_linearized(&base, &dir, &m, &LinearizedConfig::default()).unwrap();
        let mut first = Vec::new();
        let mut second = Vec::new();
        for eps in [1e-2, 5e-3, 2.5e-3] {
            let pert = solve_equilibrium(&m, eps, &mu0, &tree, &cfg).unwrap();
            let fx = pert
                .major
                .x0
                .values()
                .iter()
                .zip(base.major.x0.values())
                .zip(lin.dx0.values())
                .map(|((a, b), d)| ((a - b) / eps - d).abs())
                .fold(0.0, f64::max);
            first.push(fx);
            second.push((pert.major.y0.root() - base.major.y0.root() - eps * lin.dy0.root()).abs());
        }
        for w in second.windows(2) {
            let r = w[0] / w[1];
            assert!((4.0 / 3.0..=12.0).contains(&r), "{second:?}");
        }
        for w in first.windows(2) {
            assert!(w[1] < w[0], "{first:?}");
        }
    }

    #[test]
    fn missing_second_derivatives_are_reported() {
        use crate::model::{Hamiltonian, QuadraticHamiltonian};
        use std::sync::Arc;
        #[derive(Debug)]
        struct Bare(QuadraticHamiltonian);
        impl Hamiltonian for Bare {
            fn eval(&self, x: f64, p: f64) -> f64 {
                self.0.eval(x, p)
            }
            fn grad_p(&self, x: f64, p: f64) -> f64 {
                self.0.grad_p(x, p)
            }
            fn grad_x(&self, x: f64, p: f64) -> f64 {
                self.0.grad_x(x, p)
            }
        }
        let (m, mu0, _, base, _) = setup();
        let bare = ModelSpec {
            major_hamiltonian: Arc::new(Bare(QuadraticHamiltonian::new(1.0))),
            ..m
        };
        let dir = Direction {
            dx0: 1.0,
            dmu: SignedMeasure::zeros(mu0.grid()),
        };
        match solve_linearized(&base, &dir, &bare, &LinearizedConfig::default()) {
            Err(Error::MissingDerivatives(v)) => assert_eq!(v, vec!["hess_pp", "hess_xp"]),
            other => panic!("{other:?}"),
        }
    }
}
