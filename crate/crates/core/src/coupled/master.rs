use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Terminal};
use crate::torus::{gradient_raw, laplacian_raw, wasserstein1, DensityField, ScalarField};
use crate::tree::NoiseTree;

use super::{solve_equilibrium_with, EquilibriumConfig, EquilibriumSolution};

type Key = (usize, u64, u64);

/// `(U0, U)` at the root of a re-solve from `(t_level, x0, mu)`.
#[derive(Debug, Clone, Serialize)]
pub struct MasterValue {
    pub u0: f64,
    pub u: ScalarField,
}

/// Master fields on the time levels of `tree`: each evaluation solves the
/// coupled system on the subtree from that level to the horizon.
pub struct MasterField {
    model: ModelSpec,
    terminal: Arc<dyn Terminal>,
    tree: NoiseTree,
    cfg: EquilibriumConfig,
    cache: RwLock<HashMap<Key, MasterValue>>,
}

impl std::fmt::Debug for MasterField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MasterField")
            .field("model", &self.model.name)
            .field("tree", &self.tree)
            .field("cached", &self.cache.read().map(|c| c.len()).unwrap_or(0))
            .finish()
    }
}

impl MasterField {
    pub fn new(model: &ModelSpec, tree: NoiseTree, cfg: &EquilibriumConfig) -> Self {
        Self::with_terminal(model, Arc::new(model.clone()), tree, cfg)
    }

    pub fn with_terminal(model: &ModelSpec, terminal: Arc<dyn Terminal>, tree: NoiseTree, cfg: &EquilibriumConfig) -> Self {
        Self {
            model: model.clone(),
            terminal,
            tree,
            cfg: cfg.clone(),
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn tree(&self) -> &NoiseTree {
        &self.tree
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn time(&self, level: usize) -> f64 {
        self.tree.t0() + level as f64 * self.tree.dt()
    }

    pub fn cached(&self) -> usize {
        self.cache.read().map(|c| c.len()).unwrap_or(0)
    }

    /// Full re-solve from `(t_level, x0, mu)`; `None` at the horizon.
    pub fn solve_from(
        &self,
        level: usize,
        x0: f64,
        mu: &DensityField,
        warm: Option<&EquilibriumSolution>,
    ) -> Result<Option<EquilibriumSolution>> {
        let k = self.tree.depth();
        if level > k {
            return Err(Error::InvalidParameter(format!("level {level} beyond depth {k}")));
        }
        if level == k {
            return Ok(None);
        }
        let sub = NoiseTree::new(k - level, self.tree.dt())?.starting_at(self.time(level));
        solve_equilibrium_with(&self.model, x0, mu, &sub, self.terminal.as_ref(), &self.cfg, warm).map(Some)
    }

    pub fn eval(&self, level: usize, x0: f64, mu: &DensityField) -> Result<MasterValue> {
        self.eval_warm(level, x0, mu, None)
    }

    /// [`MasterField::eval`] with a warm start for the re-solve.
    pub fn eval_warm(
        &self,
        level: usize,
        x0: f64,
        mu: &DensityField,
        warm: Option<&EquilibriumSolution>,
    ) -> Result<MasterValue> {
        let key = (level, x0.to_bits(), mu.bit_hash());
        if let Some(v) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let v = match self.solve_from(level, x0, mu, warm)? {
            None => MasterValue {
                u0: self.terminal.major(x0, mu)?,
                u: self.terminal.minor(x0, mu)?,
            },
            Some(sol) => MasterValue {
                u0: *sol.major.y0.root(),
                u: sol.minor.u.root().clone(),
            },
        };
        self.cache.write().expect("cache lock").entry(key).or_insert_with(|| v.clone());
        Ok(v)
    }

    pub fn u0(&self, level: usize, x0: f64, mu: &DensityField) -> Result<f64> {
        Ok(self.eval(level, x0, mu)?.u0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RepresentationSample {
    pub node: usize,
    pub level: usize,
    pub y0: f64,
    pub u0: f64,
    pub gap: f64,
}

/// Evenly spread interior nodes (levels `1..K`) of `tree`.
pub fn sample_interior_nodes(tree: &NoiseTree, count: usize, seed: u64) -> Vec<usize> {
    let k = tree.depth();
    if k < 2 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < 100 * count {
        tries += 1;
        let level = 1 + (out.len() % (k - 1));
        let path = rng.gen_range(0..1usize << level);
        let id = tree.node(level, path);
        if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}

/// `|Y0_node - U0(t_node, X0_node, mu_node)|` at the given nodes of a solved
/// tree, each right-hand side re-solved from the node's data.
pub fn representation_check(sol: &EquilibriumSolution, mf: &MasterField, nodes: &[usize]) -> Result<Vec<RepresentationSample>> {
    let tree = sol.tree();
    if tree.dt() != mf.tree().dt() || tree.depth() != mf.tree().depth() {
        return Err(Error::InvalidParameter("master field and solution use different trees".into()));
    }
    nodes
        .iter()
        .map(|&id| {
            let level = tree.level_of(id);
            let x = *sol.major.x0.get(id);
            let u0 = mf.u0(level, x, sol.minor.mu.get(id))?;
            let y0 = *sol.major.y0.get(id);
            Ok(RepresentationSample {
                node: id,
                level,
                y0,
                u0,
                gap: (y0 - u0).abs(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzTable {
    /// `(W1(mu, mu'), |U0(mu') - U0(mu)|, ratio)` per pair.
    pub pairs: Vec<(f64, f64, f64)>,
    pub constant: f64,
}

/// Measured `mu`-Lipschitz constant of `U0(t_level, x0, .)` over random
/// smooth perturbations of `mu`.
pub fn lipschitz_table(mf: &MasterField, level: usize, x0: f64, mu: &DensityField, count: usize, seed: u64) -> Result<LipschitzTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = mu.grid();
    let base = mf.u0(level, x0, mu)?;
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let k = rng.gen_range(1..=3) as f64;
        let phase: f64 = rng.gen_range(0.0..1.0);
        let amp: f64 = rng.gen_range(0.2..0.9);
        let bump = DensityField::from_profile(grid, |x| {
            1.0 + amp * (2.0 * std::f64::consts::PI * (k * x + phase)).cos()
        })?;
        let w: f64 = rng.gen_range(0.05..0.5);
        let other = mu.mix(&bump, w)?;
        let d = wasserstein1(mu, &other)?;
        let v = (mf.u0(level, x0, &other)? - base).abs();
        pairs.push((d, v, if d > 0.0 { v / d } else { 0.0 }));
    }
    let constant = pairs.iter().fold(0.0, |a: f64, p| a.max(p.2));
    Ok(LipschitzTable { pairs, constant })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualConfig {
    /// `x0` step of the state differences.
    pub dx0: f64,
    /// Mixture step of the flat derivatives.
    pub eps: f64,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        Self { dx0: 0.1, eps: 1e-2 }
    }
}

/// Terms of both master equations at one point.
#[derive(Debug, Clone, Serialize)]
pub struct MasterResidual {
    pub res_major: f64,
    pub res_minor: ScalarField,
    pub major_terms: MajorTerms,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MajorTerms {
    pub dt: f64,
    pub diffusion: f64,
    pub hamiltonian: f64,
    pub running: f64,
    pub measure: f64,
}

/// Assembles both master equations at `(t_level, x0, mu)` from finite
/// differences of re-solved master-field values:
///
/// `d_t V0 + sigma0^2/2 V0'' - H0(x0, V0') + f0
///   + sum_y mu_y [1/2 d_yy dV0(y) - d_y dV0(y) H_p(y, d_x U(y))]`
///
/// and, per cell `x`,
///
/// `d_t U + 1/2 U_xx - H(x, U_x) + f + sigma0^2/2 U'' - U' H0_p(x0, V0')
///   + sum_y mu_y [1/2 d_yy dU(x,y) - d_y dU(x,y) H_p(y, d_x U(y))]`,
///
/// where primes are `x0` derivatives and `dV0(y)`, `dU(x,y)` the flat
/// derivatives in `mu`. Returns zero residuals at the horizon.
pub fn master_equation_residual(
    mf: &MasterField,
    level: usize,
    x0: f64,
    mu: &DensityField,
    cfg: &ResidualConfig,
) -> Result<MasterResidual> {
    let k = mf.tree().depth();
    let grid = mu.grid();
    let n = grid.n();
    if level == k {
        return Ok(MasterResidual {
            res_major: 0.0,
            res_minor: ScalarField::zeros(grid),
            major_terms: MajorTerms {
                dt: 0.0,
                diffusion: 0.0,
                hamiltonian: 0.0,
                running: 0.0,
                measure: 0.0,
            },
        });
    }
    if level == 0 {
        return Err(Error::InvalidParameter("residual needs an interior level".into()));
    }
    let model = mf.model();
    let dt = mf.tree().dt();
    let t = mf.time(level);
    let base_sol = mf.solve_from(level, x0, mu, None)?.expect("interior level");
    let base = MasterValue {
        u0: *base_sol.major.y0.root(),
        u: base_sol.minor.u.root().clone(),
    };
    let later = mf.eval(level + 1, x0, mu)?;
    let earlier = mf.eval(level - 1, x0, mu)?;
    let right = mf.eval_warm(level, x0 + cfg.dx0, mu, Some(&base_sol))?;
    let left = mf.eval_warm(level, x0 - cfg.dx0, mu, Some(&base_sol))?;

    // flat derivatives by Richardson-halved mixture quotients, one re-solve
    // per (cell, step)
    let mut dv0 = vec![0.0; n];
    let mut du = vec![vec![0.0; n]; n];
    for y in 0..n {
        let point = DensityField::point_mass(grid, y);
        let q = |e: f64| -> Result<(f64, Vec<f64>)> {
            let v = mf.eval_warm(level, x0, &mu.mix(&point, e)?, Some(&base_sol))?;
            Ok((
                (v.u0 - base.u0) / e,
                v.u.values().iter().zip(base.u.values()).map(|(a, b)| (a - b) / e).collect(),
            ))
        };
        let (c0, cu) = q(cfg.eps)?;
        let (f0, fu) = q(0.5 * cfg.eps)?;
        dv0[y] = 2.0 * f0 - c0;
        for x in 0..n {
            du[y][x] = 2.0 * fu[x] - cu[x];
        }
    }
    let h = &model.minor_hamiltonian;
    let h0 = &model.major_hamiltonian;
    let ux = gradient_raw(grid, base.u.values());
    let hp: Vec<f64> = (0..n).map(|j| h.grad_p(grid.x(j), ux[j])).collect();
    // sum_y mu_y [1/2 d_yy D(y) - d_y D(y) H_p(y)]
    let measure_term = |d: &[f64]| -> f64 {
        let dy = gradient_raw(grid, d);
        let dyy = laplacian_raw(grid, d);
        (0..n).map(|y| mu.masses()[y] * (0.5 * dyy[y] - dy[y] * hp[y])).sum()
    };

    let s2 = model.sigma0 * model.sigma0;
    let d = cfg.dx0;
    let v0_t = (later.u0 - earlier.u0) / (2.0 * dt);
    let v0_x = (right.u0 - left.u0) / (2.0 * d);
    let v0_xx = (right.u0 - 2.0 * base.u0 + left.u0) / (d * d);
    let terms = MajorTerms {
        dt: v0_t,
        diffusion: 0.5 * s2 * v0_xx,
        hamiltonian: -h0.eval(x0, v0_x),
        running: model.costs.major_running(t, x0, mu),
        measure: measure_term(&dv0),
    };
    let res_major = terms.dt + terms.diffusion + terms.hamiltonian + terms.running + terms.measure;

    let uxx = laplacian_raw(grid, base.u.values());
    let f = model.costs.minor_running(t, x0, mu);
    let h0p = h0.grad_p(x0, v0_x);
    let res_minor: Vec<f64> = (0..n)
        .map(|x| {
            let col: Vec<f64> = (0..n).map(|y| du[y][x]).collect();
            let u_t = (later.u.values()[x] - earlier.u.values()[x]) / (2.0 * dt);
            let u_x0 = (right.u.values()[x] - left.u.values()[x]) / (2.0 * d);
            let u_x0x0 = (right.u.values()[x] - 2.0 * base.u.values()[x] + left.u.values()[x]) / (d * d);
            u_t + 0.5 * uxx[x] - h.eval(grid.x(x), ux[x]) + f.values()[x] + 0.5 * s2 * u_x0x0 - u_x0 * h0p
                + measure_term(&col)
        })
        .collect();
    Ok(MasterResidual {
        res_major,
        res_minor: ScalarField::new(grid, res_minor)?,
        major_terms: terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupled::Truncation;
    use crate::model::builtin_model;
    use crate::torus::PeriodicGrid;
    use std::collections::BTreeMap;

    fn cfg() -> EquilibriumConfig {
        EquilibriumConfig {
            tol: 1e-10,
            truncation: Truncation::Off,
            ..Default::default()
        }
    }

    #[test]
    fn horizon_returns_terminal_data() {
        let m = builtin_model("monotone-conv", &BTreeMap::new()).unwrap();
        let g = PeriodicGrid::new(16).unwrap();
        let tree = NoiseTree::over(0.5, 3).unwrap();
        let mf = MasterField::new(&m, tree, &cfg());
        let mu = DensityField::from_profile(g, |x| 1.0 + 0.5 * x).unwrap();
        let v = mf.eval(3, 0.4, &mu).unwrap();
        assert_eq!(v.u0, m.costs.major_terminal(0.4, &mu));
        assert_eq!(v.u, m.costs.minor_terminal(0.4, &mu));
        let r = master_equation_residual(&mf, 3, 0.4, &mu, &ResidualConfig::default()).unwrap();
        assert_eq!(r.res_major, 0.0);
        assert_eq!(r.res_minor.sup_norm(), 0.0);
    }

    #[test]
    fn evaluations_are_cached_and_deterministic() {
        let m = builtin_model("monotone-conv", &BTreeMap::new()).unwrap();
        let g = PeriodicGrid::new(16).unwrap();
        let tree = NoiseTree::over(0.5, 3).unwrap();
        let mf = MasterField::new(&m, tree, &cfg());
        let mu = DensityField::uniform(g);
        let a = mf.u0(1, 0.0, &mu).unwrap();
        assert_eq!(mf.cached(), 1);
        let b = mf.u0(1, 0.0, &mu).unwrap();
        assert_eq!(a, b);
        let fresh = MasterField::new(&m, tree, &cfg());
        assert_eq!(fresh.u0(1, 0.0, &mu).unwrap(), a);
    }

    #[test]
    fn representation_holds_on_interior_nodes() {
        let m = builtin_model("monotone-conv", &BTreeMap::new()).unwrap();
        let g = PeriodicGrid::new(16).unwrap();
        let tree = NoiseTree::over(0.5, 4).unwrap();
        let c = cfg();
        let sol = crate::coupled::solve_equilibrium(&m, 0.0, &DensityField::uniform(g), &tree, &c).unwrap();
        let pinned = EquilibriumConfig {
            minor: crate::minor::MinorConfig {
                substeps: sol.minor.substeps,
                adaptive_substeps: false,
                ..c.minor.clone()
            },
            ..c
        };
        let sol = crate::coupled::solve_equilibrium(&m, 0.0, &DensityField::uniform(g), &tree, &pinned).unwrap();
        let mf = MasterField::new(&m, tree, &pinned);
        let nodes = sample_interior_nodes(&tree, 5, 7);
        assert_eq!(nodes.len(), 5);
        for s in representation_check(&sol, &mf, &nodes).unwrap() {
            assert!(s.gap <= 1e-8, "{s:?}");
        }
    }

    #[test]
    fn zero_model_has_zero_residual() {
        let m = builtin_model("zero", &BTreeMap::new()).unwrap();
        let g = PeriodicGrid::new(8).unwrap();
        let tree = NoiseTree::over(1.0, 4).unwrap();
        let mf = MasterField::new(&m, tree, &cfg());
        let r = master_equation_residual(&mf, 2, 0.0, &DensityField::uniform(g), &ResidualConfig::default()).unwrap();
        assert_eq!(r.res_major, 0.0);
        assert_eq!(r.res_minor.sup_norm(), 0.0);
    }

    #[test]
    fn lipschitz_constant_is_finite() {
        let m = builtin_model("monotone-conv", &BTreeMap::new()).unwrap();
        let g = PeriodicGrid::new(16).unwrap();
        let tree = NoiseTree::over(0.5, 3).unwrap();
        let mf = MasterField::new(&m, tree, &cfg());
        let t = lipschitz_table(&mf, 1, 0.0, &DensityField::uniform(g), 4, 3).unwrap();
        assert_eq!(t.pairs.len(), 4);
        assert!(t.constant.is_finite() && t.constant > 0.0);
    }
}
