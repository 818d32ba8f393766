use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::major::{driftless_walk, solve_major_with, MajorConfig, MajorTriple};
use crate::minor::{solve_minor_with, MinorConfig, MinorSolution};
use crate::model::{ModelSpec, Terminal};
use crate::torus::DensityField;
use crate::tree::{simulate_major_forward, NoiseTree, TreeProcess};

/// Starting major trajectory of the outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OuterInit {
    /// `X0 = x0` on every node.
    Constant,
    DriftlessWalk,
    /// Walk with constant drift.
    Walk { drift: f64 },
    #[serde(skip)]
    Given(TreeProcess<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Truncation {
    Off,
    Radius(f64),
    /// Untruncated pilot solve, then `R = max(2, 2 (sup|grad u| + sup|Z0|))`.
    Pilot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub minor: MinorConfig,
    pub major: MajorConfig,
    pub init: OuterInit,
    pub truncation: Truncation,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
            minor: MinorConfig::default(),
            major: MajorConfig::default(),
            init: OuterInit::DriftlessWalk,
            truncation: Truncation::Pilot,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumSolution {
    pub major: MajorTriple,
    pub minor: MinorSolution,
    /// `sup |X~0 - X0|` per outer iterate of the cold solve.
    pub outer_residuals: Vec<f64>,
    /// `outer_residuals[k] / outer_residuals[k-1]`.
    pub contraction_ratios: Vec<f64>,
    /// Residuals of the warm re-solve with truncated Hamiltonians, if any.
    pub truncated_residuals: Vec<f64>,
    pub truncation_radius: Option<f64>,
}

impl EquilibriumSolution {
    pub fn tree(&self) -> &NoiseTree {
        self.major.x0.tree()
    }

    /// Largest contraction ratio from the second iterate on.
    pub fn worst_ratio(&self) -> f64 {
        self.contraction_ratios.iter().fold(0.0, |a: f64, &r| a.max(r))
    }

    /// Largest `|p|` fed to either Hamiltonian.
    pub fn max_momentum(&self) -> f64 {
        let z = self.major.z0.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        z.max(self.minor.max_gradient)
    }
}

pub fn solve_equilibrium(
    model: &ModelSpec,
    x0: f64,
    mu0: &DensityField,
    tree: &NoiseTree,
    cfg: &EquilibriumConfig,
) -> Result<EquilibriumSolution> {
    solve_equilibrium_with(model, x0, mu0, tree, model, cfg, None)
}

/// [`solve_equilibrium`] with explicit terminal data and an optional warm
/// start (its trajectory replaces `cfg.init` when the trees agree).
pub fn solve_equilibrium_with(
    model: &ModelSpec,
    x0: f64,
    mu0: &DensityField,
    tree: &NoiseTree,
    terminal: &dyn Terminal,
    cfg: &EquilibriumConfig,
    warm: Option<&EquilibriumSolution>,
) -> Result<EquilibriumSolution> {
    match cfg.truncation {
        Truncation::Off => outer_loop(model, x0, mu0, tree, terminal, cfg, warm),
        Truncation::Radius(r) => {
            let truncated = model.with_truncation(r)?;
            let sol = outer_loop(&truncated, x0, mu0, tree, terminal, cfg, warm)?;
            guard(&sol, r)?;
            Ok(EquilibriumSolution {
                truncation_radius: Some(r),
                ..sol
            })
        }
        Truncation::Pilot => {
            let pilot = outer_loop(&model.untruncated(), x0, mu0, tree, terminal, cfg, warm)?;
            let r = (2.0 * (pilot.minor.max_gradient + sup_abs(&pilot.major.z0))).max(2.0);
            let truncated = model.with_truncation(r)?;
            let sol = outer_loop(&truncated, x0, mu0, tree, terminal, cfg, Some(&pilot))?;
            guard(&sol, r)?;
            Ok(EquilibriumSolution {
                outer_residuals: pilot.outer_residuals,
                contraction_ratios: pilot.contraction_ratios,
                truncated_residuals: sol.outer_residuals,
                truncation_radius: Some(r),
                ..sol
            })
        }
    }
}

fn sup_abs(p: &TreeProcess<f64>) -> f64 {
    p.values().iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn guard(sol: &EquilibriumSolution, radius: f64) -> Result<()> {
    let reached = sol.max_momentum();
    if reached > radius {
        return Err(Error::TruncationZone { reached, radius });
    }
    Ok(())
}

pub fn initial_trajectory(init: &OuterInit, tree: &NoiseTree, x0: f64, sigma0: f64) -> Result<TreeProcess<f64>> {
    Ok(match init {
        OuterInit::Constant => TreeProcess::constant(*tree, x0),
        OuterInit::DriftlessWalk => driftless_walk(tree, x0, sigma0),
        OuterInit::Walk { drift } => simulate_major_forward(x0, &TreeProcess::constant(*tree, *drift), sigma0, tree),
        OuterInit::Given(x) => {
            if x.tree() != tree {
                return Err(Error::LengthMismatch {
                    expected: tree.node_count(),
                    got: x.tree().node_count(),
                });
            }
            x.clone()
        }
    })
}

/// One application of the outer map: minor solve against `x`, then the major
/// solve against the resulting density tree.
#[allow(clippy::too_many_arguments)]
pub fn apply_outer_map(
    model: &ModelSpec,
    x0: f64,
    mu0: &DensityField,
    terminal: &dyn Terminal,
    x: &TreeProcess<f64>,
    minor_cfg: &MinorConfig,
    major_cfg: &MajorConfig,
    warm: Option<(&MinorSolution, &MajorTriple)>,
) -> Result<(MinorSolution, MajorTriple)> {
    let minor = solve_minor_with(x, mu0, model, terminal, minor_cfg, warm.map(|w| w.0))?;
    let major = solve_major_with(&minor.mu, model, terminal, x0, major_cfg, warm.map(|w| w.1))?;
    Ok((minor, major))
}

fn outer_loop(
    model: &ModelSpec,
    x0: f64,
    mu0: &DensityField,
    tree: &NoiseTree,
    terminal: &dyn Terminal,
    cfg: &EquilibriumConfig,
    warm: Option<&EquilibriumSolution>,
) -> Result<EquilibriumSolution> {
    let warm = warm.filter(|w| w.tree() == tree);
    let mut x = match warm {
        Some(w) => w.major.x0.clone(),
        None => initial_trajectory(&cfg.init, tree, x0, model.sigma0)?,
    };
    let mut prev: Option<(MinorSolution, MajorTriple)> = warm.map(|w| (w.minor.clone(), w.major.clone()));
    let mut residuals: Vec<f64> = Vec::new();
    let mut ratios = Vec::new();
    let mut stalled = 0;
    for _ in 0..cfg.max_iter {
        let (minor, major) = apply_outer_map(
            model,
            x0,
            mu0,
            terminal,
            &x,
            &cfg.minor,
            &cfg.major,
            prev.as_ref().map(|(a, b)| (a, b)),
        )?;
        let res = x
            .values()
            .iter()
            .zip(major.x0.values())
            .fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        if let Some(&last) = residuals.last() {
            let r = if last > 0.0 { res / last } else { 0.0 };
            ratios.push(r);
            stalled = if r >= 1.0 { stalled + 1 } else { 0 };
        }
        residuals.push(res);
        if res <= cfg.tol {
            return Ok(EquilibriumSolution {
                major,
                minor,
                outer_residuals: residuals,
                contraction_ratios: ratios,
                truncated_residuals: Vec::new(),
                truncation_radius: model.truncation,
            });
        }
        if stalled >= 3 {
            return Err(Error::NoContraction { ratios });
        }
        x = major.x0.clone();
        prev = Some((minor, major));
    }
    Err(Error::NoConvergence {
        what: "outer fixed point",
        iterations: residuals.len(),
        last: residuals.last().copied().unwrap_or(f64::NAN),
        residuals,
    })
}

/// Outcome of one contraction probe at horizon `T`.
#[derive(Debug, Clone, Serialize)]
pub struct ContractionProbe {
    pub horizon: f64,
    pub worst_ratio: f64,
    pub converged: bool,
}

/// Contraction probe: solve on `[0, T]` with `depth` levels and report the
/// worst ratio from the second iterate on.
pub fn probe_contraction(
    model: &ModelSpec,
    x0: f64,
    mu0: &DensityField,
    depth: usize,
    horizon: f64,
    cfg: &EquilibriumConfig,
) -> Result<ContractionProbe> {
    let m = model.with_horizon(horizon);
    let tree = NoiseTree::over(horizon, depth)?;
    let cfg = EquilibriumConfig {
        truncation: Truncation::Off,
        ..cfg.clone()
    };
    Ok(match solve_equilibrium(&m, x0, mu0, &tree, &cfg) {
        Ok(sol) => ContractionProbe {
            horizon,
            worst_ratio: sol.worst_ratio(),
            converged: true,
        },
        Err(Error::NoContraction { ratios }) => ContractionProbe {
            horizon,
            worst_ratio: ratios.iter().fold(0.0, |a: f64, &r| a.max(r)),
            converged: false,
        },
        Err(Error::NoConvergence { residuals, .. }) => ContractionProbe {
            horizon,
            worst_ratio: residuals
                .windows(2)
                .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
                .fold(0.0, f64::max),
            converged: false,
        },
        Err(Error::BoxExit { .. }) | Err(Error::Cfl(_)) => ContractionProbe {
            horizon,
            worst_ratio: f64::INFINITY,
            converged: false,
        },
        Err(e) => return Err(e),
    })
}

/// Bisects for the largest `T` in `[lo, hi]` whose outer ratios stay at or
/// below `target`. Returns the threshold and every probe.
#[allow(clippy::too_many_arguments)]
pub fn bisect_contraction_threshold(
    model: &ModelSpec,
    x0: f64,
    mu0: &DensityField,
    depth: usize,
    mut lo: f64,
    mut hi: f64,
    target: f64,
    steps: usize,
    cfg: &EquilibriumConfig,
) -> Result<(f64, Vec<ContractionProbe>)> {
    let ok = |p: &ContractionProbe| p.converged && p.worst_ratio <= target;
    let mut probes = Vec::new();
    let top = probe_contraction(model, x0, mu0, depth, hi, cfg)?;
    let top_ok = ok(&top);
    probes.push(top);
    if top_ok {
        return Ok((hi, probes));
    }
    let bottom = probe_contraction(model, x0, mu0, depth, lo, cfg)?;
    let bottom_ok = ok(&bottom);
    probes.push(bottom);
    if !bottom_ok {
        return Ok((0.0, probes));
    }
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        let p = probe_contraction(model, x0, mu0, depth, mid, cfg)?;
        if ok(&p) {
            lo = mid;
        } else {
            hi = mid;
        }
        probes.push(p);
    }
    Ok((lo, probes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::major::solve_major_fbsde;
    use crate::model::builtin_model;
    use crate::torus::{wasserstein1, PeriodicGrid};
    use std::collections::BTreeMap;

    fn model(name: &str) -> ModelSpec {
        builtin_model(name, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn zero_costs_converge_in_one_iteration() {
        let m = model("zero");
        let g = PeriodicGrid::new(16).unwrap();
        let tree = NoiseTree::over(0.5, 4).unwrap();
        let sol = solve_equilibrium(&m, 0.0, &DensityField::uniform(g), &tree, &EquilibriumConfig::default()).unwrap();
        assert_eq!(sol.outer_residuals, vec![0.0]);
        assert_eq!(sol.major.x0, driftless_walk(&tree, 0.0, 1.0));
        assert!(sol.major.y0.values().iter().all(|v| *v == 0.0));
        assert!(sol.minor.u.values().iter().all(|f| f.sup_norm() == 0.0));
    }

    #[test]
    fn decoupled_lq_matches_the_standalone_major_solve() {
        let m = model("lq");
        let g = PeriodicGrid::new(16).unwrap();
        let tree = NoiseTree::over(1.0, 6).unwrap();
        let mu0 = DensityField::uniform(g);
        let major = MajorConfig {
            tol: 1e-14,
            ..Default::default()
        };
        let cfg = EquilibriumConfig {
            major: major.clone(),
            ..Default::default()
        };
        let sol = solve_equilibrium(&m, 0.5, &mu0, &tree, &cfg).unwrap();
        let alone = solve_major_fbsde(&TreeProcess::constant(tree, mu0), &m, 0.5, &major).unwrap();
        for (a, b) in sol.major.y0.values().iter().zip(alone.y0.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in sol.major.x0.values().iter().zip(alone.x0.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn monotone_model_contracts_and_is_a_fixed_point() {
        let m = model("monotone-conv");
        let g = PeriodicGrid::new(64).unwrap();
        let tree = NoiseTree::over(0.5, 6).unwrap();
        let mu0 = DensityField::uniform(g);
        let cfg = EquilibriumConfig::default();
        let sol = solve_equilibrium(&m, 0.0, &mu0, &tree, &cfg).unwrap();
        assert!(sol.worst_ratio() <= 0.5, "{:?}", sol.contraction_ratios);
        assert!(sol.truncation_radius.is_some());
        let (_, again) = apply_outer_map(
            &m.with_truncation(sol.truncation_radius.unwrap()).unwrap(),
            0.0,
            &mu0,
            &m,
            &sol.major.x0,
            &cfg.minor,
            &cfg.major,
            None,
        )
        .unwrap();
        let d = again
            .x0
            .values()
            .iter()
            .zip(sol.major.x0.values())
            .fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        assert!(d <= 2.0 * cfg.tol, "{d}");
        for mu in sol.minor.mu.values() {
            assert!(wasserstein1(mu, mu).unwrap() == 0.0);
        }
    }

    #[test]
    fn small_radius_hits_the_truncation_guard() {
        let m = model("monotone-conv");
        let g = PeriodicGrid::new(32).unwrap();
        let tree = NoiseTree::over(0.5, 4).unwrap();
        let cfg = EquilibriumConfig {
            truncation: Truncation::Radius(2.0),
            ..Default::default()
        };
        let pilot = solve_equilibrium(
            &m,
            0.0,
            &DensityField::uniform(g),
            &tree,
            &EquilibriumConfig {
                truncation: Truncation::Off,
                ..Default::default()
            },
        )
        .unwrap();
        let r = solve_equilibrium(&m, 0.0, &DensityField::uniform(g), &tree, &cfg);
        if pilot.max_momentum() > 2.5 {
            assert!(matches!(r, Err(Error::TruncationZone { .. })), "{:?}", pilot.max_momentum());
        }
    }
}
