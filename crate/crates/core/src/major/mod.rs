//! The major player's FBSDE on the scenario tree, the auxiliary HJB for
//! `w0` and the major BMO diagnostic.

mod hjb;

pub use hjb::{major_bmo_diagnostic, major_bmo_sums, solve_w0, AuxiliaryHjb, BoxGrid, W0Config};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Terminal};
use crate::torus::DensityField;
use crate::tree::{simulate_major_forward, TreeProcess};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the new `Z` in the drift of the next forward pass.
    pub damping: f64,
}

impl Default for MajorConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 300,
            damping: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MajorTriple {
    pub x0: TreeProcess<f64>,
    pub y0: TreeProcess<f64>,
    /// Martingale integrand; zero at the leaves.
    pub z0: TreeProcess<f64>,
    pub picard_residuals: Vec<f64>,
}

impl MajorTriple {
    pub fn iterations(&self) -> usize {
        self.picard_residuals.len()
    }
}

pub fn solve_major_fbsde(
    mu: &TreeProcess<DensityField>,
    model: &ModelSpec,
    x0_init: f64,
    cfg: &MajorConfig,
) -> Result<MajorTriple> {
    solve_major_with(mu, model, model, x0_init, cfg, None)
}

/// [`solve_major_fbsde`] with explicit terminal data and an optional warm
/// start for `Z`.
pub fn solve_major_with(
    mu: &TreeProcess<DensityField>,
    model: &ModelSpec,
    terminal: &dyn Terminal,
    x0_init: f64,
    cfg: &MajorConfig,
    warm: Option<&MajorTriple>,
) -> Result<MajorTriple> {
    let tree = *mu.tree();
    let h0 = model.major_hamiltonian.clone();
    let half = model.box_half_width(tree.depth(), tree.dt(), x0_init);
    let mut z = match warm {
        Some(w) if w.z0.tree().node_count() == tree.node_count() => w.z0.clone(),
        _ => TreeProcess::constant(tree, 0.0),
    };
    let omega = cfg.damping.clamp(1e-3, 1.0);
    let mut prev_x: Option<TreeProcess<f64>> = None;
    let mut residuals = Vec::new();
    for _ in 0..cfg.max_iter {
        let x = forward_with(&h0, &z, x0_init, model.sigma0)?;
        if let Some(&bad) = x.values().iter().find(|v| v.abs() > half) {
            return Err(Error::BoxExit { x: bad, half_width: half });
        }
        let (y, z_new) = backward_sweep(&x, mu, model, terminal)?;
        let res = match &prev_x {
            Some(p) => p
                .values()
                .iter()
                .zip(x.values())
                .fold(0.0f64, |a, (u, v)| a.max((u - v).abs())),
            None => f64::INFINITY,
        };
        residuals.push(res);
        if res <= cfg.tol {
            return Ok(MajorTriple {
                x0: x,
                y0: y,
                z0: z_new,
                picard_residuals: residuals,
            });
        }
        z = if omega >= 1.0 {
            z_new
        } else {
            TreeProcess::new(
                tree,
                z.values()
                    .iter()
                    .zip(z_new.values())
                    .map(|(a, b)| (1.0 - omega) * a + omega * b)
                    .collect(),
            )?
        };
        prev_x = Some(x);
    }
    Err(Error::NoConvergence {
        what: "major fixed point",
        iterations: residuals.len(),
        last: residuals.last().copied().unwrap_or(f64::NAN),
        residuals,
    })
}

/// Forward Euler pass; the drift at a node depends on that node's own state,
/// so it is evaluated while sweeping.
fn forward_with(
    h0: &std::sync::Arc<dyn crate::model::Hamiltonian>,
    z: &TreeProcess<f64>,
    x0_init: f64,
    sigma0: f64,
) -> Result<TreeProcess<f64>> {
    let tree = *z.tree();
    let s = tree.sqrt_dt();
    let dt = tree.dt();
    let mut x = vec![0.0; tree.node_count()];
    x[0] = x0_init;
    for id in 1..tree.node_count() {
        let p = (id - 1) / 2;
        x[id] = x[p] - h0.grad_p(x[p], *z.get(p)) * dt + sigma0 * tree.increment_sign(id) * s;
    }
    TreeProcess::new(tree, x)
}

/// Backward sweep for `(Y, Z)` given the state tree.
pub(crate) fn backward_sweep(
    x: &TreeProcess<f64>,
    mu: &TreeProcess<DensityField>,
    model: &ModelSpec,
    terminal: &dyn Terminal,
) -> Result<(TreeProcess<f64>, TreeProcess<f64>)> {
    let tree = *x.tree();
    let s = tree.sqrt_dt();
    let dt = tree.dt();
    let sigma0 = model.sigma0;
    let pair = TreeProcess::backward(
        tree,
        |id| Ok((terminal.major(*x.get(id), mu.get(id))?, 0.0)),
        |id, &(yd, _), &(yu, _)| {
            let z = (yu - yd) / (2.0 * sigma0 * s);
            let y = 0.5 * (yu + yd) + dt * model.major_driver(tree.time(id), *x.get(id), z, mu.get(id));
            Ok((y, z))
        },
    )?;
    Ok((pair.map(|p| p.0), pair.map(|p| p.1)))
}

/// Largest violation of `Y_child = Y_node - dt driver + sigma0 Z dB` over all
/// edges.
pub fn edge_identity_residual(triple: &MajorTriple, mu: &TreeProcess<DensityField>, model: &ModelSpec) -> f64 {
    let tree = *triple.x0.tree();
    let s = tree.sqrt_dt();
    let dt = tree.dt();
    (1..tree.node_count())
        .into_par_iter()
        .map(|id| {
            let p = (id - 1) / 2;
            let d = model.major_driver(tree.time(p), *triple.x0.get(p), *triple.z0.get(p), mu.get(p));
            let pred = triple.y0.get(p) - dt * d + model.sigma0 * triple.z0.get(p) * tree.increment_sign(id) * s;
            (pred - triple.y0.get(id)).abs()
        })
        .reduce(|| 0.0, f64::max)
}

/// Driftless `sigma0` walk from `x0`, the usual outer initialization.
pub fn driftless_walk(tree: &crate::tree::NoiseTree, x0: f64, sigma0: f64) -> TreeProcess<f64> {
    simulate_major_forward(x0, &TreeProcess::constant(*tree, 0.0), sigma0, tree)
}
