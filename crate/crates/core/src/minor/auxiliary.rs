use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Hamiltonian;
use crate::torus::{wasserstein1, DensityField, ScalarField};

use super::stepper::Stepper;
use super::MinorConfig;

/// Deterministic MFG paths on `steps + 1` equally spaced times.
#[derive(Debug, Clone, Serialize)]
pub struct AuxiliaryMfg {
    pub mu: Vec<DensityField>,
    pub u: Vec<ScalarField>,
    pub dt: f64,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

/// Deterministic MFG with running cost `coupling(mu)` and zero terminal
/// value, discretized exactly as one path of the minor tree solver.
pub fn solve_auxiliary_mfg(
    coupling: &(dyn Fn(&DensityField) -> ScalarField + Sync),
    hamiltonian: Arc<dyn Hamiltonian>,
    mu_init: &DensityField,
    horizon: f64,
    steps: usize,
    cfg: &MinorConfig,
) -> Result<AuxiliaryMfg> {
    if steps == 0 || !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon {horizon}, steps {steps}")));
    }
    let grid = mu_init.grid();
    let dt = horizon / steps as f64;
    let mut u = vec![ScalarField::zeros(grid); steps + 1];
    let mut substeps = cfg.substeps.max(1);
    let mut omega = cfg.damping.clamp(1e-3, 1.0);
    let mut prev_mu: Option<Vec<DensityField>> = None;
    let mut residuals = Vec::new();
    for iter in 1..=cfg.max_iter {
        let h = hamiltonian.as_ref();
        if cfg.adaptive_substeps {
            let steep = u
                .iter()
                .flat_map(|f| {
                    crate::torus::gradient_raw(grid, f.values())
                        .into_iter()
                        .enumerate()
                        .map(|(j, p)| h.grad_p(grid.x(j), p).abs())
                })
                .fold(0.0, f64::max);
            substeps = substeps.max(Stepper::required_substeps(grid, dt, steep, cfg.cfl));
        }
        let stepper = Stepper::new(grid, hamiltonian.clone(), dt, substeps)?;
        let mut mu = Vec::with_capacity(steps + 1);
        mu.push(mu_init.clone());
        for k in 0..steps {
            let (drift, _) = stepper.drift(u[k].values());
            let next = stepper.advance(&mu[k], &drift)?;
            mu.push(next);
        }
        let mut u_new = vec![ScalarField::zeros(grid); steps + 1];
        for k in (0..steps).rev() {
            let source = coupling(&mu[k]);
            let (v, _) = stepper.retreat(u_new[k + 1].values().to_vec(), source.values());
            u_new[k] = ScalarField::new(grid, v)?;
        }
        let du = u.iter().zip(&u_new).map(|(a, b)| a.sup_distance(b)).fold(0.0, f64::max);
        let dmu = match &prev_mu {
            Some(p) => {
                let mut m = 0.0f64;
                for (a, b) in p.iter().zip(&mu) {
                    m = m.max(wasserstein1(a, b)?);
                }
                m
            }
            None => f64::INFINITY,
        };
        let res = du + dmu;
        residuals.push(res);
        if res <= cfg.tol {
            return Ok(AuxiliaryMfg {
                mu,
                u: u_new,
                dt,
                iterations: iter,
                residuals,
            });
        }
        let n = residuals.len();
        if n >= 3 && residuals[n - 1] > residuals[n - 2] {
            omega = (omega * 0.5).max(1.0 / 64.0);
        }
        u = if omega >= 1.0 {
            u_new
        } else {
            u.iter().zip(&u_new).map(|(a, b)| a.axpby(1.0 - omega, b, omega)).collect()
        };
        prev_mu = Some(mu);
    }
    Err(Error::NoConvergence {
        what: "auxiliary MFG",
        iterations: residuals.len(),
        last: residuals.last().copied().unwrap_or(f64::NAN),
        residuals,
    })
}
