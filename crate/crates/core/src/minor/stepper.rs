use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::Hamiltonian;
use crate::torus::linalg::CyclicSystem;
use crate::torus::{
    finish_density, fp_transport_diffuse, fp_transport_diffuse_tangent, gradient_raw,
    hjb_step_raw, hjb_step_tangent, DensityField, PeriodicGrid, ScalarField, FLUX_SMOOTHING,
    HJB_DIFFUSION,
};

/// `m` PDE substeps of length `dt/m` across one tree step, for both the
/// density and the value field.
#[derive(Debug, Clone)]
pub(crate) struct Stepper {
    pub grid: PeriodicGrid,
    pub hamiltonian: Arc<dyn Hamiltonian>,
    pub substeps: usize,
    pub dt_sub: f64,
    sys: CyclicSystem,
}

impl Stepper {
    pub fn new(grid: PeriodicGrid, hamiltonian: Arc<dyn Hamiltonian>, dt: f64, substeps: usize) -> Result<Self> {
        let substeps = substeps.max(1);
        let dt_sub = dt / substeps as f64;
        Ok(Self {
            grid,
            hamiltonian,
            substeps,
            dt_sub,
            sys: CyclicSystem::implicit_diffusion(grid, dt_sub, HJB_DIFFUSION)?,
        })
    }

    /// Minor drift `b = -grad_p H(x, grad u)` and `max |grad u|`.
    pub fn drift(&self, u: &[f64]) -> (Vec<f64>, f64) {
        let p = gradient_raw(self.grid, u);
        let pmax = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let b = p
            .iter()
            .enumerate()
            .map(|(j, &pj)| -self.hamiltonian.grad_p(self.grid.x(j), pj))
            .collect();
        (b, pmax)
    }

    pub fn cfl(&self, drift: &[f64]) -> f64 {
        let bmax = drift.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        self.dt_sub * bmax / self.grid.h()
    }

    /// Substep count keeping `dt_sub max|b| / h <= target`.
    pub fn required_substeps(grid: PeriodicGrid, dt: f64, drift_max: f64, target: f64) -> usize {
        ((dt * drift_max / (target * grid.h())).ceil() as usize).max(1)
    }

    /// Density after one tree step under the drift generated by `u`.
    pub fn advance(&self, mu: &DensityField, drift: &[f64]) -> Result<DensityField> {
        let cfl = self.cfl(drift);
        if cfl > 1.0 {
            return Err(Error::Cfl(cfl));
        }
        let mut mass = mu.masses().to_vec();
        for _ in 0..self.substeps {
            mass = fp_transport_diffuse(self.grid, &mass, drift, self.dt_sub, FLUX_SMOOTHING, Some(&self.sys));
        }
        finish_density(self.grid, mass)
    }

    /// Tangent of [`Stepper::advance`] at `(mu, drift)` along `(dmu, ddrift)`.
    pub fn advance_tangent(&self, mu: &DensityField, drift: &[f64], dmu: &[f64], ddrift: &[f64]) -> Vec<f64> {
        let mut mass = mu.masses().to_vec();
        let mut dmass = dmu.to_vec();
        for _ in 0..self.substeps {
            let next_d = fp_transport_diffuse_tangent(
                self.grid,
                &mass,
                drift,
                &dmass,
                ddrift,
                self.dt_sub,
                FLUX_SMOOTHING,
                Some(&self.sys),
            );
            mass = fp_transport_diffuse(self.grid, &mass, drift, self.dt_sub, FLUX_SMOOTHING, Some(&self.sys));
            dmass = next_d;
        }
        dmass
    }

    /// Value one tree step earlier from `u_next` with a frozen source, and the
    /// largest gradient fed to the Hamiltonian.
    pub fn retreat(&self, u_next: Vec<f64>, source: &[f64]) -> (Vec<f64>, f64) {
        let mut u = u_next;
        let mut pmax = 0.0f64;
        for _ in 0..self.substeps {
            pmax = pmax.max(max_abs_gradient(self.grid, &u));
            u = hjb_step_raw(self.grid, &u, self.hamiltonian.as_ref(), source, self.dt_sub, &self.sys);
        }
        (u, pmax)
    }

    /// Tangent of [`Stepper::retreat`] with respect to `(u_next, source)`.
    pub fn retreat_tangent(&self, u_next: &[f64], du_next: &[f64], source: &[f64], dsource: &[f64]) -> Vec<f64> {
        let mut u = u_next.to_vec();
        let mut du = du_next.to_vec();
        for _ in 0..self.substeps {
            let next_d = hjb_step_tangent(self.grid, &u, &du, self.hamiltonian.as_ref(), dsource, self.dt_sub, &self.sys);
            u = hjb_step_raw(self.grid, &u, self.hamiltonian.as_ref(), source, self.dt_sub, &self.sys);
            du = next_d;
        }
        du
    }
}

pub(crate) fn max_abs_gradient(grid: PeriodicGrid, u: &[f64]) -> f64 {
    gradient_raw(grid, u).iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub(crate) fn average(a: &ScalarField, b: &ScalarField) -> Vec<f64> {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| 0.5 * (x + y))
        .collect()
}
