//! Problem data: Hamiltonians, Lagrangians, costs and the built-in models.

mod builtin;
mod costs;
mod hamiltonian;
mod monotonicity;
mod truncation;

use std::sync::Arc;

pub use builtin::{builtin_model, builtin_models, model_keys, BUILTIN_MODELS};
pub use costs::{cosine_convolution, Costs, CouplingCosts};
pub use hamiltonian::{
    check_hamiltonian_derivatives, legendre, sampled_convexity, ConjugateHamiltonian, Hamiltonian,
    Lagrangian, Legendre, PolynomialLagrangian, QuadraticHamiltonian, QuadraticLagrangian,
    LEGENDRE_BOX, LEGENDRE_TOL,
};
pub use monotonicity::{check_lasry_lions, MonotonicityReport};
pub use truncation::{truncate_hamiltonian, TruncatedHamiltonian};

use crate::error::{Error, Result};
use crate::torus::{DensityField, PeriodicGrid, ScalarField};

/// Terminal data `(g0, g)` of a solve on `[t, T]`; the model's own costs or
/// tabulated master fields during continuation.
pub trait Terminal: Send + Sync {
    fn major(&self, x0: f64, mu: &DensityField) -> Result<f64>;
    fn minor(&self, x0: f64, mu: &DensityField) -> Result<ScalarField>;
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub major_hamiltonian: Arc<dyn Hamiltonian>,
    pub minor_hamiltonian: Arc<dyn Hamiltonian>,
    pub major_lagrangian: Arc<dyn Lagrangian>,
    pub minor_lagrangian: Arc<dyn Lagrangian>,
    pub costs: Arc<dyn Costs>,
    pub sigma0: f64,
    pub horizon: f64,
    /// Half-width of the major-state box; `None` means `4 sigma0 sqrt(T)`.
    pub x0_domain: Option<f64>,
    /// Set for models meant to satisfy the long-time assumptions.
    pub assumption_b: bool,
    /// Radius the Hamiltonians were truncated at, if any.
    pub truncation: Option<f64>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0) || !self.sigma0.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma0 = {}", self.sigma0)));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidParameter(format!("T = {}", self.horizon)));
        }
        if let Some(w) = self.x0_domain {
            if !(w > 0.0) {
                return Err(Error::InvalidParameter(format!("x0_domain = {w}")));
            }
        }
        if self.assumption_b {
            if self.sigma0 < 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "long-time experiments need sigma0 >= 1, got {}",
                    self.sigma0
                )));
            }
            let g = PeriodicGrid::new(8)?;
            let mu = DensityField::uniform(g);
            if self.costs.major_long_time(0.0).is_none() {
                return Err(Error::MissingCoefficient("F0"));
            }
            if self.costs.minor_long_time(&mu).is_none() {
                return Err(Error::MissingCoefficient("F"));
            }
        }
        Ok(())
    }

    pub fn x0_half_width(&self) -> f64 {
        self.x0_domain
            .unwrap_or(4.0 * self.sigma0 * self.horizon.sqrt())
    }

    /// Box the major state must stay in on `tree` from `x0`: the configured
    /// domain, else the larger of `4 sigma0 sqrt(T)` and 1.5 times the
    /// tree's reach `|x0| + sigma0 K sqrt(dt)`.
    pub fn box_half_width(&self, depth: usize, dt: f64, x0: f64) -> f64 {
        match self.x0_domain {
            Some(w) => w,
            None => {
                let reach = x0.abs() + self.sigma0 * depth as f64 * dt.sqrt();
                self.x0_half_width().max(1.5 * reach)
            }
        }
    }

    pub fn with_sigma0(&self, sigma0: f64) -> Self {
        Self {
            sigma0,
            ..self.clone()
        }
    }

    pub fn with_horizon(&self, horizon: f64) -> Self {
        Self {
            horizon,
            ..self.clone()
        }
    }

    /// Copy whose Hamiltonians are replaced by their truncations at `radius`.
    pub fn with_truncation(&self, radius: f64) -> Result<Self> {
        let base = self.untruncated();
        Ok(Self {
            major_hamiltonian: Arc::new(truncate_hamiltonian(base.major_hamiltonian.clone(), radius)?),
            minor_hamiltonian: Arc::new(truncate_hamiltonian(base.minor_hamiltonian.clone(), radius)?),
            truncation: Some(radius),
            ..base
        })
    }

    /// Copy with any truncation undone.
    pub fn untruncated(&self) -> Self {
        Self {
            major_hamiltonian: strip_truncation(&self.major_hamiltonian),
            minor_hamiltonian: strip_truncation(&self.minor_hamiltonian),
            truncation: None,
            ..self.clone()
        }
    }

    /// Running BSDE driver `f0 + L0(x0, -grad_p H0(x0, z))`, with the
    /// Lagrangian term written through the Fenchel identity
    /// `L0(x, -H0_p) = z H0_p - H0` so it stays exact after truncation.
    pub fn major_driver(&self, t: f64, x0: f64, z: f64, mu: &DensityField) -> f64 {
        let h = &self.major_hamiltonian;
        self.costs.major_running(t, x0, mu) + z * h.grad_p(x0, z) - h.eval(x0, z)
    }

    /// Quadrature of `int_0^horizon sup |f0_t - F0| dt` and
    /// `int_0^horizon sup |f_t - F| dt` over sampled states.
    pub fn long_time_defect(&self, grid: PeriodicGrid, horizon: f64, steps: usize) -> Result<(f64, f64)> {
        let half = self.x0_half_width();
        let x0s: Vec<f64> = (0..=20).map(|i| -half + 2.0 * half * i as f64 / 20.0).collect();
        let mus = sample_densities(grid);
        let mut major_sup = Vec::with_capacity(steps + 1);
        let mut minor_sup = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let t = horizon * k as f64 / steps as f64;
            let (mut a, mut b) = (0.0f64, 0.0f64);
            for mu in &mus {
                let big_f = self
                    .costs
                    .minor_long_time(mu)
                    .ok_or(Error::MissingCoefficient("F"))?;
                for &x0 in &x0s {
                    let big_f0 = self
                        .costs
                        .major_long_time(x0)
                        .ok_or(Error::MissingCoefficient("F0"))?;
                    a = a.max((self.costs.major_running(t, x0, mu) - big_f0).abs());
                    b = b.max(self.costs.minor_running(t, x0, mu).sup_distance(&big_f));
                }
            }
            major_sup.push(a);
            minor_sup.push(b);
        }
        let dt = horizon / steps as f64;
        let trapezoid = |v: &[f64]| {
            dt * (v.iter().sum::<f64>() - 0.5 * (v[0] + v[v.len() - 1]))
        };
        Ok((trapezoid(&major_sup), trapezoid(&minor_sup)))
    }
}

fn strip_truncation(h: &Arc<dyn Hamiltonian>) -> Arc<dyn Hamiltonian> {
    match h.as_truncated() {
        Some(t) => t.inner().clone(),
        None => h.clone(),
    }
}

fn sample_densities(grid: PeriodicGrid) -> Vec<DensityField> {
    use std::f64::consts::PI;
    let mut out = vec![DensityField::uniform(grid)];
    for &(c, w) in &[(0.2, 0.08), (0.55, 0.15), (0.9, 0.05)] {
        let bump = DensityField::from_profile(grid, move |x| {
            let d = (x - c).rem_euclid(1.0);
            let d = d.min(1.0 - d);
            (-(d / w).powi(2)).exp() + 1e-3
        });
        if let Ok(b) = bump {
            out.push(b);
        }
    }
    if let Ok(m) = DensityField::from_profile(grid, |x| 1.0 + 0.9 * (2.0 * PI * x).cos()) {
        out.push(m);
    }
    out
}

impl Terminal for ModelSpec {
    fn major(&self, x0: f64, mu: &DensityField) -> Result<f64> {
        Ok(self.costs.major_terminal(x0, mu))
    }
    fn minor(&self, x0: f64, mu: &DensityField) -> Result<ScalarField> {
        Ok(self.costs.minor_terminal(x0, mu))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_round_trip() {
        let m = builtin_model("lq", &Default::default()).unwrap();
        let t = m.with_truncation(6.0).unwrap();
        assert_eq!(t.truncation, Some(6.0));
        assert_eq!(t.major_hamiltonian.eval(0.0, 2.0), 2.0);
        assert!(t.major_hamiltonian.as_truncated().is_some());
        let back = t.untruncated();
        assert!(back.major_hamiltonian.as_truncated().is_none());
        let again = t.with_truncation(8.0).unwrap();
        assert_eq!(again.major_hamiltonian.as_truncated().unwrap().radius(), 8.0);
    }

    #[test]
    fn driver_matches_lagrangian_form() {
        let m = builtin_model("lq", &Default::default()).unwrap();
        let g = PeriodicGrid::new(8).unwrap();
        let mu = DensityField::uniform(g);
        for &z in &[-2.0, 0.0, 0.7] {
            let h = &m.major_hamiltonian;
            let direct =
                m.costs.major_running(0.1, 0.3, &mu) + m.major_lagrangian.eval(0.3, -h.grad_p(0.3, z));
            assert!((m.major_driver(0.1, 0.3, z, &mu) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn validation() {
        let mut m = builtin_model("assumption-b", &Default::default()).unwrap();
        assert!(m.validate().is_ok());
        m.sigma0 = 0.5;
        assert!(m.validate().is_err());
        let mut m = builtin_model("lq", &Default::default()).unwrap();
        m.horizon = 0.0;
        assert!(m.validate().is_err());
    }
}
