use std::f64::consts::PI;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::torus::{DensityField, ScalarField};

const X0_FD_STEP: f64 = 1e-5;

/// Running and terminal costs of both players.
///
/// `f0`/`g0` belong to the major player, `f`/`g` to the minor population.
/// The optional long-time coefficients `F0`, `F` are the limits the running
/// costs relax to.
pub trait Costs: Send + Sync + Debug {
    fn major_running(&self, t: f64, x0: f64, mu: &DensityField) -> f64;
    fn major_terminal(&self, x0: f64, mu: &DensityField) -> f64;
    fn minor_running(&self, t: f64, x0: f64, mu: &DensityField) -> ScalarField;
    fn minor_terminal(&self, x0: f64, mu: &DensityField) -> ScalarField;

    fn major_long_time(&self, _x0: f64) -> Option<f64> {
        None
    }
    fn minor_long_time(&self, _mu: &DensityField) -> Option<ScalarField> {
        None
    }

    fn major_running_dx0(&self, t: f64, x0: f64, mu: &DensityField) -> f64 {
        let e = X0_FD_STEP;
        (self.major_running(t, x0 + e, mu) - self.major_running(t, x0 - e, mu)) / (2.0 * e)
    }
    fn major_terminal_dx0(&self, x0: f64, mu: &DensityField) -> f64 {
        let e = X0_FD_STEP;
        (self.major_terminal(x0 + e, mu) - self.major_terminal(x0 - e, mu)) / (2.0 * e)
    }
    fn minor_running_dx0(&self, t: f64, x0: f64, mu: &DensityField) -> ScalarField {
        let e = X0_FD_STEP;
        let up = self.minor_running(t, x0 + e, mu);
        let dn = self.minor_running(t, x0 - e, mu);
        up.axpby(0.5 / e, &dn, -0.5 / e)
    }
    fn minor_terminal_dx0(&self, x0: f64, mu: &DensityField) -> ScalarField {
        let e = X0_FD_STEP;
        let up = self.minor_terminal(x0 + e, mu);
        let dn = self.minor_terminal(x0 - e, mu);
        up.axpby(0.5 / e, &dn, -0.5 / e)
    }
}

/// Fourier moments `(sum_j cos(2 pi k x_j) mu_j, sum_j sin(2 pi k x_j) mu_j)`.
fn moments(mu: &DensityField, k: usize) -> (f64, f64) {
    let g = mu.grid();
    let w = 2.0 * PI * k as f64;
    g.centers()
        .zip(mu.masses())
        .fold((0.0, 0.0), |(c, s), (x, m)| {
            (c + m * (w * x).cos(), s + m * (w * x).sin())
        })
}

/// Convolution `(rho * mu)(x)` for `rho(z) = sum_k weights[k-1] cos(2 pi k z)`.
pub fn cosine_convolution(weights: &[f64], mu: &DensityField) -> ScalarField {
    let g = mu.grid();
    let mut out = vec![0.0; g.n()];
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let k = i + 1;
        let (c, s) = moments(mu, k);
        let freq = 2.0 * PI * k as f64;
        for (o, x) in out.iter_mut().zip(g.centers()) {
            *o += w * ((freq * x).cos() * c + (freq * x).sin() * s);
        }
    }
    ScalarField::from_raw(g, out)
}

/// The coefficient family behind every built-in model.
///
/// Major: `f0 = offset + q x0^2/2 + kappa x0^2/(1+x0^2)
///   + e^{-r t} (theta/(1+x0^2) - b int cos(2 pi (y - x0)) dmu(y))`,
/// `g0 = q_T x0^2/2 - b_T int cos(2 pi (y - x0)) dmu(y)`.
///
/// Minor: `f = a (rho * mu)(x) + c e^{-r t} cos(2 pi (x - x0))`,
/// `g = a_T (rho * mu)(x) + c_T cos(2 pi (x - x0)) + amp cos(2 pi x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingCosts {
    pub major_offset: f64,
    pub confinement: f64,
    pub terminal_confinement: f64,
    pub bounded_confinement: f64,
    pub major_bump: f64,
    pub major_pull: f64,
    pub terminal_major_pull: f64,
    pub kernel: Vec<f64>,
    pub interaction: f64,
    pub terminal_interaction: f64,
    pub minor_repulsion: f64,
    pub terminal_minor_repulsion: f64,
    pub terminal_profile: f64,
    /// Rate `r` of the decaying interaction terms; `0` means no decay.
    pub decay_rate: f64,
    /// Whether `F0`, `F` are exposed.
    pub long_time: bool,
}

impl CouplingCosts {
    pub fn zero() -> Self {
        Self {
            major_offset: 0.0,
            confinement: 0.0,
            terminal_confinement: 0.0,
            bounded_confinement: 0.0,
            major_bump: 0.0,
            major_pull: 0.0,
            terminal_major_pull: 0.0,
            kernel: vec![1.0, 0.5],
            interaction: 0.0,
            terminal_interaction: 0.0,
            minor_repulsion: 0.0,
            terminal_minor_repulsion: 0.0,
            terminal_profile: 0.0,
            decay_rate: 0.0,
            long_time: false,
        }
    }

    fn decay(&self, t: f64) -> f64 {
        if self.decay_rate == 0.0 {
            1.0
        } else {
            (-self.decay_rate * t).exp()
        }
    }

    fn major_static(&self, x0: f64) -> f64 {
        self.major_offset
            + 0.5 * self.confinement * x0 * x0
            + self.bounded_confinement * x0 * x0 / (1.0 + x0 * x0)
    }

    fn major_static_dx0(&self, x0: f64) -> f64 {
        let d = 1.0 + x0 * x0;
        self.confinement * x0 + self.bounded_confinement * 2.0 * x0 / (d * d)
    }

    /// `int cos(2 pi (y - x0)) dmu(y)` and its `x0`-derivative.
    fn proximity(x0: f64, mu: &DensityField) -> (f64, f64) {
        let (c, s) = moments(mu, 1);
        let w = 2.0 * PI * x0;
        (
            w.cos() * c + w.sin() * s,
            2.0 * PI * (-w.sin() * c + w.cos() * s),
        )
    }

    fn interaction_field(&self, a: f64, mu: &DensityField) -> ScalarField {
        if a == 0.0 {
            return ScalarField::zeros(mu.grid());
        }
        cosine_convolution(&self.kernel, mu).scaled(a)
    }
}

impl Costs for CouplingCosts {
    fn major_running(&self, t: f64, x0: f64, mu: &DensityField) -> f64 {
        let mut v = self.major_static(x0);
        if self.major_bump != 0.0 {
            v += self.major_bump * self.decay(t) / (1.0 + x0 * x0);
        }
        if self.major_pull != 0.0 {
            v -= self.major_pull * self.decay(t) * Self::proximity(x0, mu).0;
        }
        v
    }

    fn major_terminal(&self, x0: f64, mu: &DensityField) -> f64 {
        let mut v = 0.5 * self.terminal_confinement * x0 * x0;
        if self.terminal_major_pull != 0.0 {
            v -= self.terminal_major_pull * Self::proximity(x0, mu).0;
        }
        v
    }

    fn minor_running(&self, t: f64, x0: f64, mu: &DensityField) -> ScalarField {
        let mut f = self.interaction_field(self.interaction, mu);
        if self.minor_repulsion != 0.0 {
            let c = self.minor_repulsion * self.decay(t);
            let g = mu.grid();
            for (v, x) in f.values_mut().iter_mut().zip(g.centers()) {
                *v += c * (2.0 * PI * (x - x0)).cos();
            }
        }
        f
    }

    fn minor_terminal(&self, x0: f64, mu: &DensityField) -> ScalarField {
        let mut g = self.interaction_field(self.terminal_interaction, mu);
        let grid = mu.grid();
        let (c, amp) = (self.terminal_minor_repulsion, self.terminal_profile);
        if c != 0.0 || amp != 0.0 {
            for (v, x) in g.values_mut().iter_mut().zip(grid.centers()) {
                *v += c * (2.0 * PI * (x - x0)).cos() + amp * (2.0 * PI * x).cos();
            }
        }
        g
    }

    fn major_long_time(&self, x0: f64) -> Option<f64> {
        self.long_time.then(|| self.major_static(x0))
    }

    fn minor_long_time(&self, mu: &DensityField) -> Option<ScalarField> {
        self.long_time
            .then(|| self.interaction_field(self.interaction, mu))
    }

    fn major_running_dx0(&self, t: f64, x0: f64, mu: &DensityField) -> f64 {
        let mut v = self.major_static_dx0(x0);
        if self.major_bump != 0.0 {
            let d = 1.0 + x0 * x0;
            v -= self.major_bump * self.decay(t) * 2.0 * x0 / (d * d);
        }
        if self.major_pull != 0.0 {
            v -= self.major_pull * self.decay(t) * Self::proximity(x0, mu).1;
        }
        v
    }

    fn major_terminal_dx0(&self, x0: f64, mu: &DensityField) -> f64 {
        let mut v = self.terminal_confinement * x0;
        if self.terminal_major_pull != 0.0 {
            v -= self.terminal_major_pull * Self::proximity(x0, mu).1;
        }
        v
    }

    fn minor_running_dx0(&self, t: f64, x0: f64, mu: &DensityField) -> ScalarField {
        let c = self.minor_repulsion * self.decay(t);
        ScalarField::from_fn(mu.grid(), |x| c * 2.0 * PI * (2.0 * PI * (x - x0)).sin())
    }

    fn minor_terminal_dx0(&self, x0: f64, mu: &DensityField) -> ScalarField {
        let c = self.terminal_minor_repulsion;
        ScalarField::from_fn(mu.grid(), |x| c * 2.0 * PI * (2.0 * PI * (x - x0)).sin())
    }
}
