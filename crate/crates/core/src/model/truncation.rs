//! Globally Lipschitz, uniformly convex modification of a Hamiltonian that
//! coincides with it on `|p| <= R`.
//!
//! `H_R(x,p) = (H(x,p) - l/4 p^2) zeta(p) + l/2 phi(|p|)` where `l` is the
//! convexity modulus of `H`, `zeta` is a C^2 cutoff (1 on `[0,R]`, 0 beyond
//! `R^2`) and `phi` is the even profile with `phi'' = 1` on `[0,R]`,
//! `phi''(r) = r/R` on `[R,R^2]`, a linear ramp down to `R/2` on
//! `[R^2,2R^2]` and `phi''(r) = 2R^5/r^2` beyond.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::Hamiltonian;

#[derive(Debug, Clone)]
pub struct TruncatedHamiltonian {
    inner: Arc<dyn Hamiltonian>,
    radius: f64,
    lambda: f64,
    profile: RadialProfile,
}

pub fn truncate_hamiltonian(h: Arc<dyn Hamiltonian>, radius: f64) -> Result<TruncatedHamiltonian> {
    if !(radius >= 2.0) {
        return Err(Error::TruncationRadius(radius));
    }
    let lambda = h.convexity().ok_or_else(|| {
        Error::InvalidParameter("truncation needs a declared convexity modulus".into())
    })?;
    if h.hess_pp(0.0, 0.0).is_none() {
        return Err(Error::MissingDerivatives(vec!["hess_pp"]));
    }
    Ok(TruncatedHamiltonian {
        inner: h,
        radius,
        lambda,
        profile: RadialProfile::new(radius),
    })
}

impl TruncatedHamiltonian {
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn inner(&self) -> &Arc<dyn Hamiltonian> {
        &self.inner
    }

    /// `(zeta, zeta', zeta'')` at `p`.
    fn cutoff(&self, p: f64) -> (f64, f64, f64) {
        let r = self.radius;
        let width = r * r - r;
        let s = ((p.abs() - r) / width).clamp(0.0, 1.0);
        let smooth = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
        let d1 = 30.0 * s * s * (1.0 - s) * (1.0 - s);
        let d2 = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
        let sign = p.signum();
        (1.0 - smooth, -d1 * sign / width, -d2 / (width * width))
    }
}

impl Hamiltonian for TruncatedHamiltonian {
    fn eval(&self, x: f64, p: f64) -> f64 {
        if p.abs() <= self.radius {
            return self.inner.eval(x, p);
        }
        let (z, _, _) = self.cutoff(p);
        let (phi, _, _) = self.profile.eval(p.abs());
        (self.inner.eval(x, p) - 0.25 * self.lambda * p * p) * z + 0.5 * self.lambda * phi
    }

    fn grad_p(&self, x: f64, p: f64) -> f64 {
        if p.abs() <= self.radius {
            return self.inner.grad_p(x, p);
        }
        let l = self.lambda;
        let (z, dz, _) = self.cutoff(p);
        let (_, dphi, _) = self.profile.eval(p.abs());
        (self.inner.grad_p(x, p) - 0.5 * l * p) * z
            + (self.inner.eval(x, p) - 0.25 * l * p * p) * dz
            + 0.5 * l * dphi * p.signum()
    }

    fn grad_x(&self, x: f64, p: f64) -> f64 {
        if p.abs() <= self.radius {
            return self.inner.grad_x(x, p);
        }
        self.inner.grad_x(x, p) * self.cutoff(p).0
    }

    fn hess_pp(&self, x: f64, p: f64) -> Option<f64> {
        let hpp = self.inner.hess_pp(x, p)?;
        if p.abs() <= self.radius {
            return Some(hpp);
        }
        let l = self.lambda;
        let (z, dz, d2z) = self.cutoff(p);
        let (_, _, d2phi) = self.profile.eval(p.abs());
        Some(
            (hpp - 0.5 * l) * z
                + 2.0 * (self.inner.grad_p(x, p) - 0.5 * l * p) * dz
                + (self.inner.eval(x, p) - 0.25 * l * p * p) * d2z
                + 0.5 * l * d2phi,
        )
    }

    fn hess_xp(&self, x: f64, p: f64) -> Option<f64> {
        let hxp = self.inner.hess_xp(x, p)?;
        if p.abs() <= self.radius {
            return Some(hxp);
        }
        let (z, dz, _) = self.cutoff(p);
        Some(hxp * z + self.inner.grad_x(x, p) * dz)
    }

    fn convexity(&self) -> Option<f64> {
        self.inner.convexity()
    }

    fn as_truncated(&self) -> Option<&TruncatedHamiltonian> {
        Some(self)
    }
}

/// Piecewise closed form of `(phi, phi', phi'')` on `r >= 0`.
#[derive(Debug, Clone, Copy)]
struct RadialProfile {
    r: f64,
    /// `(phi, phi')` at the knots `R`, `R^2`, `2R^2`.
    knots: [(f64, f64); 3],
}

impl RadialProfile {
    fn new(r: f64) -> Self {
        let r2 = r * r;
        let at_r = (0.5 * r2, r);
        let (a1, b1) = Self::middle(r, at_r, r2);
        let (a2, b2) = Self::ramp(r, (a1, b1), 2.0 * r2);
        Self {
            r,
            knots: [at_r, (a1, b1), (a2, b2)],
        }
    }

    /// On `[R, R^2]`: `phi'' = s/R`.
    fn middle(r: f64, (phi0, dphi0): (f64, f64), s: f64) -> (f64, f64) {
        let ds = s - r;
        let dphi = dphi0 + (s * s - r * r) / (2.0 * r);
        let phi = phi0 + dphi0 * ds + ((s.powi(3) - r.powi(3)) / 3.0 - r * r * ds) / (2.0 * r);
        (phi, dphi)
    }

    /// On `[R^2, 2R^2]`: `phi'' = R - (s - R^2)/(2R)`.
    fn ramp(r: f64, (phi0, dphi0): (f64, f64), s: f64) -> (f64, f64) {
        let d = s - r * r;
        let dphi = dphi0 + r * d - d * d / (4.0 * r);
        let phi = phi0 + dphi0 * d + 0.5 * r * d * d - d.powi(3) / (12.0 * r);
        (phi, dphi)
    }

    fn eval(&self, s: f64) -> (f64, f64, f64) {
        let r = self.r;
        let r2 = r * r;
        if s <= r {
            (0.5 * s * s, s, 1.0)
        } else if s <= r2 {
            let (phi, dphi) = Self::middle(r, self.knots[0], s);
            (phi, dphi, s / r)
        } else if s <= 2.0 * r2 {
            let (phi, dphi) = Self::ramp(r, self.knots[1], s);
            (phi, dphi, r - (s - r2) / (2.0 * r))
        } else {
            let (phi0, dphi0) = self.knots[2];
            let s0 = 2.0 * r2;
            let c = 2.0 * r.powi(5);
            let dphi = dphi0 + c * (1.0 / s0 - 1.0 / s);
            let phi = phi0 + dphi0 * (s - s0) + c * ((s - s0) / s0 - (s / s0).ln());
            (phi, dphi, c / (s * s))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuadraticHamiltonian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn truncated(r: f64) -> TruncatedHamiltonian {
        truncate_hamiltonian(Arc::new(QuadraticHamiltonian::new(1.0)), r).unwrap()
    }

    #[test]
    fn agrees_inside_the_radius() {
        let t = truncated(5.0);
        assert_eq!(t.eval(0.1, 3.0), 4.5);
        let inner = QuadraticHamiltonian::new(1.0);
        for i in 0..=1000 {
            let p = -5.0 + 10.0 * i as f64 / 1000.0;
            assert_eq!(t.eval(0.2, p), inner.eval(0.2, p));
            assert_eq!(t.grad_p(0.2, p), inner.grad_p(0.2, p));
        }
    }

    #[test]
    fn small_radius_is_rejected() {
        let err = truncate_hamiltonian(Arc::new(QuadraticHamiltonian::new(1.0)), 1.5);
        assert!(matches!(err, Err(Error::TruncationRadius(_))));
    }

    #[test]
    fn profile_pieces_are_continuous() {
        let prof = RadialProfile::new(4.0);
        for &k in &[4.0, 16.0, 32.0] {
            let a = prof.eval(k * (1.0 - 1e-12));
            let b = prof.eval(k * (1.0 + 1e-12));
            assert!((a.0 - b.0).abs() < 1e-8 * (1.0 + a.0.abs()));
            assert!((a.1 - b.1).abs() < 1e-8 * (1.0 + a.1.abs()));
            assert!((a.2 - b.2).abs() < 1e-8 * (1.0 + a.2.abs()));
        }
    }

    #[test]
    fn gradient_is_bounded_far_out() {
        let r = 5.0;
        let t = truncated(r);
        let sup = (0..2000)
            .map(|i| 2.0 * r * r + 8.0 * r * r * i as f64 / 2000.0)
            .map(|p| {
                let e = 1e-3;
                ((t.eval(0.0, p + e) - t.eval(0.0, p - e)) / (2.0 * e)).abs()
            })
            .fold(0.0, f64::max);
        // phi' tends to 9R^3/4 + R/2, scaled by l/2
        assert!(sup <= 0.5 * (2.25 * r.powi(3) + 0.5 * r) + 1e-6, "sup {sup}");
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let t = truncated(5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p: f64 = rng.gen_range(-250.0..250.0);
            let e = 1e-5 * (1.0 + p.abs());
            let fd1 = (t.eval(0.0, p + e) - t.eval(0.0, p - e)) / (2.0 * e);
            let g = t.grad_p(0.0, p);
            assert!((fd1 - g).abs() <= 1e-6 * (1.0 + g.abs()), "p={p}: {fd1} vs {g}");
            let fd2 = (t.grad_p(0.0, p + e) - t.grad_p(0.0, p - e)) / (2.0 * e);
            let hpp = t.hess_pp(0.0, p).unwrap();
            assert!((fd2 - hpp).abs() <= 1e-5 * (1.0 + hpp.abs()), "p={p}: {fd2} vs {hpp}");
        }
    }

    #[test]
    fn strictly_convex_everywhere() {
        let r = 5.0;
        let t = truncated(r);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let p: f64 = rng.gen_range(-10.0 * r * r..10.0 * r * r);
            let e = 1e-3;
            let second = (t.eval(0.0, p + e) - 2.0 * t.eval(0.0, p) + t.eval(0.0, p - e)) / (e * e);
            assert!(second >= 1e-6, "p={p}: {second}");
            assert!(t.hess_pp(0.0, p).unwrap() >= 1e-6);
        }
    }
}
