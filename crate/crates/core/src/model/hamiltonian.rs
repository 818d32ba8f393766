use std::fmt::Debug;

use crate::error::{Error, Result};

/// A Hamiltonian `H(x, p)` in one space dimension with its derivatives.
pub trait Hamiltonian: Send + Sync + Debug {
    fn eval(&self, x: f64, p: f64) -> f64;
    fn grad_p(&self, x: f64, p: f64) -> f64;
    fn grad_x(&self, x: f64, p: f64) -> f64;
    fn hess_pp(&self, _x: f64, _p: f64) -> Option<f64> {
        None
    }
    fn hess_xp(&self, _x: f64, _p: f64) -> Option<f64> {
        None
    }
    /// Declared uniform strict-convexity modulus in `p`.
    fn convexity(&self) -> Option<f64> {
        None
    }
    fn as_truncated(&self) -> Option<&super::TruncatedHamiltonian> {
        None
    }
}

/// A running Lagrangian `L(x, alpha)`.
pub trait Lagrangian: Send + Sync + Debug {
    fn eval(&self, x: f64, alpha: f64) -> f64;
    fn grad_alpha(&self, x: f64, alpha: f64) -> f64;
    fn grad_x(&self, _x: f64, _alpha: f64) -> f64 {
        0.0
    }
    fn convexity(&self) -> f64;
    /// Closed-form `(H(x,p), argmax)` when available.
    fn conjugate(&self, _x: f64, _p: f64) -> Option<(f64, f64)> {
        None
    }
}

/// `L(x, a) = lambda a^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticLagrangian {
    pub lambda: f64,
}

impl QuadraticLagrangian {
    pub fn new(lambda: f64) -> Self {
        Self { lambda }
    }

    pub fn hamiltonian(&self) -> QuadraticHamiltonian {
        QuadraticHamiltonian::new(1.0 / self.lambda)
    }
}

impl Lagrangian for QuadraticLagrangian {
    fn eval(&self, _x: f64, a: f64) -> f64 {
        0.5 * self.lambda * a * a
    }
    fn grad_alpha(&self, _x: f64, a: f64) -> f64 {
        self.lambda * a
    }
    fn convexity(&self) -> f64 {
        self.lambda
    }
    fn conjugate(&self, _x: f64, p: f64) -> Option<(f64, f64)> {
        Some((0.5 * p * p / self.lambda, -p / self.lambda))
    }
}

/// `H(x, p) = c p^2 / 2`, the conjugate of `L = a^2 / (2c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticHamiltonian {
    pub c: f64,
}

impl QuadraticHamiltonian {
    pub fn new(c: f64) -> Self {
        Self { c }
    }
}

impl Hamiltonian for QuadraticHamiltonian {
    fn eval(&self, _x: f64, p: f64) -> f64 {
        0.5 * self.c * p * p
    }
    fn grad_p(&self, _x: f64, p: f64) -> f64 {
        self.c * p
    }
    fn grad_x(&self, _x: f64, _p: f64) -> f64 {
        0.0
    }
    fn hess_pp(&self, _x: f64, _p: f64) -> Option<f64> {
        Some(self.c)
    }
    fn hess_xp(&self, _x: f64, _p: f64) -> Option<f64> {
        Some(0.0)
    }
    fn convexity(&self) -> Option<f64> {
        Some(self.c)
    }
}

/// `L(x, a) = quartic a^4 / 4 + quadratic a^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolynomialLagrangian {
    pub quartic: f64,
    pub quadratic: f64,
}

impl Lagrangian for PolynomialLagrangian {
    fn eval(&self, _x: f64, a: f64) -> f64 {
        0.25 * self.quartic * a.powi(4) + 0.5 * self.quadratic * a * a
    }
    fn grad_alpha(&self, _x: f64, a: f64) -> f64 {
        self.quartic * a.powi(3) + self.quadratic * a
    }
    fn convexity(&self) -> f64 {
        self.quadratic
    }
}

/// Worst relative mismatch between the declared derivatives of `h` and
/// central differences of `eval`, over `samples` points with `|p| <= 10`.
pub fn check_hamiltonian_derivatives(h: &dyn Hamiltonian, samples: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let e = 1e-5;
    let rel = |fd: f64, declared: f64| (fd - declared).abs() / (1.0 + declared.abs());
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let x: f64 = rng.gen_range(0.0..1.0);
        let p: f64 = rng.gen_range(-10.0..10.0);
        let fd_p = (h.eval(x, p + e) - h.eval(x, p - e)) / (2.0 * e);
        let fd_x = (h.eval(x + e, p) - h.eval(x - e, p)) / (2.0 * e);
        worst = worst.max(rel(fd_p, h.grad_p(x, p))).max(rel(fd_x, h.grad_x(x, p)));
        if let Some(hpp) = h.hess_pp(x, p) {
            let fd = (h.grad_p(x, p + e) - h.grad_p(x, p - e)) / (2.0 * e);
            worst = worst.max(rel(fd, hpp));
        }
        if let Some(hxp) = h.hess_xp(x, p) {
            let fd = (h.grad_p(x + e, p) - h.grad_p(x - e, p)) / (2.0 * e);
            worst = worst.max(rel(fd, hxp));
        }
    }
    worst
}

/// Smallest second divided difference of `l` in `alpha` minus its declared
/// modulus, sampled on `[-10, 10]`; nonnegative up to round-off when the
/// declaration holds.
pub fn sampled_convexity(l: &dyn Lagrangian, samples: usize) -> f64 {
    let e = 1e-3;
    (0..samples)
        .map(|i| {
            let a = -10.0 + 20.0 * i as f64 / (samples.max(2) - 1) as f64;
            let x = (i as f64 * 0.618).fract();
            (l.eval(x, a + e) - 2.0 * l.eval(x, a) + l.eval(x, a - e)) / (e * e)
        })
        .fold(f64::INFINITY, f64::min)
        - l.convexity()
}

pub const LEGENDRE_BOX: f64 = 50.0;
pub const LEGENDRE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Legendre {
    /// `H(x, p) = sup_a [-p a - L(x, a)]`.
    pub value: f64,
    /// The maximizer, equal to `-grad_p H(x, p)`.
    pub maximizer: f64,
}

/// Convex conjugate in the sign convention `H(x,p) = sup_a [-p a - L(x,a)]`.
pub fn legendre(l: &dyn Lagrangian, x: f64, p: f64) -> Result<Legendre> {
    if let Some((value, maximizer)) = l.conjugate(x, p) {
        return Ok(Legendre { value, maximizer });
    }
    let objective = |a: f64| -p * a - l.eval(x, a);
    let a = golden_section_max(objective, -LEGENDRE_BOX, LEGENDRE_BOX, LEGENDRE_TOL);
    if LEGENDRE_BOX - a.abs() < 1e-6 {
        return Err(Error::LegendreBoundary { alpha: a });
    }
    Ok(Legendre {
        value: objective(a),
        maximizer: a,
    })
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Numerical conjugate of an arbitrary strictly convex Lagrangian.
#[derive(Debug, Clone)]
pub struct ConjugateHamiltonian<L> {
    pub lagrangian: L,
}

impl<L: Lagrangian> ConjugateHamiltonian<L> {
    fn solve(&self, x: f64, p: f64) -> Legendre {
        legendre(&self.lagrangian, x, p).unwrap_or_else(|_| {
            // outside the search box the conjugate is not representable
            Legendre {
                value: f64::NAN,
                maximizer: f64::NAN,
            }
        })
    }
}

impl<L: Lagrangian> Hamiltonian for ConjugateHamiltonian<L> {
    fn eval(&self, x: f64, p: f64) -> f64 {
        self.solve(x, p).value
    }
    fn grad_p(&self, x: f64, p: f64) -> f64 {
        -self.solve(x, p).maximizer
    }
    fn grad_x(&self, x: f64, p: f64) -> f64 {
        // envelope theorem
        -self.lagrangian.grad_x(x, self.solve(x, p).maximizer)
    }
}
