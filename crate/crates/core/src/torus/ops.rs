use crate::error::{Error, Result};
use crate::model::Hamiltonian;

use super::linalg::CyclicSystem;
use super::{DensityField, PeriodicGrid, ScalarField};

/// Diffusion coefficient of the idiosyncratic noise (`1/2 Laplacian`).
pub const HJB_DIFFUSION: f64 = 0.5;

/// Tolerated round-off below zero before a transport step is declared broken.
const NEGATIVE_TOL: f64 = 1e-12;

/// Periodic central difference `(f[j+1] - f[j-1]) / 2h`.
pub fn gradient(f: &ScalarField) -> ScalarField {
    ScalarField::from_raw(f.grid(), gradient_raw(f.grid(), f.values()))
}

pub(crate) fn gradient_raw(grid: PeriodicGrid, f: &[f64]) -> Vec<f64> {
    let inv = 0.5 / grid.h();
    (0..grid.n())
        .map(|j| (f[grid.next(j)] - f[grid.prev(j)]) * inv)
        .collect()
}

/// Periodic three-point stencil `(f[j+1] - 2 f[j] + f[j-1]) / h^2`.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    ScalarField::from_raw(f.grid(), laplacian_raw(f.grid(), f.values()))
}

pub(crate) fn laplacian_raw(grid: PeriodicGrid, f: &[f64]) -> Vec<f64> {
    let inv = 1.0 / (grid.h() * grid.h());
    (0..grid.n())
        .map(|j| (f[grid.next(j)] - 2.0 * f[j] + f[grid.prev(j)]) * inv)
        .collect()
}

/// Smoothing width of the upwind switch in [`FpScheme::default`].
pub const FLUX_SMOOTHING: f64 = 0.1;

/// Options for [`fp_step_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpScheme {
    /// Coefficient in front of the Laplacian; `0.5` for the model, `0` for
    /// pure transport.
    pub diffusion: f64,
    /// Width `k` of the smoothed upwind split `b = a - c` with
    /// `a, c = (sqrt(b^2 + k^2) +- b) / 2`; `0` is the sharp upwind flux.
    pub smoothing: f64,
}

impl Default for FpScheme {
    fn default() -> Self {
        Self {
            diffusion: HJB_DIFFUSION,
            smoothing: FLUX_SMOOTHING,
        }
    }
}

/// One step of `d_t mu + div(b mu) = 1/2 Laplacian mu`: explicit upwind
/// transport then implicit diffusion.
pub fn fp_step(mu: &DensityField, drift: &ScalarField, dt: f64) -> Result<DensityField> {
    fp_step_with(mu, drift, dt, FpScheme::default())
}

pub fn fp_step_with(
    mu: &DensityField,
    drift: &ScalarField,
    dt: f64,
    scheme: FpScheme,
) -> Result<DensityField> {
    let grid = mu.grid();
    if drift.grid() != grid {
        return Err(Error::GridMismatch(grid.n(), drift.grid().n()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    let cfl = dt * drift.sup_norm() / grid.h();
    if cfl > 1.0 {
        return Err(Error::Cfl(cfl));
    }
    let diffusion = if scheme.diffusion > 0.0 {
        Some(CyclicSystem::implicit_diffusion(grid, dt, scheme.diffusion)?)
    } else {
        None
    };
    let mass = fp_transport_diffuse(
        grid,
        mu.masses(),
        drift.values(),
        dt,
        scheme.smoothing,
        diffusion.as_ref(),
    );
    finish_density(grid, mass)
}

pub(crate) fn finish_density(grid: PeriodicGrid, mass: Vec<f64>) -> Result<DensityField> {
    let min = mass.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -NEGATIVE_TOL {
        return Err(Error::NegativeMass(min));
    }
    let mass = mass.into_iter().map(|m| m.max(0.0)).collect();
    Ok(DensityField::from_raw(grid, mass))
}

#[inline]
fn face_velocity(grid: PeriodicGrid, b: &[f64], j: usize) -> f64 {
    0.5 * (b[j] + b[grid.next(j)])
}

/// Split of a face velocity into the outgoing weights `(a, c)`, `b = a - c`.
#[inline]
fn upwind_split(b: f64, k: f64) -> (f64, f64) {
    if k == 0.0 {
        return (b.max(0.0), (-b).max(0.0));
    }
    let s = (b * b + k * k).sqrt();
    (0.5 * (s + b), 0.5 * (s - b))
}

/// Derivatives `(da/db, dc/db)` of [`upwind_split`].
#[inline]
fn upwind_split_slope(b: f64, k: f64) -> (f64, f64) {
    if k == 0.0 {
        return if b > 0.0 {
            (1.0, 0.0)
        } else if b < 0.0 {
            (0.0, -1.0)
        } else {
            (0.0, 0.0)
        };
    }
    let r = b / (b * b + k * k).sqrt();
    (0.5 * (1.0 + r), 0.5 * (r - 1.0))
}

/// Upwind transport followed by an optional implicit diffusion solve; shared
/// by the density step and its tangent.
pub(crate) fn fp_transport_diffuse(
    grid: PeriodicGrid,
    mass: &[f64],
    drift: &[f64],
    dt: f64,
    smoothing: f64,
    diffusion: Option<&CyclicSystem>,
) -> Vec<f64> {
    let n = grid.n();
    let lambda = dt / grid.h();
    // flux[j] lives on the face between cells j and j+1
    let flux: Vec<f64> = (0..n)
        .map(|j| {
            let (a, c) = upwind_split(face_velocity(grid, drift, j), smoothing);
            a * mass[j] - c * mass[grid.next(j)]
        })
        .collect();
    let moved: Vec<f64> = (0..n)
        .map(|j| mass[j] - lambda * (flux[j] - flux[grid.prev(j)]))
        .collect();
    match diffusion {
        Some(sys) => sys.solve(&moved),
        None => moved,
    }
}

/// Tangent of [`fp_transport_diffuse`] at `(mass, drift)` in the direction
/// `(dmass, ddrift)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fp_transport_diffuse_tangent(
    grid: PeriodicGrid,
    mass: &[f64],
    drift: &[f64],
    dmass: &[f64],
    ddrift: &[f64],
    dt: f64,
    smoothing: f64,
    diffusion: Option<&CyclicSystem>,
) -> Vec<f64> {
    let n = grid.n();
    let lambda = dt / grid.h();
    let dflux: Vec<f64> = (0..n)
        .map(|j| {
            let b = face_velocity(grid, drift, j);
            let db = face_velocity(grid, ddrift, j);
            let jn = grid.next(j);
            let (a, c) = upwind_split(b, smoothing);
            let (da, dc) = upwind_split_slope(b, smoothing);
            a * dmass[j] - c * dmass[jn] + db * (da * mass[j] - dc * mass[jn])
        })
        .collect();
    let moved: Vec<f64> = (0..n)
        .map(|j| dmass[j] - lambda * (dflux[j] - dflux[grid.prev(j)]))
        .collect();
    match diffusion {
        Some(sys) => sys.solve(&moved),
        None => moved,
    }
}

/// One backward step of `-d_t u - 1/2 Laplacian u + H(x, u_x) = source`:
/// solves `(I - dt/2 Laplacian) u = u_next - dt (H(x, grad u_next) - source)`.
pub fn hjb_step_backward(
    u_next: &ScalarField,
    hamiltonian: &dyn Hamiltonian,
    source: &ScalarField,
    dt: f64,
) -> Result<ScalarField> {
    let grid = u_next.grid();
    if source.grid() != grid {
        return Err(Error::GridMismatch(grid.n(), source.grid().n()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    let sys = CyclicSystem::implicit_diffusion(grid, dt, HJB_DIFFUSION)?;
    let out = hjb_step_raw(grid, u_next.values(), hamiltonian, source.values(), dt, &sys);
    if let Some(j) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(j));
    }
    Ok(ScalarField::from_raw(grid, out))
}

pub(crate) fn hjb_step_raw(
    grid: PeriodicGrid,
    u_next: &[f64],
    hamiltonian: &dyn Hamiltonian,
    source: &[f64],
    dt: f64,
    sys: &CyclicSystem,
) -> Vec<f64> {
    let p = gradient_raw(grid, u_next);
    let rhs: Vec<f64> = (0..grid.n())
        .map(|j| u_next[j] - dt * (hamiltonian.eval(grid.x(j), p[j]) - source[j]))
        .collect();
    sys.solve(&rhs)
}

/// Tangent of [`hjb_step_raw`] with respect to `(u_next, source)`.
pub(crate) fn hjb_step_tangent(
    grid: PeriodicGrid,
    u_next: &[f64],
    du_next: &[f64],
    hamiltonian: &dyn Hamiltonian,
    dsource: &[f64],
    dt: f64,
    sys: &CyclicSystem,
) -> Vec<f64> {
    let p = gradient_raw(grid, u_next);
    let dp = gradient_raw(grid, du_next);
    let rhs: Vec<f64> = (0..grid.n())
        .map(|j| du_next[j] - dt * (hamiltonian.grad_p(grid.x(j), p[j]) * dp[j] - dsource[j]))
        .collect();
    sys.solve(&rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuadraticHamiltonian;
    use std::f64::consts::PI;

    fn grid(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(n).unwrap()
    }

    #[test]
    fn derivatives_of_constant_vanish() {
        let f = ScalarField::constant(grid(16), 3.25);
        assert!(gradient(&f).values().iter().all(|&v| v == 0.0));
        assert!(laplacian(&f).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_stencil_is_antisymmetric_around_a_bump() {
        let g = grid(16);
        let mut v = vec![0.0; 16];
        v[7] = g.x(7);
        let d = gradient(&ScalarField::new(g, v).unwrap());
        assert_eq!(d.values()[6], -d.values()[8]);
        assert_eq!(d.values()[7], 0.0);
        assert!(d.values()[6] > 0.0);
    }

    #[test]
    fn gradient_error_is_second_order() {
        let errs: Vec<f64> = [64, 128, 256]
            .iter()
            .map(|&n| {
                let f = ScalarField::from_fn(grid(n), |x| (2.0 * PI * x).sin());
                let df = gradient(&f);
                grid(n)
                    .centers()
                    .zip(df.values())
                    .map(|(x, d)| (d - 2.0 * PI * (2.0 * PI * x).cos()).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 1.9, "order {order}");
        }
        let h = 1.0 / 256.0;
        assert!(errs[2] <= 2.0 * (2.0 * PI).powi(3) / 6.0 * h * h);
    }

    #[test]
    fn laplacian_of_sine_and_telescoping_sum() {
        let n = 256;
        let f = ScalarField::from_fn(grid(n), |x| (2.0 * PI * x).sin());
        let lap = laplacian(&f);
        let err = grid(n)
            .centers()
            .zip(lap.values())
            .map(|(x, l)| (l + 4.0 * PI * PI * (2.0 * PI * x).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err < 4.0 * PI.powi(4) / 3.0 / (n * n) as f64 * 1.01, "{err}");
        let total: f64 = lap.values().iter().sum();
        assert!(total.abs() < 1e-9 * lap.sup_norm());
    }

    #[test]
    fn uniform_density_is_fixed_by_heat_flow() {
        let g = grid(32);
        let mu = DensityField::uniform(g);
        let out = fp_step(&mu, &ScalarField::zeros(g), 0.01).unwrap();
        for m in out.masses() {
            assert!((m - g.h()).abs() < 1e-15);
        }
    }

    #[test]
    fn point_mass_conserves_total_mass() {
        let g = grid(64);
        let mut mu = DensityField::point_mass(g, 10);
        let drift = ScalarField::from_fn(g, |x| 0.8 * (2.0 * PI * x).cos());
        for _ in 0..500 {
            mu = fp_step(&mu, &drift, 0.005).unwrap();
            assert!((mu.total_mass() - 1.0).abs() <= 1e-12);
            assert!(mu.min_mass() >= 0.0);
        }
    }

    #[test]
    fn pure_transport_translates_the_mean() {
        let g = grid(200);
        // bump centered at 0.3, far from the wrap point
        let mu0 =
            DensityField::from_profile(g, |x| (-((x - 0.3) / 0.05).powi(2)).exp()).unwrap();
        let b = 0.7;
        let dt = 0.002;
        let steps = 100;
        let mut mu = mu0.clone();
        let scheme = FpScheme {
            diffusion: 0.0,
            smoothing: 0.0,
        };
        for _ in 0..steps {
            mu = fp_step_with(&mu, &ScalarField::constant(g, b), dt, scheme).unwrap();
        }
        let shift = mu.mean_position() - mu0.mean_position();
        assert!((shift - b * dt * steps as f64).abs() <= g.h(), "shift {shift}");
    }

    #[test]
    fn cfl_violation_is_reported() {
        let g = grid(16);
        let mu = DensityField::uniform(g);
        let err = fp_step(&mu, &ScalarField::constant(g, 100.0), 0.1).unwrap_err();
        assert!(matches!(err, Error::Cfl(_)));
    }

    #[test]
    fn hjb_zero_and_constant_source() {
        let g = grid(32);
        let h = QuadraticHamiltonian::new(1.0);
        let zero = ScalarField::zeros(g);
        let u = hjb_step_backward(&zero, &h, &zero, 0.1).unwrap();
        assert!(u.sup_norm() == 0.0);
        let u = hjb_step_backward(&zero, &h, &ScalarField::constant(g, 2.0), 0.1).unwrap();
        for v in u.values() {
            assert!((v - 0.2).abs() < 1e-14);
        }
    }

    #[test]
    fn hjb_step_halving_differs_at_second_order() {
        let g = grid(64);
        let h = QuadraticHamiltonian::new(1.0);
        let terminal = ScalarField::from_fn(g, |x| (2.0 * PI * x).cos());
        let zero = ScalarField::zeros(g);
        let gap = |dt: f64| {
            let one = hjb_step_backward(&terminal, &h, &zero, dt).unwrap();
            let half = hjb_step_backward(&terminal, &h, &zero, dt / 2.0).unwrap();
            let two = hjb_step_backward(&half, &h, &zero, dt / 2.0).unwrap();
            one.sup_distance(&two)
        };
        let (a, b) = (gap(4e-3), gap(2e-3));
        let ratio = a / b;
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn hjb_is_monotone_in_source() {
        let g = grid(32);
        let h = QuadraticHamiltonian::new(1.0);
        let next = ScalarField::from_fn(g, |x| 0.3 * (2.0 * PI * x).sin());
        let s1 = ScalarField::from_fn(g, |x| (4.0 * PI * x).cos());
        let s2 = ScalarField::from_fn(g, |x| (4.0 * PI * x).cos() + 0.1 * (x * 7.0).sin().abs());
        let u1 = hjb_step_backward(&next, &h, &s1, 0.01).unwrap();
        let u2 = hjb_step_backward(&next, &h, &s2, 0.01).unwrap();
        for (a, b) in u1.values().iter().zip(u2.values()) {
            assert!(b >= a);
        }
    }

    #[test]
    fn transport_tangent_matches_finite_differences() {
        let g = grid(32);
        let mass: Vec<f64> = DensityField::from_profile(g, |x| 1.0 + 0.6 * (2.0 * PI * x).sin())
            .unwrap()
            .masses()
            .to_vec();
        let drift: Vec<f64> = g.centers().map(|x| 0.4 * (2.0 * PI * x).cos()).collect();
        let dmass: Vec<f64> = g.centers().map(|x| 0.01 * (4.0 * PI * x).sin()).collect();
        let ddrift: Vec<f64> = g.centers().map(|x| (6.0 * PI * x).sin()).collect();
        let dt = 0.01;
        let k = FLUX_SMOOTHING;
        let sys = CyclicSystem::implicit_diffusion(g, dt, HJB_DIFFUSION).unwrap();
        let tangent =
            fp_transport_diffuse_tangent(g, &mass, &drift, &dmass, &ddrift, dt, k, Some(&sys));
        let e = 1e-6;
        let shift = |s: f64| {
            let m: Vec<f64> = mass.iter().zip(&dmass).map(|(a, b)| a + s * b).collect();
            let b: Vec<f64> = drift.iter().zip(&ddrift).map(|(a, b)| a + s * b).collect();
            fp_transport_diffuse(g, &m, &b, dt, k, Some(&sys))
        };
        let (up, dn) = (shift(e), shift(-e));
        for j in 0..32 {
            let fd = (up[j] - dn[j]) / (2.0 * e);
            assert!((fd - tangent[j]).abs() < 1e-9, "{fd} vs {}", tangent[j]);
        }
    }

    fn trig(g: PeriodicGrid, c: &[f64]) -> Vec<f64> {
        g.centers()
            .map(|x| c.iter().enumerate().map(|(k, a)| a * (2.0 * PI * (k as f64 + 1.0) * x + k as f64).sin()).sum())
            .collect()
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn fp_step_conserves_mass_under_cfl(
            n in 8usize..96,
            drift in proptest::collection::vec(-2.0f64..2.0, 1..4),
            weights in proptest::collection::vec(0.0f64..1.0, 8),
            cfl in 0.05f64..1.0,
        ) {
            let g = grid(n);
            let b = ScalarField::new(g, trig(g, &drift)).unwrap();
            let dt = cfl * g.h() / b.sup_norm().max(1e-3);
            let w: Vec<f64> = (0..n).map(|j| weights[j % 8] + 1e-3).collect();
            let mut mu = DensityField::from_weights(g, w).unwrap();
            for _ in 0..20 {
                mu = fp_step(&mu, &b, dt).unwrap();
                proptest::prop_assert!((mu.total_mass() - 1.0).abs() <= 1e-12);
                proptest::prop_assert!(mu.min_mass() >= 0.0);
            }
        }

        #[test]
        fn hjb_step_is_monotone_in_the_source(
            next in proptest::collection::vec(-1.0f64..1.0, 1..4),
            source in proptest::collection::vec(-1.0f64..1.0, 1..4),
            bump in proptest::collection::vec(0.0f64..1.0, 24),
            dt in 1e-4f64..0.05,
        ) {
            let g = grid(24);
            let h = QuadraticHamiltonian::new(1.0);
            let u_next = ScalarField::new(g, trig(g, &next)).unwrap();
            let s1 = ScalarField::new(g, trig(g, &source)).unwrap();
            let s2 = ScalarField::new(g, s1.values().iter().zip(&bump).map(|(a, b)| a + b).collect()).unwrap();
            let u1 = hjb_step_backward(&u_next, &h, &s1, dt).unwrap();
            let u2 = hjb_step_backward(&u_next, &h, &s2, dt).unwrap();
            for (a, b) in u1.values().iter().zip(u2.values()) {
                proptest::prop_assert!(b >= a);
            }
        }
    }
}
