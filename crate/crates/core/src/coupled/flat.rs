use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::torus::{DensityField, ScalarField};

/// `(1 - eps) mu + eps delta_y` with `delta_y` the unit mass in cell `y`.
fn mixture(mu: &DensityField, y: usize, eps: f64) -> Result<DensityField> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidParameter(format!("flat-derivative eps = {eps}")));
    }
    mu.mix(&DensityField::point_mass(mu.grid(), y), eps)
}

/// Raw mixture quotient `[F((1-eps) mu + eps delta_y) - F(mu)] / eps` for
/// every cell `y`.
fn raw_profile(f: &(dyn Fn(&DensityField) -> f64 + Sync), mu: &DensityField, eps: f64) -> Result<Vec<f64>> {
    let base = f(mu);
    (0..mu.grid().n())
        .into_par_iter()
        .map(|y| Ok((f(&mixture(mu, y, eps)?) - base) / eps))
        .collect()
}

fn recenter(mu: &DensityField, mut d: Vec<f64>) -> Vec<f64> {
    let m: f64 = d.iter().zip(mu.masses()).map(|(a, b)| a * b).sum();
    d.iter_mut().for_each(|v| *v -= m);
    d
}

/// Flat derivative `dF/dmu (mu)(y)` by the mixture quotient, normalized to
/// zero `mu`-mean across `y`.
pub fn flat_derivative(
    f: &(dyn Fn(&DensityField) -> f64 + Sync),
    mu: &DensityField,
    y: usize,
    eps: f64,
) -> Result<f64> {
    if y >= mu.grid().n() {
        return Err(Error::InvalidParameter(format!("cell {y} outside grid")));
    }
    Ok(flat_derivative_profile(f, mu, eps)?[y])
}

/// [`flat_derivative`] at every cell.
pub fn flat_derivative_profile(
    f: &(dyn Fn(&DensityField) -> f64 + Sync),
    mu: &DensityField,
    eps: f64,
) -> Result<Vec<f64>> {
    Ok(recenter(mu, raw_profile(f, mu, eps)?))
}

/// Richardson-halved profile `2 D(eps/2) - D(eps)`.
pub fn flat_derivative_richardson(
    f: &(dyn Fn(&DensityField) -> f64 + Sync),
    mu: &DensityField,
    eps: f64,
) -> Result<Vec<f64>> {
    let coarse = raw_profile(f, mu, eps)?;
    let fine = raw_profile(f, mu, 0.5 * eps)?;
    let d = fine.iter().zip(&coarse).map(|(a, b)| 2.0 * a - b).collect();
    Ok(recenter(mu, d))
}

/// Richardson flat derivative of a field-valued `F`; row `y` holds the
/// derivative field in `x`.
pub fn flat_derivative_field(
    f: &(dyn Fn(&DensityField) -> ScalarField + Sync),
    mu: &DensityField,
    eps: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = mu.grid().n();
    let base = f(mu);
    let quotient = |y: usize, e: f64| -> Result<Vec<f64>> {
        let v = f(&mixture(mu, y, e)?);
        Ok(v.values().iter().zip(base.values()).map(|(a, b)| (a - b) / e).collect())
    };
    let mut rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|y| {
            let c = quotient(y, eps)?;
            let h = quotient(y, 0.5 * eps)?;
            Ok(h.iter().zip(&c).map(|(a, b)| 2.0 * a - b).collect())
        })
        .collect::<Result<_>>()?;
    for x in 0..n {
        let m: f64 = (0..n).map(|y| rows[y][x] * mu.masses()[y]).sum();
        rows.iter_mut().for_each(|r| r[x] -= m);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::PeriodicGrid;
    use std::f64::consts::PI;

    fn mu(g: PeriodicGrid) -> DensityField {
        DensityField::from_profile(g, |x| 1.0 + 0.5 * (2.0 * PI * x).sin()).unwrap()
    }

    #[test]
    fn linear_functional() {
        let g = PeriodicGrid::new(32).unwrap();
        let phi: Vec<f64> = g.centers().map(|x| (2.0 * PI * x).cos() + x).collect();
        let pair = |m: &DensityField| m.masses().iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>();
        let m = mu(g);
        let mean = pair(&m);
        for y in [0, 7, 31] {
            let d = flat_derivative(&pair, &m, y, 1e-2).unwrap();
            assert!((d - (phi[y] - mean)).abs() < 1e-12);
        }
    }

    #[test]
    fn square_functional_chain_rule() {
        let g = PeriodicGrid::new(32).unwrap();
        let phi: Vec<f64> = g.centers().map(|x| (2.0 * PI * x).sin()).collect();
        let pair = |m: &DensityField| m.masses().iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>();
        let sq = |m: &DensityField| pair(m).powi(2);
        let m = mu(g);
        let a = pair(&m);
        for eps in [1e-2, 5e-3] {
            let d = flat_derivative_profile(&sq, &m, eps).unwrap();
            let err = (0..32)
                .map(|y| (d[y] - 2.0 * a * (phi[y] - a)).abs())
                .fold(0.0, f64::max);
            assert!(err <= 2.0 * eps, "{eps}: {err}");
        }
        // Richardson removes the O(eps) term of a quadratic exactly
        let d = flat_derivative_richardson(&sq, &m, 1e-2).unwrap();
        for y in 0..32 {
            assert!((d[y] - 2.0 * a * (phi[y] - a)).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_functional() {
        let g = PeriodicGrid::new(16).unwrap();
        let c = |_: &DensityField| 3.0;
        assert!(flat_derivative_profile(&c, &mu(g), 1e-2).unwrap().iter().all(|v| *v == 0.0));
        assert!(flat_derivative(&c, &mu(g), 3, 2.0).is_err());
    }
}
