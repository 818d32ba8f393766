//! Named experiments: sweeps over `sigma0` and `T`, and the decay fits.

use rayon::prelude::*;
use serde::Serialize;

use mmfg_core::coupled::{
    lipschitz_table, solve_by_continuation, solve_equilibrium, EquilibriumConfig, EquilibriumSolution,
    MasterField, OuterInit,
};
use mmfg_core::major::{major_bmo_diagnostic, solve_w0};
use mmfg_core::minor::{gradient_diagnostic, v0_bmo_diagnostic};
use mmfg_core::model::ModelSpec;
use mmfg_core::torus::linalg::CyclicSystem;
use mmfg_core::torus::{fp_step, gradient, neg_norm, DensityField, PeriodicGrid, ScalarField};
use mmfg_core::tree::NoiseTree;
use mmfg_core::{Error, Result};

use crate::config::Settings;

/// Starting trajectories of the multi-start solves.
pub fn multi_start_inits() -> [OuterInit; 3] {
    [OuterInit::Constant, OuterInit::DriftlessWalk, OuterInit::Walk { drift: 1.0 }]
}

/// Sup distance between two equilibria over `X0`, `Y0` and `u`.
pub fn equilibrium_distance(a: &EquilibriumSolution, b: &EquilibriumSolution) -> f64 {
    let sup = |p: &[f64], q: &[f64]| p.iter().zip(q).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let mut d = sup(a.major.x0.values(), b.major.x0.values()).max(sup(a.major.y0.values(), b.major.y0.values()));
    for (u, v) in a.minor.u.values().iter().zip(b.minor.u.values()) {
        d = d.max(u.sup_distance(v));
    }
    d
}

/// Largest pairwise [`equilibrium_distance`].
pub fn spread(sols: &[EquilibriumSolution]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..sols.len() {
        for j in 0..i {
            s = s.max(equilibrium_distance(&sols[i], &sols[j]));
        }
    }
    s
}

/// Solves from each of [`multi_start_inits`].
pub fn multi_start(
    model: &ModelSpec,
    x0: f64,
    mu0: &DensityField,
    tree: &NoiseTree,
    cfg: &EquilibriumConfig,
) -> Result<Vec<EquilibriumSolution>> {
    multi_start_inits()
        .into_iter()
        .map(|init| {
            let cfg = EquilibriumConfig { init, ..cfg.clone() };
            solve_equilibrium(model, x0, mu0, tree, &cfg)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaRow {
    pub sigma0: f64,
    pub max_ratio: f64,
    pub spread: f64,
    pub iterations: usize,
    pub status: String,
}

fn sigma_row(s: &Settings, model: &ModelSpec, tree: &NoiseTree, mu0: &DensityField, sigma0: f64) -> SigmaRow {
    match multi_start(&model.with_sigma0(sigma0), s.x0, mu0, tree, &s.equilibrium()) {
        Ok(sols) => SigmaRow {
            sigma0,
            max_ratio: sols.iter().map(|q| q.worst_ratio()).fold(0.0, f64::max),
            spread: spread(&sols),
            iterations: sols.iter().map(|q| q.outer_residuals.len()).max().unwrap_or(0),
            status: "ok".into(),
        },
        Err(e) => SigmaRow {
            sigma0,
            max_ratio: f64::NAN,
            spread: f64::NAN,
            iterations: 0,
            status: e.to_string(),
        },
    }
}

/// One row per `sweep.sigma0` entry; a failed row records its error and the
/// sweep continues.
pub fn run_sigma_sweep(s: &Settings) -> Result<Vec<SigmaRow>> {
    let model = s.model_spec()?;
    let tree = s.tree()?;
    let mu0 = s.initial_density()?;
    Ok(s.sweep_sigma0
        .par_iter()
        .map(|&sigma0| sigma_row(s, &model, &tree, &mu0, sigma0))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonRow {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "K")]
    pub depth: usize,
    pub sup_grad_u: f64,
    pub w0_grad: f64,
    pub v0_bmo: f64,
    pub major_bmo: f64,
    pub lipschitz_u0: f64,
    pub interpolation_error: f64,
    pub windows: usize,
    pub status: String,
}

fn horizon_row(s: &Settings, horizon: f64) -> Result<HorizonRow> {
    let model = s.model_spec()?.with_horizon(horizon);
    let depth = ((horizon / s.sweep_dt).round() as usize).max(1);
    let tree = NoiseTree::over(horizon, depth)?;
    let mu0 = s.initial_density()?;
    let cont = solve_by_continuation(&model, s.x0, &mu0, &tree, &s.continuation())?;
    let sol = &cont.solution;
    let w0 = solve_w0(&model, &s.w0)?;
    let lipschitz_u0 = match cont.tables.first() {
        Some(t) => t.lipschitz_estimate(s.x0)?,
        None => {
            let mf = MasterField::new(&model, tree, &s.equilibrium());
            lipschitz_table(&mf, 0, s.x0, &mu0, 4, s.seed)?.constant
        }
    };
    Ok(HorizonRow {
        horizon,
        depth,
        sup_grad_u: gradient_diagnostic(&sol.minor).sup_grad_u,
        w0_grad: w0.sup_grad(),
        v0_bmo: v0_bmo_diagnostic(&sol.minor),
        major_bmo: major_bmo_diagnostic(&sol.major, &w0, model.sigma0),
        lipschitz_u0,
        interpolation_error: cont.interpolation_error(),
        windows: cont.windows.len(),
        status: "ok".into(),
    })
}

/// One continuation solve per `sweep.T` entry at tree step `sweep.dt`.
pub fn run_t_uniformity(s: &Settings) -> Result<Vec<HorizonRow>> {
    s.model_spec()?;
    Ok(s.sweep_t
        .par_iter()
        .map(|&t| {
            horizon_row(s, t).unwrap_or_else(|e| HorizonRow {
                horizon: t,
                depth: ((t / s.sweep_dt).round() as usize).max(1),
                sup_grad_u: f64::NAN,
                w0_grad: f64::NAN,
                v0_bmo: f64::NAN,
                major_bmo: f64::NAN,
                lipschitz_u0: f64::NAN,
                interpolation_error: f64::NAN,
                windows: 0,
                status: e.to_string(),
            })
        })
        .collect())
}

/// Least-squares line through `(t, ln y)`: `(-slope, R^2)`.
pub fn fit_decay(samples: &[(f64, f64)]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = samples.iter().filter(|(_, y)| *y > 0.0).map(|&(t, y)| (t, y.ln())).collect();
    if pts.len() < 3 {
        return Err(Error::InvalidParameter("fewer than three positive samples to fit".into()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sty / stt;
    let r2 = if syy > 0.0 { sty * sty / (stt * syy) } else { 1.0 };
    Ok((-slope, r2))
}

/// Per-step Fourier multiplier of [`fp_step`] at zero drift on mode `k`:
/// the smoothed upwind flux diffuses explicitly, the Laplacian implicitly.
pub fn conservation_multiplier(n: usize, dt: f64, k: usize) -> f64 {
    let h = 1.0 / n as f64;
    let s2 = (std::f64::consts::PI * k as f64 * h).sin().powi(2);
    let smoothing = mmfg_core::torus::FLUX_SMOOTHING;
    (1.0 - 2.0 * smoothing * (dt / h) * s2) / (1.0 + 2.0 * dt * s2 / (h * h))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub n: usize,
    pub dt: f64,
    pub horizon: f64,
    pub drift: f64,
    pub gamma_transport: f64,
    pub r2_transport: f64,
    /// `2 pi^2`.
    pub oracle_transport: f64,
    pub gamma_conservation: f64,
    pub r2_conservation: f64,
    /// `-ln M / dt` for the mode-one multiplier of the density step.
    pub oracle_conservation: f64,
    pub status: String,
}

/// Backward `d_t phi + 1/2 phi'' + b phi' = 0` from `phi(H) = phi_h`;
/// returns the oscillation against the time to the horizon.
pub fn transport_oscillations(phi_h: &ScalarField, b: &ScalarField, dt: f64, horizon: f64) -> Result<Vec<(f64, f64)>> {
    let grid = phi_h.grid();
    let sys = CyclicSystem::implicit_diffusion(grid, dt, 0.5)?;
    let steps = (horizon / dt).round() as usize;
    let mut phi = phi_h.clone();
    let mut out = Vec::with_capacity(steps + 1);
    out.push((0.0, phi.oscillation()));
    for k in 1..=steps {
        let g = gradient(&phi);
        let rhs: Vec<f64> = phi.values().iter().zip(g.values()).zip(b.values()).map(|((p, d), v)| p + dt * v * d).collect();
        phi = ScalarField::new(grid, sys.solve(&rhs))?;
        out.push((k as f64 * dt, phi.oscillation()));
    }
    Ok(out)
}

/// Forward density steps of two unit masses in adjacent cells; returns the
/// dual norm of their difference against time.
pub fn dipole_norms(grid: PeriodicGrid, b: &ScalarField, dt: f64, horizon: f64) -> Result<Vec<(f64, f64)>> {
    let steps = (horizon / dt).round() as usize;
    let mut p = DensityField::point_mass(grid, 0);
    let mut q = DensityField::point_mass(grid, 1);
    let mut out = Vec::with_capacity(steps + 1);
    out.push((0.0, neg_norm(&p.signed_difference(&q), 1)?));
    for k in 1..=steps {
        p = fp_step(&p, b, dt)?;
        q = fp_step(&q, b, dt)?;
        out.push((k as f64 * dt, neg_norm(&p.signed_difference(&q), 1)?));
    }
    Ok(out)
}

fn late(samples: &[(f64, f64)], horizon: f64) -> Vec<(f64, f64)> {
    samples.iter().copied().filter(|(t, _)| *t >= 0.2 * horizon - 1e-12).collect()
}

/// Fitted decay rates over `t in [0.2 H, H]` of the transport-diffusion
/// oscillation of `sin(2 pi x)` and the conservation dipole.
pub fn run_decay_test(s: &Settings) -> Result<DecayReport> {
    let grid = PeriodicGrid::new(s.decay_n)?;
    let (dt, horizon) = (s.decay_dt, s.decay_horizon);
    let tau = 2.0 * std::f64::consts::PI;
    let b = ScalarField::from_fn(grid, |x| s.decay_drift * (tau * x).sin());
    let phi = ScalarField::from_fn(grid, |x| (tau * x).sin());
    let (gamma_transport, r2_transport) = fit_decay(&late(&transport_oscillations(&phi, &b, dt, horizon)?, horizon))?;
    let (gamma_conservation, r2_conservation) = fit_decay(&late(&dipole_norms(grid, &b, dt, horizon)?, horizon))?;
    let status = if r2_transport < 0.9 || r2_conservation < 0.9 {
        format!("poor fit: R^2 = {r2_transport:.3}, {r2_conservation:.3}")
    } else {
        "ok".into()
    };
    Ok(DecayReport {
        n: s.decay_n,
        dt,
        horizon,
        drift: s.decay_drift,
        gamma_transport,
        r2_transport,
        oracle_transport: 0.5 * tau * tau,
        gamma_conservation,
        r2_conservation,
        oracle_conservation: -conservation_multiplier(s.decay_n, dt, 1).ln() / dt,
        status,
    })
}
