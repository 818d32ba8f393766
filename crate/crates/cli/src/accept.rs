//! The acceptance suite: twelve criteria, each with its own scenario, and the
//! manifest writer.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use mmfg_core::coupled::{
    bisect_contraction_threshold, master_equation_residual, representation_check, sample_interior_nodes,
    solve_equilibrium, solve_linearized, Direction, EquilibriumConfig, LinearizedConfig,
    MasterField, ResidualConfig, Truncation,
};
use mmfg_core::major::{solve_major_fbsde, MajorConfig};
use mmfg_core::minor::MinorConfig;
use mmfg_core::model::{builtin_model, ModelSpec};
use mmfg_core::torus::{fp_step, gradient, laplacian, DensityField, PeriodicGrid, ScalarField, SignedMeasure};
use mmfg_core::tree::{conditional_sums, martingale_repr, NoiseTree, TreeProcess};
use mmfg_core::Result;

use crate::config::Settings;
use crate::experiments::{multi_start, run_decay_test, run_sigma_sweep, run_t_uniformity, spread};
use crate::output::write_json;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criterion {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    /// The headline measured value.
    pub value: f64,
    /// The band `value` is checked against.
    pub tolerance: String,
    pub detail: String,
    /// Wall time; kept out of the manifest so reruns compare equal.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub all_pass: bool,
    pub criteria: Vec<Criterion>,
}

pub const CRITERIA: [&str; 12] = [
    "conservation",
    "operator-order",
    "tree-exactness",
    "riccati-oracle",
    "contraction",
    "uniqueness",
    "sigma0-trend",
    "linearization",
    "representation",
    "master-residual",
    "appendix-decay",
    "t-uniformity",
];

struct Outcome {
    pass: bool,
    value: f64,
    tolerance: String,
    detail: String,
}

fn model(name: &str) -> Result<ModelSpec> {
    builtin_model(name, &BTreeMap::new())
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Pinned substeps, no truncation and tight inner tolerances: two solves at
/// nearby data then differ only through the data.
fn pinned(substeps: usize, tol: f64, inner: f64) -> EquilibriumConfig {
    EquilibriumConfig {
        tol,
        minor: MinorConfig {
            tol: inner,
            substeps,
            adaptive_substeps: false,
            ..Default::default()
        },
        major: MajorConfig {
            tol: inner,
            ..Default::default()
        },
        truncation: Truncation::Off,
        ..Default::default()
    }
}

fn conservation(seed: u64) -> Result<Outcome> {
    let g = PeriodicGrid::new(64)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes: Vec<(f64, f64)> = (0..3).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let b = ScalarField::from_fn(g, |x| {
        modes
            .iter()
            .enumerate()
            .map(|(k, (a, c))| a * (2.0 * PI * (k + 1) as f64 * x).sin() + c * (2.0 * PI * (k + 1) as f64 * x).cos())
            .sum()
    });
    let mut mu = DensityField::from_profile(g, |x| 1.0 + 0.8 * (2.0 * PI * x).cos())?;
    let (mut drift, mut low) = (0.0f64, f64::INFINITY);
    for _ in 0..10_000 {
        mu = fp_step(&mu, &b, 1e-3)?;
        drift = drift.max((mu.total_mass() - 1.0).abs());
        low = low.min(mu.min_mass());
    }
    Ok(Outcome {
        pass: drift <= 1e-10 && low >= -1e-12,
        value: drift,
        tolerance: "mass drift <= 1e-10, min >= -1e-12".into(),
        detail: format!("min mass {low:.3e}, sup|b| {:.3}", b.sup_norm()),
    })
}

fn operator_order() -> Result<Outcome> {
    let f = |x: f64| (2.0 * PI * x).sin() + 0.5 * (4.0 * PI * x).cos();
    let df = |x: f64| 2.0 * PI * (2.0 * PI * x).cos() - 2.0 * PI * (4.0 * PI * x).sin();
    let d2f = |x: f64| -4.0 * PI * PI * (2.0 * PI * x).sin() - 8.0 * PI * PI * (4.0 * PI * x).cos();
    let mut eg = Vec::new();
    let mut el = Vec::new();
    for n in [64, 128, 256] {
        let g = PeriodicGrid::new(n)?;
        let u = ScalarField::from_fn(g, f);
        eg.push(gradient(&u).sup_distance(&ScalarField::from_fn(g, df)));
        el.push(laplacian(&u).sup_distance(&ScalarField::from_fn(g, d2f)));
    }
    let orders: Vec<f64> = [&eg, &el]
        .iter()
        .flat_map(|e| e.windows(2).map(|w| (w[0] / w[1]).log2()).collect::<Vec<_>>())
        .collect();
    let worst = orders.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Outcome {
        pass: worst >= 1.9,
        value: worst,
        tolerance: "order >= 1.9".into(),
        detail: format!("gradient, laplacian orders {}", fmt(&orders)),
    })
}

fn tree_exactness(seed: u64) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sigma0, dt) = (1.7, 0.3);
    let tree = NoiseTree::new(3, dt)?;
    let leaves = tree.level_range(3);
    let mut v = vec![0.0; tree.node_count()];
    for x in &mut v[leaves.clone()] {
        *x = rng.gen_range(-1.0..1.0);
    }
    // backward: node value is the conditional mean, Z from the spread
    let mut z = vec![0.0; leaves.start];
    for id in (0..leaves.start).rev() {
        let p = TreeProcess::new(tree, v.clone())?;
        let (zi, _) = martingale_repr(&p, id, sigma0, dt)?;
        z[id] = zi;
        v[id] = 0.5 * (v[2 * id + 1] + v[2 * id + 2]);
    }
    // forward: rebuild every node from the root and the integrands
    let mut r = vec![0.0; tree.node_count()];
    r[0] = v[0];
    for id in 1..tree.node_count() {
        let p = (id - 1) / 2;
        r[id] = r[p] + sigma0 * z[p] * tree.increment_sign(id) * dt.sqrt();
    }
    let repr = sup(&r[leaves.clone()], &v[leaves]);

    let tree2 = NoiseTree::new(2, 0.5)?;
    let a: Vec<f64> = (0..tree2.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let sums = conditional_sums(&TreeProcess::new(tree2, a.clone())?);
    // enumerate the four root-to-leaf paths
    let mut root = 0.0;
    for leaf in 3..7 {
        let mid = (leaf - 1) / 2;
        root += 0.25 * (a[0] + a[mid]);
    }
    let mut enum_err = (sums.root() - root).abs();
    for mid in [1, 2] {
        enum_err = enum_err.max((sums.get(mid) - a[mid]).abs());
    }
    Ok(Outcome {
        pass: repr <= 1e-14 && enum_err <= 1e-14,
        value: repr.max(enum_err),
        tolerance: "<= 1e-14".into(),
        detail: format!("K=3 reconstruction {repr:.3e}, K=2 enumeration {enum_err:.3e}"),
    })
}

/// RK4 backward for `P' = P^2 - q`, `r' = -sigma0^2 P / 2` from
/// `P(T) = q_T`, `r(T) = 0`.
fn riccati(q: f64, q_t: f64, sigma0: f64, horizon: f64, steps: usize) -> (f64, f64) {
    let f = |p: f64| (p * p - q, -0.5 * sigma0 * sigma0 * p);
    let h = -horizon / steps as f64;
    let (mut p, mut r) = (q_t, 0.0);
    for _ in 0..steps {
        let k1 = f(p);
        let k2 = f(p + 0.5 * h * k1.0);
        let k3 = f(p + 0.5 * h * k2.0);
        let k4 = f(p + h * k3.0);
        p += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        r += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (p, r)
}

fn riccati_oracle() -> Result<Outcome> {
    let m = model("lq")?;
    let x0 = 1.0;
    let (p, r) = riccati(1.0, 0.5, m.sigma0, m.horizon, 100_000);
    let (y, z) = (0.5 * p * x0 * x0 + r, p * x0);
    let g = PeriodicGrid::new(8)?;
    let root = |k: usize| -> Result<(f64, f64)> {
        let tree = NoiseTree::over(m.horizon, k)?;
        let mu = TreeProcess::constant(tree, DensityField::uniform(g));
        let t = solve_major_fbsde(&mu, &m, x0, &MajorConfig::default())?;
        Ok((*t.y0.root(), *t.z0.root()))
    };
    let (y5, z5) = root(5)?;
    let (y10, z10) = root(10)?;
    let (y20, z20) = root(20)?;
    let rel_y = ((2.0 * y10 - y5) - y).abs() / y.abs();
    let rel_z = ((2.0 * z10 - z5) - z).abs() / z.abs();
    let halving = [(y10 - y).abs() / (y20 - y).abs(), (z10 - z).abs() / (z20 - z).abs()];
    let rel = rel_y.max(rel_z);
    Ok(Outcome {
        pass: rel <= 2e-2 && halving.iter().all(|h| (1.8..=2.2).contains(h)),
        value: rel,
        tolerance: "relative <= 2e-2, halving ratio in [1.8, 2.2]".into(),
        detail: format!(
            "oracle (Y0, Z0) = ({y:.6}, {z:.6}); refined ({:.6}, {:.6}); halving {}",
            2.0 * y10 - y5,
            2.0 * z10 - z5,
            fmt(&halving)
        ),
    })
}

fn good_regime() -> Result<(ModelSpec, DensityField, NoiseTree)> {
    let m = model("monotone-conv")?.with_sigma0(3.0).with_horizon(0.5);
    let g = PeriodicGrid::new(64)?;
    Ok((m, DensityField::uniform(g), NoiseTree::over(0.5, 8)?))
}

fn contraction() -> Result<Outcome> {
    let (m, mu0, tree) = good_regime()?;
    let sol = solve_equilibrium(&m, 0.0, &mu0, &tree, &EquilibriumConfig::default())?;
    let worst = sol.worst_ratio();
    let (threshold, probes) =
        bisect_contraction_threshold(&m, 0.0, &mu0, 8, 0.5, 8.0, 0.5, 4, &EquilibriumConfig::default())?;
    let probed: Vec<String> = probes
        .iter()
        .map(|p| format!("T={}:{:.3}{}", p.horizon, p.worst_ratio, if p.converged { "" } else { "!" }))
        .collect();
    Ok(Outcome {
        pass: worst <= 0.5,
        value: worst,
        tolerance: "ratios <= 0.5 from iterate 2".into(),
        detail: format!(
            "ratios {}; bisected T-threshold (K=8) {threshold}; probes {}",
            fmt(&sol.contraction_ratios),
            probed.join(" ")
        ),
    })
}

fn uniqueness() -> Result<Outcome> {
    let (m, mu0, tree) = good_regime()?;
    let cfg = EquilibriumConfig::default();
    let sols = multi_start(&m, 0.0, &mu0, &tree, &cfg)?;
    let s = spread(&sols);
    let its: Vec<usize> = sols.iter().map(|q| q.outer_residuals.len()).collect();
    Ok(Outcome {
        pass: s <= 10.0 * cfg.tol,
        value: s,
        tolerance: format!("<= {:.0e} (10 tol)", 10.0 * cfg.tol),
        detail: format!("outer iterations {its:?}"),
    })
}

fn sigma0_trend(s: &Settings) -> Result<Outcome> {
    let mut st = Settings {
        sweep_sigma0: vec![0.5, 1.0, 2.0, 4.0],
        ..s.clone()
    };
    st.apply_text("model=monotone-conv\nT=0.5\ngrid.n=64\ntree.K=8\nmu0=uniform\nx0=0\nouter.tol=1e-6")?;
    let rows = run_sigma_sweep(&st)?;
    let resolution = 10.0 * st.outer_tol;
    let ok_rows = rows.iter().all(|r| r.status == "ok");
    let excess = rows.windows(2).map(|w| w[1].spread - w[0].spread).fold(f64::NEG_INFINITY, f64::max);
    let spreads: Vec<f64> = rows.iter().map(|r| r.spread).collect();
    let ratios: Vec<f64> = rows.iter().map(|r| r.max_ratio).collect();
    Ok(Outcome {
        pass: ok_rows && excess <= resolution,
        value: excess,
        tolerance: format!("spread[i+1] - spread[i] <= {resolution:.0e} (10 tol)"),
        detail: format!("spreads {}; worst ratios {}", fmt(&spreads), fmt(&ratios)),
    })
}

fn linearization() -> Result<Outcome> {
    let m = model("monotone-conv")?;
    let g = PeriodicGrid::new(32)?;
    let mu0 = DensityField::from_profile(g, |x| 1.0 + 0.4 * (2.0 * PI * x).cos())?;
    let tree = NoiseTree::over(0.5, 4)?;
    let pilot = solve_equilibrium(&m, 0.0, &mu0, &tree, &EquilibriumConfig::default())?;
    let cfg = pinned(pilot.minor.substeps, 1e-12, 1e-14);
    let base = solve_equilibrium(&m, 0.0, &mu0, &tree, &cfg)?;
    let lc = LinearizedConfig::default();
    let along_x0 = Direction {
        dx0: 1.0,
        dmu: SignedMeasure::zeros(g),
    };
    let lin = solve_linearized(&base, &along_x0, &m, &lc)?;
    let mut remainder = Vec::new();
    let mut first = Vec::new();
    for eps in [1e-2, 5e-3, 2.5e-3] {
        let pert = solve_equilibrium(&m, eps, &mu0, &tree, &cfg)?;
        remainder.push((pert.major.y0.root() - base.major.y0.root() - eps * lin.dy0.root()).abs());
        let fx = pert
            .major
            .x0
            .values()
            .iter()
            .zip(base.major.x0.values())
            .zip(lin.dx0.values())
            .map(|((a, b), d)| ((a - b) / eps - d).abs())
            .fold(0.0, f64::max);
        first.push(fx);
    }
    let ratios: Vec<f64> = remainder.windows(2).map(|w| w[0] / w[1]).collect();
    let first_ok = first.windows(2).all(|w| w[1] < w[0]);
    let mixed = Direction {
        dx0: 1.0,
        dmu: SignedMeasure::new(g, g.centers().map(|x| 0.01 * (2.0 * PI * x).sin() / 32.0).collect())?,
    };
    let a = solve_linearized(&base, &mixed, &m, &lc)?;
    let b = solve_linearized(&base, &mixed.scaled(2.0), &m, &lc)?;
    let twice: Vec<f64> = a.dy0.values().iter().map(|v| 2.0 * v).collect();
    let homog = sup(&twice, b.dy0.values());
    let worst = ratios.iter().map(|r| (r / 4.0).ln().abs()).fold(0.0, f64::max).exp();
    Ok(Outcome {
        pass: ratios.iter().all(|r| (4.0 / 3.0..=12.0).contains(r)) && first_ok && homog <= 1e-10,
        value: worst,
        tolerance: "remainder ratio within x3 of 4; homogeneity <= 1e-10".into(),
        detail: format!(
            "remainders {}; ratios {}; first-order errors {}; homogeneity {homog:.3e}",
            fmt(&remainder),
            fmt(&ratios),
            fmt(&first)
        ),
    })
}

fn representation(seed: u64) -> Result<Outcome> {
    let m = model("monotone-conv")?;
    let g = PeriodicGrid::new(32)?;
    let mu0 = DensityField::uniform(g);
    let tree = NoiseTree::over(0.5, 6)?;
    let pilot = solve_equilibrium(&m, 0.0, &mu0, &tree, &EquilibriumConfig::default())?;
    let cfg = pinned(pilot.minor.substeps, 1e-10, 1e-12);
    let sol = solve_equilibrium(&m, 0.0, &mu0, &tree, &cfg)?;
    let mf = MasterField::new(&m, tree, &cfg);
    let nodes = sample_interior_nodes(&tree, 10, seed);
    let samples = representation_check(&sol, &mf, &nodes)?;
    let worst = samples.iter().fold(0.0f64, |a, s| a.max(s.gap));
    Ok(Outcome {
        pass: samples.len() == 10 && worst <= 5e-3,
        value: worst,
        tolerance: "<= 5e-3 on 10 nodes".into(),
        detail: format!("nodes {nodes:?}"),
    })
}

fn residual_at(m: &ModelSpec, n: usize, depth: usize, rc: ResidualConfig, substeps: usize) -> Result<f64> {
    let tree = NoiseTree::over(m.horizon, depth)?;
    let mf = MasterField::new(m, tree, &pinned(substeps, 1e-11, 1e-13));
    let r = master_equation_residual(&mf, depth / 2, 0.0, &DensityField::uniform(PeriodicGrid::new(n)?), &rc)?;
    Ok(r.res_major)
}

fn master_residual() -> Result<Outcome> {
    let m = model("monotone-conv")?.with_sigma0(3.0);
    let coarse_rc = ResidualConfig { dx0: 0.1, eps: 1e-2 };
    let fine_rc = ResidualConfig { dx0: 0.05, eps: 5e-3 };
    let fine_tree = NoiseTree::over(m.horizon, 8)?;
    let pilot = solve_equilibrium(
        &m,
        0.0,
        &DensityField::uniform(PeriodicGrid::new(64)?),
        &fine_tree,
        &EquilibriumConfig::default(),
    )?;
    let coarse = residual_at(&m, 32, 4, coarse_rc, pilot.minor.substeps)?;
    let fine = residual_at(&m, 64, 8, fine_rc, pilot.minor.substeps)?;
    let ratio = coarse / fine;

    let zero = model("zero")?;
    let zero_res = residual_at(&zero, 32, 4, coarse_rc, 4)?;
    let scheme = 10.0 * (zero.horizon / 4.0 + 1.0 / 32.0 + coarse_rc.eps);
    Ok(Outcome {
        pass: ratio >= 1.5 && zero_res <= scheme,
        value: ratio,
        tolerance: format!("ratio >= 1.5; zero model <= {scheme:.3}"),
        detail: format!("res_major {coarse:.4e} -> {fine:.4e}; zero model {zero_res:.3e}"),
    })
}

fn appendix_decay(s: &Settings) -> Result<Outcome> {
    let st = Settings {
        decay_n: 128,
        decay_dt: 2.5e-4,
        decay_horizon: 0.5,
        decay_drift: 0.0,
        ..s.clone()
    };
    let r = run_decay_test(&st)?;
    let et = (r.gamma_transport / r.oracle_transport - 1.0).abs();
    let ec = (r.gamma_conservation / r.oracle_conservation - 1.0).abs();
    Ok(Outcome {
        pass: et <= 0.02 && ec <= 0.05,
        value: et.max(ec),
        tolerance: "transport within 2% of 2 pi^2, conservation within 5% of its oracle".into(),
        detail: format!(
            "transport {:.4} vs {:.4} (R^2 {:.5}); conservation {:.4} vs {:.4} (R^2 {:.5})",
            r.gamma_transport, r.oracle_transport, r.r2_transport, r.gamma_conservation, r.oracle_conservation, r.r2_conservation
        ),
    })
}

fn band(v: &[f64]) -> f64 {
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    hi / lo
}

fn t_uniformity(s: &Settings) -> Result<Outcome> {
    let mut st = Settings {
        sweep_t: vec![1.0, 2.0, 4.0, 8.0],
        ..s.clone()
    };
    st.apply_text("model=assumption-b\ngrid.n=64\nsweep.dt=0.5\nmu0=uniform\nx0=0")?;
    let rows = run_t_uniformity(&st)?;
    let ok_rows = rows.iter().all(|r| r.status == "ok");
    let cols: [(&str, Vec<f64>); 4] = [
        ("sup_grad_u", rows.iter().map(|r| r.sup_grad_u).collect()),
        ("w0_grad", rows.iter().map(|r| r.w0_grad).collect()),
        ("v0_bmo", rows.iter().map(|r| r.v0_bmo).collect()),
        ("major_bmo", rows.iter().map(|r| r.major_bmo).collect()),
    ];
    let bands: Vec<f64> = cols.iter().map(|(_, v)| band(v)).collect();
    let worst = bands.iter().copied().fold(0.0, f64::max);
    let described: Vec<String> = cols
        .iter()
        .zip(&bands)
        .map(|((k, v), b)| format!("{k} {} band {b:.3}{}", fmt(v), if *b <= 1.5 { "" } else { " (outside x1.5)" }))
        .collect();
    let statuses: Vec<&str> = rows.iter().map(|r| r.status.as_str()).filter(|s| *s != "ok").collect();
    Ok(Outcome {
        pass: ok_rows && worst <= 3.0,
        value: worst,
        tolerance: "max/min <= 3 (x1.5 logged)".into(),
        detail: format!("{}; errors {statuses:?}", described.join("; ")),
    })
}

/// Runs criterion `id` (1-based).
pub fn run_criterion(id: u32, s: &Settings) -> Criterion {
    let start = Instant::now();
    let outcome = match id {
        1 => conservation(s.seed),
        2 => operator_order(),
        3 => tree_exactness(s.seed),
        4 => riccati_oracle(),
        5 => contraction(),
        6 => uniqueness(),
        7 => sigma0_trend(s),
        8 => linearization(),
        9 => representation(s.seed),
        10 => master_residual(),
        11 => appendix_decay(s),
        12 => t_uniformity(s),
        _ => Err(mmfg_core::Error::InvalidParameter(format!("no criterion {id}"))),
    };
    let name = (id as usize).checked_sub(1).and_then(|i| CRITERIA.get(i)).copied().unwrap_or("unknown");
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok(o) => Criterion {
            id,
            name,
            pass: o.pass,
            value: o.value,
            tolerance: o.tolerance,
            detail: o.detail,
            seconds,
        },
        Err(e) => Criterion {
            id,
            name,
            pass: false,
            value: f64::NAN,
            tolerance: String::new(),
            detail: format!("error: {e}"),
            seconds,
        },
    }
}

/// One line per criterion.
pub fn report_line(c: &Criterion) -> String {
    format!(
        "[{}] {:>2} {:<16} value {:.4e} ({}) {:.1}s | {}",
        if c.pass { "PASS" } else { "FAIL" },
        c.id,
        c.name,
        c.value,
        c.tolerance,
        c.seconds,
        c.detail
    )
}

/// Runs `ids` in order, calling `each` after every criterion.
pub fn run_selected(ids: &[u32], s: &Settings, mut each: impl FnMut(&Criterion)) -> Manifest {
    let criteria: Vec<Criterion> = ids
        .iter()
        .map(|&id| {
            let c = run_criterion(id, s);
            each(&c);
            c
        })
        .collect();
    Manifest {
        all_pass: criteria.iter().all(|c| c.pass),
        criteria,
    }
}

/// Every criterion; writes `manifest.json` under `s.out`.
pub fn run_all(s: &Settings, each: impl FnMut(&Criterion)) -> Result<(Manifest, PathBuf)> {
    let ids: Vec<u32> = (1..=CRITERIA.len() as u32).collect();
    let manifest = run_selected(&ids, s, each);
    let path = write_json(&s.out, "manifest.json", &manifest)?;
    Ok((manifest, path))
}
