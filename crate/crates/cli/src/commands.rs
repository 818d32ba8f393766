//! The solver subcommands: each writes `summary.json` plus CSV tables.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use serde::Serialize;

use mmfg_core::coupled::{
    master_equation_residual, solve_by_continuation, solve_equilibrium, solve_linearized, Direction,
    EquilibriumSolution, MajorTerms, MasterField, WindowReport,
};
use mmfg_core::minor::{gradient_diagnostic, v0_bmo_diagnostic};
use mmfg_core::torus::SignedMeasure;
use mmfg_core::tree::{write_tree_csv, TreeProcess};
use mmfg_core::Result;

use crate::config::Settings;
use crate::experiments::{run_decay_test, run_sigma_sweep, run_t_uniformity};
use crate::output::{write_csv, write_json};

#[derive(Debug, Serialize)]
pub struct Diagnostics {
    pub y0_root: f64,
    pub z0_root: f64,
    pub sup_grad_u: f64,
    pub v0_bmo: f64,
    pub max_momentum: f64,
    pub substeps: usize,
    pub truncation_radius: Option<f64>,
}

impl Diagnostics {
    pub fn of(sol: &EquilibriumSolution) -> Self {
        Self {
            y0_root: *sol.major.y0.root(),
            z0_root: *sol.major.z0.root(),
            sup_grad_u: gradient_diagnostic(&sol.minor).sup_grad_u,
            v0_bmo: v0_bmo_diagnostic(&sol.minor),
            max_momentum: sol.max_momentum(),
            substeps: sol.minor.substeps,
            truncation_radius: sol.truncation_radius,
        }
    }
}

#[derive(Debug, Serialize)]
struct Histories<'a> {
    outer_residuals: &'a [f64],
    contraction_ratios: &'a [f64],
    major_picard: &'a [f64],
    minor_inner: &'a [f64],
}

fn histories(sol: &EquilibriumSolution) -> Histories<'_> {
    Histories {
        outer_residuals: &sol.outer_residuals,
        contraction_ratios: &sol.contraction_ratios,
        major_picard: &sol.major.picard_residuals,
        minor_inner: &sol.minor.inner_residuals,
    }
}

#[derive(Debug, Serialize)]
struct Summary<'a, E: Serialize> {
    command: &'static str,
    model: &'a str,
    config: &'a Settings,
    residual_histories: Option<Histories<'a>>,
    diagnostics: Option<Diagnostics>,
    extra: E,
}

fn write_tree(s: &Settings, name: &str, x0: &TreeProcess<f64>, y0: &TreeProcess<f64>, z0: &TreeProcess<f64>) -> Result<PathBuf> {
    std::fs::create_dir_all(&s.out)?;
    let path = s.out.join(name);
    write_tree_csv(BufWriter::new(File::create(&path)?), x0, y0, z0)?;
    Ok(path)
}

/// `solve`: one equilibrium; `summary.json`, `tree.csv`.
pub fn solve(s: &Settings) -> Result<Vec<PathBuf>> {
    let model = s.model_spec()?;
    let sol = solve_equilibrium(&model, s.x0, &s.initial_density()?, &s.tree()?, &s.equilibrium())?;
    let summary = Summary {
        command: "solve",
        model: &s.model,
        config: s,
        residual_histories: Some(histories(&sol)),
        diagnostics: Some(Diagnostics::of(&sol)),
        extra: (),
    };
    Ok(vec![
        write_json(&s.out, "summary.json", &summary)?,
        write_tree(s, "tree.csv", &sol.major.x0, &sol.major.y0, &sol.major.z0)?,
    ])
}

#[derive(Debug, Serialize)]
struct ContinuationExtra {
    window_levels: usize,
    halvings: usize,
    table_solves: usize,
    interpolation_error: f64,
}

/// `continue`: windowed solve; `summary.json`, `windows.csv`, `tree.csv`.
pub fn continuation(s: &Settings) -> Result<Vec<PathBuf>> {
    let model = s.model_spec()?;
    let cont = solve_by_continuation(&model, s.x0, &s.initial_density()?, &s.tree()?, &s.continuation())?;
    let sol = &cont.solution;
    let summary = Summary {
        command: "continue",
        model: &s.model,
        config: s,
        residual_histories: Some(histories(sol)),
        diagnostics: Some(Diagnostics::of(sol)),
        extra: ContinuationExtra {
            window_levels: cont.window_levels,
            halvings: cont.halvings,
            table_solves: cont.table_solves,
            interpolation_error: cont.interpolation_error(),
        },
    };
    let windows: &[WindowReport] = &cont.windows;
    Ok(vec![
        write_json(&s.out, "summary.json", &summary)?,
        write_csv(&s.out, "windows.csv", windows)?,
        write_tree(s, "tree.csv", &sol.major.x0, &sol.major.y0, &sol.major.z0)?,
    ])
}

#[derive(Debug, Serialize)]
struct LinearizedExtra<'a> {
    dx0: f64,
    dy0_root: f64,
    dz0_root: f64,
    iterations: usize,
    residuals: &'a [f64],
}

/// `linearize`: base equilibrium plus the tangent along `dx0 = linearize.dx0`;
/// `summary.json`, `linearized.csv` with the `(dX0, dY0, dZ0)` tree.
pub fn linearize(s: &Settings) -> Result<Vec<PathBuf>> {
    let model = s.model_spec()?;
    let mu0 = s.initial_density()?;
    let base = solve_equilibrium(&model, s.x0, &mu0, &s.tree()?, &s.equilibrium())?;
    let dir = Direction {
        dx0: s.linearize_dx0,
        dmu: SignedMeasure::zeros(mu0.grid()),
    };
    let lin = solve_linearized(&base, &dir, &model, &s.linearize)?;
    let summary = Summary {
        command: "linearize",
        model: &s.model,
        config: s,
        residual_histories: Some(histories(&base)),
        diagnostics: Some(Diagnostics::of(&base)),
        extra: LinearizedExtra {
            dx0: s.linearize_dx0,
            dy0_root: *lin.dy0.root(),
            dz0_root: *lin.dz0.root(),
            iterations: lin.iterations,
            residuals: &lin.residuals,
        },
    };
    Ok(vec![
        write_json(&s.out, "summary.json", &summary)?,
        write_tree(s, "linearized.csv", &lin.dx0, &lin.dy0, &lin.dz0)?,
    ])
}

#[derive(Debug, Serialize)]
struct ResidualExtra {
    level: usize,
    t: f64,
    res_major: f64,
    res_minor_sup: f64,
    major_terms: MajorTerms,
}

#[derive(Debug, Serialize)]
struct MinorResidualRow {
    x: f64,
    res_minor: f64,
}

/// `residual`: master-equation residuals at `(T/2, x0, mu0)`;
/// `summary.json`, `residual_minor.csv`.
pub fn residual(s: &Settings) -> Result<Vec<PathBuf>> {
    let model = s.model_spec()?;
    let tree = s.tree()?;
    let level = tree.depth() / 2;
    let mf = MasterField::new(&model, tree, &s.equilibrium());
    let r = master_equation_residual(&mf, level, s.x0, &s.initial_density()?, &s.residual)?;
    let g = r.res_minor.grid();
    let rows: Vec<MinorResidualRow> = g
        .centers()
        .zip(r.res_minor.values())
        .map(|(x, v)| MinorResidualRow { x, res_minor: *v })
        .collect();
    let summary = Summary {
        command: "residual",
        model: &s.model,
        config: s,
        residual_histories: None,
        diagnostics: None,
        extra: ResidualExtra {
            level,
            t: mf.time(level),
            res_major: r.res_major,
            res_minor_sup: r.res_minor.sup_norm(),
            major_terms: r.major_terms,
        },
    };
    Ok(vec![
        write_json(&s.out, "summary.json", &summary)?,
        write_csv(&s.out, "residual_minor.csv", &rows)?,
    ])
}

/// `sweep-sigma`: `sigma_sweep.csv`.
pub fn sweep_sigma(s: &Settings) -> Result<Vec<PathBuf>> {
    Ok(vec![write_csv(&s.out, "sigma_sweep.csv", &run_sigma_sweep(s)?)?])
}

/// `sweep-T`: `t_uniformity.csv`.
pub fn sweep_t(s: &Settings) -> Result<Vec<PathBuf>> {
    Ok(vec![write_csv(&s.out, "t_uniformity.csv", &run_t_uniformity(s)?)?])
}

/// `decay`: `decay.json`.
pub fn decay(s: &Settings) -> Result<Vec<PathBuf>> {
    Ok(vec![write_json(&s.out, "decay.json", &run_decay_test(s)?)?])
}
