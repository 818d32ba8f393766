use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::major::MajorTriple;
use crate::minor::MinorSolution;
use crate::model::{ModelSpec, Terminal};
use crate::torus::{wasserstein1, DensityField, PeriodicGrid, ScalarField};
use crate::tree::{NoiseTree, TreeProcess};

use super::{solve_equilibrium_with, EquilibriumConfig, EquilibriumSolution, Truncation};

/// Mixing weights of the tabulated measure family.
const WEIGHTS: [f64; 3] = [0.0, 0.25, 0.5];
const WEIGHT_RANGE: (f64, f64) = (-0.25, 0.75);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationConfig {
    /// Window length `delta`, rounded to whole tree levels.
    pub window: f64,
    pub max_halvings: usize,
    /// Target spacing of the `x0` lattice.
    pub dx0: f64,
    pub max_x0_points: usize,
    /// Lattice half-width is `margin * sigma0 sqrt(dt) level + pad`.
    pub margin: f64,
    pub pad: f64,
    /// Number of tabulated shifts (must divide the grid size).
    pub phases: usize,
    /// Mode-1 amplitude of the family's base density.
    pub base_amplitude: f64,
    /// Largest accepted `W1` distance between a state and its projection.
    pub max_projection_w1: f64,
    pub equilibrium: EquilibriumConfig,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            window: 0.5,
            max_halvings: 6,
            dx0: 0.125,
            max_x0_points: 161,
            margin: 1.25,
            pad: 0.5,
            phases: 8,
            base_amplitude: 0.08,
            max_projection_w1: 1e-2,
            equilibrium: EquilibriumConfig::default(),
        }
    }
}

/// Coordinates of a density in the family `(1 - w) S_s base + w uniform`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Projection {
    /// Shift in cells, in `[0, n)`.
    pub shift: f64,
    pub weight: f64,
    /// `W1` distance to the family member at the nearest whole shift.
    pub residual: f64,
}

/// Master fields `(U0, U)` at one window edge, tabulated over
/// `x0 x shift x weight` and interpolated with local cubics in `x0` and
/// shift and the quadratic through the three weights.
#[derive(Debug, Clone, Serialize)]
pub struct MasterTable {
    pub time: f64,
    pub x0_lo: f64,
    pub x0_step: f64,
    pub x0_points: usize,
    pub phases: usize,
    #[serde(skip)]
    base: DensityField,
    max_projection_w1: f64,
    u0: Vec<f64>,
    #[serde(skip)]
    u: Vec<ScalarField>,
}

fn lagrange4(t: f64) -> [f64; 4] {
    [
        -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0,
        t * (t - 2.0) * (t - 3.0) / 2.0,
        -t * (t - 1.0) * (t - 3.0) / 2.0,
        t * (t - 1.0) * (t - 2.0) / 6.0,
    ]
}

fn lagrange3(t: f64) -> [f64; 3] {
    [(t - 1.0) * (t - 2.0) / 2.0, -t * (t - 2.0), t * (t - 1.0) / 2.0]
}

impl MasterTable {
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.phases + j) * WEIGHTS.len() + k
    }

    pub fn x0_nodes(&self) -> Vec<f64> {
        (0..self.x0_points).map(|i| self.x0_lo + i as f64 * self.x0_step).collect()
    }

    pub fn base(&self) -> &DensityField {
        &self.base
    }

    /// Family member at tabulated shift `j` and weight `w`.
    pub fn member(&self, j: usize, w: f64) -> Result<DensityField> {
        let n = self.base.grid().n();
        let shifted = self.base.shifted((j * n / self.phases) as isize);
        mix_signed(&shifted, w)
    }

    /// Largest `|U0(mu') - U0(mu)| / W1(mu, mu')` over pairs of tabulated
    /// family members at the `x0` node nearest to `x0`.
    pub fn lipschitz_estimate(&self, x0: f64) -> Result<f64> {
        let i = (((x0 - self.x0_lo) / self.x0_step).round().max(0.0) as usize).min(self.x0_points - 1);
        let members: Vec<(usize, DensityField)> = (0..self.phases)
            .flat_map(|j| (0..WEIGHTS.len()).map(move |k| (j, k)))
            .map(|(j, k)| Ok((self.index(i, j, k), self.member(j, WEIGHTS[k])?)))
            .collect::<Result<_>>()?;
        let mut best = 0.0f64;
        for (a, (ia, ma)) in members.iter().enumerate() {
            for (ib, mb) in &members[a + 1..] {
                let d = wasserstein1(ma, mb)?;
                if d > 0.0 {
                    best = best.max((self.u0[*ia] - self.u0[*ib]).abs() / d);
                }
            }
        }
        Ok(best)
    }

    /// Least-squares shift and weight of `mu`, weight clamped to the guarded
    /// range.
    pub fn project(&self, mu: &DensityField) -> Result<Projection> {
        let grid = mu.grid();
        if grid != self.base.grid() {
            return Err(Error::GridMismatch(grid.n(), self.base.grid().n()));
        }
        let n = grid.n();
        let u = 1.0 / n as f64;
        let dev: Vec<f64> = mu.masses().iter().map(|m| m - u).collect();
        let bdev: Vec<f64> = self.base.masses().iter().map(|m| m - u).collect();
        let norm: f64 = bdev.iter().map(|v| v * v).sum();
        let corr = |k: usize| -> f64 { (0..n).map(|j| dev[j] * bdev[(j + n - k) % n]).sum() };
        let (shift, k, peak) = if norm < 1e-30 {
            (0.0, 0, 0.0)
        } else {
            let c: Vec<f64> = (0..n).map(corr).collect();
            let k = (0..n).fold(0, |b, j| if c[j] > c[b] { j } else { b });
            let (cl, c0, cr) = (c[(k + n - 1) % n], c[k], c[(k + 1) % n]);
            let curv = cl - 2.0 * c0 + cr;
            let d = if curv < 0.0 { (0.5 * (cl - cr) / curv).clamp(-0.5, 0.5) } else { 0.0 };
            ((k as f64 + d).rem_euclid(n as f64), k, c0 - 0.25 * (cl - cr) * d)
        };
        let a = if norm < 1e-30 { 0.0 } else { peak / norm };
        let weight = (1.0 - a).clamp(WEIGHT_RANGE.0, WEIGHT_RANGE.1);
        let member = mix_signed(&self.base.shifted(k as isize), weight)?;
        let residual = wasserstein1(mu, &member)?;
        Ok(Projection { shift, weight, residual })
    }

    fn stencil(&self, x0: f64, mu: &DensityField) -> Result<Vec<(usize, f64)>> {
        let hi = self.x0_lo + (self.x0_points - 1) as f64 * self.x0_step;
        if !(x0 >= self.x0_lo - 1e-12 && x0 <= hi + 1e-12) {
            return Err(Error::Extrapolation(format!(
                "x0 = {x0:.4} outside [{:.4}, {hi:.4}] at t = {}",
                self.x0_lo, self.time
            )));
        }
        let p = self.project(mu)?;
        if p.residual > self.max_projection_w1 {
            return Err(Error::Extrapolation(format!(
                "density is {:.3e} (W1) from the tabulated family at t = {}",
                p.residual, self.time
            )));
        }
        let xi = (x0 - self.x0_lo) / self.x0_step;
        let i0 = (xi.floor() as isize - 1).clamp(0, self.x0_points as isize - 4) as usize;
        let wx = lagrange4(xi - i0 as f64);
        let sigma = p.shift * self.phases as f64 / mu.grid().n() as f64;
        let j0 = sigma.floor() as isize - 1;
        let ws = lagrange4(sigma - j0 as f64);
        let ww = lagrange3(p.weight / WEIGHTS[1]);
        let mut out = Vec::with_capacity(48);
        for (a, wa) in wx.iter().enumerate() {
            for (b, wb) in ws.iter().enumerate() {
                let j = (j0 + b as isize).rem_euclid(self.phases as isize) as usize;
                for (k, wk) in ww.iter().enumerate() {
                    out.push((self.index(i0 + a, j, k), wa * wb * wk));
                }
            }
        }
        Ok(out)
    }
}

/// `(1 - w) mu + w uniform` for `w` in the guarded range (negative `w`
/// extrapolates away from uniform).
fn mix_signed(mu: &DensityField, w: f64) -> Result<DensityField> {
    let u = 1.0 / mu.grid().n() as f64;
    DensityField::new(mu.grid(), mu.masses().iter().map(|m| (1.0 - w) * m + w * u).collect())
}

impl Terminal for MasterTable {
    fn major(&self, x0: f64, mu: &DensityField) -> Result<f64> {
        Ok(self.stencil(x0, mu)?.iter().map(|&(i, w)| w * self.u0[i]).sum())
    }

    fn minor(&self, x0: f64, mu: &DensityField) -> Result<ScalarField> {
        let grid = mu.grid();
        let mut out = vec![0.0; grid.n()];
        for (i, w) in self.stencil(x0, mu)? {
            for (o, v) in out.iter_mut().zip(self.u[i].values()) {
                *o += w * v;
            }
        }
        ScalarField::new(grid, out)
    }
}

/// Per-window statistics of the forward stitching pass.
#[derive(Debug, Clone, Serialize)]
pub struct WindowReport {
    pub start_level: usize,
    pub levels: usize,
    pub solves: usize,
    pub worst_ratio: f64,
    pub max_outer_iterations: usize,
    /// Largest `|U0 table - Y0 re-solved|` over the nodes at the window's
    /// right edge (zero for the last window).
    pub edge_gap: f64,
    /// Same for the minor field, in sup norm.
    pub edge_gap_u: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuationSolution {
    pub solution: EquilibriumSolution,
    pub window_levels: usize,
    pub halvings: usize,
    pub windows: Vec<WindowReport>,
    pub table_solves: usize,
    #[serde(skip)]
    pub tables: Vec<MasterTable>,
}

impl ContinuationSolution {
    /// Largest edge gap: the interpolation error estimate at the states the
    /// stitched solution actually reaches.
    pub fn interpolation_error(&self) -> f64 {
        self.windows.iter().fold(0.0, |a: f64, w| a.max(w.edge_gap))
    }
}

/// Window edges `0 = e_0 < ... < e_W = K`, full windows counted from the
/// horizon.
fn edges(depth: usize, levels: usize) -> Vec<usize> {
    let mut e = vec![depth];
    while *e.last().expect("nonempty") > 0 {
        let last = *e.last().expect("nonempty");
        e.push(last.saturating_sub(levels));
    }
    e.reverse();
    e
}

fn window_tree(tree: &NoiseTree, from: usize, to: usize) -> Result<NoiseTree> {
    Ok(NoiseTree::new(to - from, tree.dt())?.starting_at(tree.t0() + from as f64 * tree.dt()))
}

fn family_base(grid: PeriodicGrid, amplitude: f64) -> Result<DensityField> {
    DensityField::from_profile(grid, |x| 1.0 + amplitude * (2.0 * PI * x).cos())
}

#[allow(clippy::too_many_arguments)]
fn build_table(
    model: &ModelSpec,
    x0: f64,
    grid: PeriodicGrid,
    tree: &NoiseTree,
    level: usize,
    next: usize,
    terminal: &dyn Terminal,
    cfg: &ContinuationConfig,
    eq: &EquilibriumConfig,
) -> Result<MasterTable> {
    let n = grid.n();
    if cfg.phases < 4 || n % cfg.phases != 0 {
        return Err(Error::InvalidParameter(format!("{} phases on {n} cells", cfg.phases)));
    }
    let reach = model.sigma0 * tree.sqrt_dt() * level as f64;
    let half = cfg.margin * reach + cfg.pad;
    let points = (((2.0 * half / cfg.dx0).ceil() as usize) + 1).clamp(5, cfg.max_x0_points.max(5));
    let step = 2.0 * half / (points - 1) as f64;
    let sub = window_tree(tree, level, next)?;
    let mut table = MasterTable {
        time: tree.t0() + level as f64 * tree.dt(),
        x0_lo: x0 - half,
        x0_step: step,
        x0_points: points,
        phases: cfg.phases,
        base: family_base(grid, cfg.base_amplitude)?,
        max_projection_w1: cfg.max_projection_w1,
        u0: vec![0.0; points * cfg.phases * WEIGHTS.len()],
        u: vec![ScalarField::zeros(grid); points * cfg.phases * WEIGHTS.len()],
    };
    // one sequential x0 sweep per family member, warm-started along x0
    let members: Vec<(usize, usize)> = (0..cfg.phases)
        .flat_map(|j| (0..WEIGHTS.len()).map(move |k| (j, k)))
        .collect();
    let rows: Vec<Vec<(f64, ScalarField)>> = members
        .par_iter()
        .map(|&(j, k)| {
            let mu = table.member(j, WEIGHTS[k])?;
            let mut warm: Option<EquilibriumSolution> = None;
            let mut row = Vec::with_capacity(points);
            for i in 0..points {
                let xi = table.x0_lo + i as f64 * step;
                let sol = solve_equilibrium_with(model, xi, &mu, &sub, terminal, eq, warm.as_ref())?;
                row.push((*sol.major.y0.root(), sol.minor.u.root().clone()));
                warm = Some(sol);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    for (&(j, k), row) in members.iter().zip(rows) {
        for (i, (y, u)) in row.into_iter().enumerate() {
            let idx = table.index(i, j, k);
            table.u0[idx] = y;
            table.u[idx] = u;
        }
    }
    Ok(table)
}

struct Stitch {
    x0: Vec<f64>,
    y0: Vec<f64>,
    z0: Vec<f64>,
    mu: Vec<Option<DensityField>>,
    u: Vec<Option<ScalarField>>,
    v0: Vec<Option<ScalarField>>,
}

fn run(
    model: &ModelSpec,
    x0: f64,
    mu0: &DensityField,
    tree: &NoiseTree,
    cfg: &ContinuationConfig,
    levels: usize,
) -> Result<(EquilibriumSolution, Vec<WindowReport>, usize, Vec<MasterTable>)> {
    let k = tree.depth();
    let grid = mu0.grid();
    let e = edges(k, levels);
    let eq = &cfg.equilibrium;
    let table_eq = EquilibriumConfig {
        truncation: Truncation::Off,
        ..eq.clone()
    };

    // backward: tables at every interior edge, last window first
    let mut tables: Vec<MasterTable> = Vec::new();
    let mut table_solves = 0;
    for w in (1..e.len() - 1).rev() {
        let t = {
            let terminal: &dyn Terminal = match tables.last() {
                Some(t) => t,
                None => model,
            };
            build_table(model, x0, grid, tree, e[w], e[w + 1], terminal, cfg, &table_eq)?
        };
        table_solves += t.u0.len();
        tables.push(t);
    }
    tables.reverse();

    // forward: solve every window from the states the previous one reached
    let nodes = tree.node_count();
    let mut s = Stitch {
        x0: vec![0.0; nodes],
        y0: vec![0.0; nodes],
        z0: vec![0.0; nodes],
        mu: vec![None; nodes],
        u: vec![None; nodes],
        v0: vec![None; nodes],
    };
    s.x0[0] = x0;
    s.mu[0] = Some(mu0.clone());
    let mut reports: Vec<WindowReport> = Vec::new();
    let mut root: Option<EquilibriumSolution> = None;
    let mut substeps = 0;
    let mut max_gradient = 0.0f64;
    for w in 0..e.len() - 1 {
        let (from, to) = (e[w], e[w + 1]);
        let terminal: &dyn Terminal = if w + 1 < e.len() - 1 { &tables[w] } else { model };
        let mut report = WindowReport {
            start_level: from,
            levels: to - from,
            solves: 0,
            worst_ratio: 0.0,
            max_outer_iterations: 0,
            edge_gap: 0.0,
            edge_gap_u: 0.0,
        };
        let mut warm: Option<EquilibriumSolution> = None;
        let mut gap = 0.0f64;
        let mut gap_u = 0.0f64;
        for id in tree.level_range(from) {
            let (sub, map) = tree.subtree(id)?;
            let sub = NoiseTree::new(to - from, sub.dt())?.starting_at(sub.t0());
            let mu = s.mu[id].clone().expect("edge density set by the previous window");
            let sol = solve_equilibrium_with(model, s.x0[id], &mu, &sub, terminal, eq, warm.as_ref())?;
            if w > 0 {
                gap = gap.max((s.y0[id] - sol.major.y0.root()).abs());
                let prev = s.u[id].as_ref().expect("edge field set by the previous window");
                gap_u = gap_u.max(prev.sup_distance(sol.minor.u.root()));
            }
            for local in 0..sub.node_count() {
                let g = map[local];
                s.x0[g] = *sol.major.x0.get(local);
                s.y0[g] = *sol.major.y0.get(local);
                s.z0[g] = *sol.major.z0.get(local);
                s.mu[g] = Some(sol.minor.mu.get(local).clone());
                s.u[g] = Some(sol.minor.u.get(local).clone());
                s.v0[g] = Some(sol.minor.v0.get(local).clone());
            }
            report.solves += 1;
            report.worst_ratio = report.worst_ratio.max(sol.worst_ratio());
            report.max_outer_iterations = report.max_outer_iterations.max(sol.outer_residuals.len());
            substeps = substeps.max(sol.minor.substeps);
            max_gradient = max_gradient.max(sol.minor.max_gradient);
            if w == 0 {
                root = Some(sol.clone());
            }
            warm = Some(sol);
        }
        if w > 0 {
            if let Some(r) = reports.last_mut() {
                r.edge_gap = gap;
                r.edge_gap_u = gap_u;
            }
        }
        reports.push(report);
    }
    let root = root.expect("at least one window");
    let full = *tree;
    let take = |v: Vec<Option<ScalarField>>| -> Vec<ScalarField> {
        v.into_iter().map(|f| f.expect("every node stitched")).collect()
    };
    let solution = EquilibriumSolution {
        major: MajorTriple {
            x0: TreeProcess::new(full, s.x0)?,
            y0: TreeProcess::new(full, s.y0)?,
            z0: TreeProcess::new(full, s.z0)?,
            picard_residuals: root.major.picard_residuals.clone(),
        },
        minor: MinorSolution {
            mu: TreeProcess::new(full, s.mu.into_iter().map(|f| f.expect("every node stitched")).collect())?,
            u: TreeProcess::new(full, take(s.u))?,
            v0: TreeProcess::new(full, take(s.v0))?,
            inner_iterations: root.minor.inner_iterations,
            inner_residuals: root.minor.inner_residuals.clone(),
            substeps,
            max_gradient,
            sigma0: model.sigma0,
        },
        outer_residuals: root.outer_residuals.clone(),
        contraction_ratios: root.contraction_ratios.clone(),
        truncated_residuals: root.truncated_residuals.clone(),
        truncation_radius: root.truncation_radius,
    };
    Ok((solution, reports, table_solves, tables))
}

/// Equilibrium over the whole tree by backward induction over windows of
/// `cfg.window`: master-field tables at each window edge serve as terminal
/// data of the window before it, then every window is solved forward from
/// the states the previous one reached. A window that fails to contract
/// halves the window length (at most `cfg.max_halvings` times).
pub fn solve_by_continuation(
    model: &ModelSpec,
    x0: f64,
    mu0: &DensityField,
    tree: &NoiseTree,
    cfg: &ContinuationConfig,
) -> Result<ContinuationSolution> {
    if !(cfg.window > 0.0) {
        return Err(Error::InvalidParameter(format!("window length {}", cfg.window)));
    }
    let mut levels = ((cfg.window / tree.dt()).round() as usize).max(1);
    let mut halvings = 0;
    loop {
        if levels >= tree.depth() {
            let sol = solve_equilibrium_with(model, x0, mu0, tree, model, &cfg.equilibrium, None);
            match sol {
                Ok(solution) => {
                    let report = WindowReport {
                        start_level: 0,
                        levels: tree.depth(),
                        solves: 1,
                        worst_ratio: solution.worst_ratio(),
                        max_outer_iterations: solution.outer_residuals.len(),
                        edge_gap: 0.0,
                        edge_gap_u: 0.0,
                    };
                    return Ok(ContinuationSolution {
                        solution,
                        window_levels: tree.depth(),
                        halvings,
                        windows: vec![report],
                        table_solves: 0,
                        tables: Vec::new(),
                    });
                }
                Err(Error::NoContraction { .. }) if halvings < cfg.max_halvings && tree.depth() > 1 => {
                    levels = tree.depth().div_ceil(2);
                    halvings += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
        }
        match run(model, x0, mu0, tree, cfg, levels) {
            Ok((solution, windows, table_solves, tables)) => {
                return Ok(ContinuationSolution {
                    solution,
                    window_levels: levels,
                    halvings,
                    windows,
                    table_solves,
                    tables,
                })
            }
            Err(Error::NoContraction { .. }) if halvings < cfg.max_halvings && levels > 1 => {
                levels = levels.div_ceil(2).min(levels - 1);
                halvings += 1;
            }
            Err(e) => return Err(e),
        }
    }
}
