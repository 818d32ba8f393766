//! `key=value` experiment settings.
//!
//! A config file holds one `key = value` pair per line; `#` starts a
//! comment. Command-line `--set key=value` overrides are applied after the
//! file. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use mmfg_core::coupled::{ContinuationConfig, EquilibriumConfig, LinearizedConfig, OuterInit, ResidualConfig, Truncation};
use mmfg_core::major::{MajorConfig, W0Config};
use mmfg_core::minor::{MinorConfig, MinorInit};
use mmfg_core::model::{builtin_model, model_keys, ModelSpec};
use mmfg_core::torus::{DensityField, PeriodicGrid};
use mmfg_core::tree::NoiseTree;
use mmfg_core::{Error, Result};

/// Initial density of the minor population.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum InitialDensity {
    Uniform,
    /// `1 + amp cos(2 pi x)`.
    Cosine(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub model: String,
    /// Overrides of the model's parameters (`model.<key>`, `sigma0`, `T`,
    /// `x0_domain`).
    pub params: BTreeMap<String, f64>,
    pub grid_n: usize,
    pub tree_k: usize,
    pub x0: f64,
    pub mu0: InitialDensity,
    pub minor: MinorConfig,
    pub major: MajorConfig,
    pub outer_tol: f64,
    pub outer_max_iter: usize,
    pub outer_init: OuterInit,
    pub truncation: Truncation,
    pub window: f64,
    pub continuation_dx0: f64,
    pub continuation_phases: usize,
    pub continuation_halvings: usize,
    pub continuation_points: usize,
    pub continuation_amplitude: f64,
    pub continuation_w1: f64,
    pub linearize: LinearizedConfig,
    pub linearize_dx0: f64,
    pub residual: ResidualConfig,
    pub w0: W0Config,
    pub seed: u64,
    pub sweep_sigma0: Vec<f64>,
    pub sweep_t: Vec<f64>,
    /// Tree step of the `T` sweep; `K = T / dt` per row.
    pub sweep_dt: f64,
    pub decay_n: usize,
    pub decay_dt: f64,
    pub decay_horizon: f64,
    /// Amplitude of the drift `b = amp sin(2 pi x)` of the decay test.
    pub decay_drift: f64,
    pub out: PathBuf,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            model: "monotone-conv".into(),
            params: BTreeMap::new(),
            grid_n: 64,
            tree_k: 8,
            x0: 0.0,
            mu0: InitialDensity::Uniform,
            minor: MinorConfig::default(),
            major: MajorConfig::default(),
            outer_tol: 1e-6,
            outer_max_iter: 100,
            outer_init: OuterInit::DriftlessWalk,
            truncation: Truncation::Pilot,
            window: 0.5,
            continuation_dx0: 0.125,
            continuation_phases: 8,
            continuation_halvings: 6,
            continuation_points: 161,
            continuation_amplitude: 0.08,
            continuation_w1: 1e-2,
            linearize: LinearizedConfig::default(),
            linearize_dx0: 1.0,
            residual: ResidualConfig::default(),
            w0: W0Config::default(),
            seed: 7,
            sweep_sigma0: vec![0.5, 1.0, 2.0, 4.0],
            sweep_t: vec![1.0, 2.0, 4.0, 8.0],
            sweep_dt: 0.5,
            decay_n: 128,
            decay_dt: 2.5e-4,
            decay_horizon: 0.5,
            decay_drift: 0.0,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::ParseValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    let v = value
        .split(',')
        .map(|s| parse::<f64>(key, s.trim()))
        .collect::<Result<Vec<_>>>()?;
    if v.is_empty() {
        return Err(Error::InvalidParameter(format!("{key} is empty")));
    }
    Ok(v)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::ParseValue {
            key: key.to_string(),
            value: value.to_string(),
        }),
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidParameter(format!("{key} must be > 0, got {v}")))
    }
}

/// Every key [`Settings::set`] accepts, `model.<param>` aside.
pub const KEYS: &[&str] = &[
    "model", "sigma0", "T", "x0_domain", "grid.n", "tree.K", "tree.m", "x0", "mu0",
    "minor.tol", "minor.max_iter", "minor.adaptive", "minor.cfl", "minor.damping", "minor.init",
    "major.tol", "major.max_iter", "major.damping",
    "outer.tol", "outer.max_iter", "outer.init", "trunc.radius",
    "continuation.window", "continuation.dx0", "continuation.phases", "continuation.halvings",
    "continuation.points", "continuation.amplitude", "continuation.w1",
    "linearize.eps", "linearize.tol", "linearize.max_iter", "linearize.dx0",
    "residual.dx0", "residual.eps", "w0.n", "w0.dt", "seed",
    "sweep.sigma0", "sweep.T", "sweep.dt", "decay.n", "decay.dt", "decay.horizon", "decay.drift", "out",
];

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "model" => {
                builtin_model(value, &BTreeMap::new())?;
                self.model = value.to_string();
            }
            "sigma0" | "T" | "x0_domain" => {
                self.params.insert(key.to_string(), positive(key, parse(key, value)?)?);
            }
            "grid.n" => self.grid_n = parse(key, value)?,
            "tree.K" => self.tree_k = parse(key, value)?,
            "tree.m" => self.minor.substeps = parse(key, value)?,
            "x0" => self.x0 = parse(key, value)?,
            "mu0" => {
                self.mu0 = match value.split_once(':') {
                    None if value == "uniform" => InitialDensity::Uniform,
                    Some(("cos", a)) => InitialDensity::Cosine(parse(key, a)?),
                    _ => {
                        return Err(Error::ParseValue {
                            key: key.into(),
                            value: value.into(),
                        })
                    }
                }
            }
            "minor.tol" => self.minor.tol = positive(key, parse(key, value)?)?,
            "minor.max_iter" => self.minor.max_iter = parse(key, value)?,
            "minor.adaptive" => self.minor.adaptive_substeps = parse_bool(key, value)?,
            "minor.cfl" => self.minor.cfl = positive(key, parse(key, value)?)?,
            "minor.damping" => self.minor.damping = positive(key, parse(key, value)?)?,
            "minor.init" => {
                self.minor.init = match value {
                    "zero" => MinorInit::Zero,
                    "terminal" => MinorInit::Terminal,
                    _ => {
                        return Err(Error::ParseValue {
                            key: key.into(),
                            value: value.into(),
                        })
                    }
                }
            }
            "major.tol" => self.major.tol = positive(key, parse(key, value)?)?,
            "major.max_iter" => self.major.max_iter = parse(key, value)?,
            "major.damping" => self.major.damping = positive(key, parse(key, value)?)?,
            "outer.tol" => self.outer_tol = positive(key, parse(key, value)?)?,
            "outer.max_iter" => self.outer_max_iter = parse(key, value)?,
            "outer.init" => {
                self.outer_init = match value.split_once(':') {
                    None if value == "constant" => OuterInit::Constant,
                    None if value == "walk" => OuterInit::DriftlessWalk,
                    Some(("drift", d)) => OuterInit::Walk { drift: parse(key, d)? },
                    _ => {
                        return Err(Error::ParseValue {
                            key: key.into(),
                            value: value.into(),
                        })
                    }
                }
            }
            "trunc.radius" => {
                self.truncation = match value {
                    "off" => Truncation::Off,
                    "pilot" => Truncation::Pilot,
                    v => Truncation::Radius(parse(key, v)?),
                }
            }
            "continuation.window" => self.window = positive(key, parse(key, value)?)?,
            "continuation.dx0" => self.continuation_dx0 = positive(key, parse(key, value)?)?,
            "continuation.phases" => self.continuation_phases = parse(key, value)?,
            "continuation.halvings" => self.continuation_halvings = parse(key, value)?,
            "continuation.points" => self.continuation_points = parse(key, value)?,
            "continuation.amplitude" => self.continuation_amplitude = positive(key, parse(key, value)?)?,
            "continuation.w1" => self.continuation_w1 = positive(key, parse(key, value)?)?,
            "linearize.eps" => self.linearize.eps = positive(key, parse(key, value)?)?,
            "linearize.tol" => self.linearize.tol = positive(key, parse(key, value)?)?,
            "linearize.max_iter" => self.linearize.max_iter = parse(key, value)?,
            "linearize.dx0" => self.linearize_dx0 = parse(key, value)?,
            "residual.dx0" => self.residual.dx0 = positive(key, parse(key, value)?)?,
            "residual.eps" => self.residual.eps = positive(key, parse(key, value)?)?,
            "w0.n" => self.w0.n = parse(key, value)?,
            "w0.dt" => self.w0.dt = positive(key, parse(key, value)?)?,
            "seed" => self.seed = parse(key, value)?,
            "sweep.sigma0" => self.sweep_sigma0 = parse_list(key, value)?,
            "sweep.T" => self.sweep_t = parse_list(key, value)?,
            "sweep.dt" => self.sweep_dt = positive(key, parse(key, value)?)?,
            "decay.n" => self.decay_n = parse(key, value)?,
            "decay.dt" => self.decay_dt = positive(key, parse(key, value)?)?,
            "decay.horizon" => self.decay_horizon = positive(key, parse(key, value)?)?,
            "decay.drift" => self.decay_drift = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            other => match other.strip_prefix("model.") {
                Some(p) if model_keys().contains(&p) => {
                    self.params.insert(p.to_string(), parse(key, value)?);
                }
                _ => return Err(Error::UnknownKey(other.to_string())),
            },
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("expected key=value, got `{line}`")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut s = Self::default();
        if let Some(p) = path {
            s.apply_text(&std::fs::read_to_string(p)?)?;
        }
        for o in overrides {
            s.apply_text(o)?;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep_sigma0.is_empty() || self.sweep_t.is_empty() {
            return Err(Error::InvalidParameter("sweep ranges must be non-empty".into()));
        }
        if self.tree_k == 0 {
            return Err(Error::InvalidParameter("tree.K must be >= 1".into()));
        }
        if self.minor.substeps == 0 {
            return Err(Error::InvalidParameter("tree.m must be >= 1".into()));
        }
        PeriodicGrid::new(self.grid_n)?;
        self.model_spec()?;
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        builtin_model(&self.model, &self.params)
    }

    pub fn grid(&self) -> Result<PeriodicGrid> {
        PeriodicGrid::new(self.grid_n)
    }

    pub fn tree(&self) -> Result<NoiseTree> {
        NoiseTree::over(self.model_spec()?.horizon, self.tree_k)
    }

    pub fn initial_density(&self) -> Result<DensityField> {
        let g = self.grid()?;
        match self.mu0 {
            InitialDensity::Uniform => Ok(DensityField::uniform(g)),
            InitialDensity::Cosine(a) => {
                DensityField::from_profile(g, |x| 1.0 + a * (2.0 * std::f64::consts::PI * x).cos())
            }
        }
    }

    pub fn equilibrium(&self) -> EquilibriumConfig {
        EquilibriumConfig {
            tol: self.outer_tol,
            max_iter: self.outer_max_iter,
            minor: self.minor.clone(),
            major: self.major.clone(),
            init: self.outer_init.clone(),
            truncation: self.truncation,
        }
    }

    pub fn continuation(&self) -> ContinuationConfig {
        ContinuationConfig {
            window: self.window,
            max_halvings: self.continuation_halvings,
            dx0: self.continuation_dx0,
            max_x0_points: self.continuation_points,
            phases: self.continuation_phases,
            base_amplitude: self.continuation_amplitude,
            max_projection_w1: self.continuation_w1,
            equilibrium: self.equilibrium(),
            ..ContinuationConfig::default()
        }
    }
}

/// Caps the rayon pool at `MMFG_THREADS` when set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MMFG_THREADS") {
        let n: usize = parse("MMFG_THREADS", &v)?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut s = Settings::default();
        s.apply_text("# comment\nmodel = lq\ngrid.n=32\n\nsigma0 = 2 # trailing\n").unwrap();
        s.apply_text("grid.n=16").unwrap();
        assert_eq!(s.model, "lq");
        assert_eq!(s.grid_n, 16);
        assert_eq!(s.model_spec().unwrap().sigma0, 2.0);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let mut s = Settings::default();
        assert!(matches!(s.set("grid.m", "3"), Err(Error::UnknownKey(_))));
        assert!(matches!(s.set("model.bogus", "3"), Err(Error::UnknownKey(_))));
        assert!(matches!(s.set("grid.n", "abc"), Err(Error::ParseValue { .. })));
        assert!(s.apply_text("no equals sign").is_err());
        assert!(s.set("model", "nope").is_err());
    }

    #[test]
    fn structured_values() {
        let mut s = Settings::default();
        s.set("outer.init", "drift:1.5").unwrap();
        assert_eq!(s.outer_init, OuterInit::Walk { drift: 1.5 });
        s.set("trunc.radius", "off").unwrap();
        assert_eq!(s.truncation, Truncation::Off);
        s.set("trunc.radius", "5").unwrap();
        assert_eq!(s.truncation, Truncation::Radius(5.0));
        s.set("sweep.T", "1, 2,4").unwrap();
        assert_eq!(s.sweep_t, vec![1.0, 2.0, 4.0]);
        s.set("mu0", "cos:0.3").unwrap();
        assert_eq!(s.mu0, InitialDensity::Cosine(0.3));
        s.set("model.q", "2").unwrap();
        assert_eq!(s.params["q"], 2.0);
        assert!(s.set("sigma0", "-1").is_err());
    }

    #[test]
    fn every_listed_key_is_accepted() {
        let sample = |k: &str| match k {
            "model" => "lq",
            "mu0" => "uniform",
            "minor.adaptive" => "false",
            "minor.init" => "terminal",
            "outer.init" => "walk",
            "trunc.radius" => "pilot",
            "sweep.sigma0" | "sweep.T" => "1,2",
            "out" => "dir",
            "grid.n" | "tree.K" | "tree.m" | "minor.max_iter" | "major.max_iter" | "outer.max_iter"
            | "continuation.phases" | "continuation.halvings" | "continuation.points" | "linearize.max_iter"
            | "w0.n" | "seed" | "decay.n" => "8",
            _ => "0.5",
        };
        for k in KEYS {
            let mut s = Settings::default();
            s.set(k, sample(k)).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }
}
