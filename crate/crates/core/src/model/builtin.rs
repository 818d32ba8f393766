use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};

use super::{CouplingCosts, ModelSpec, QuadraticLagrangian};

pub const BUILTIN_MODELS: &[&str] = &["zero", "lq", "monotone-conv", "anti-monotone", "assumption-b"];

/// Parameter keys accepted by every built-in model.
pub fn model_keys() -> &'static [&'static str] {
    &[
        "sigma0", "T", "x0_domain", "lambda0", "lambda", "offset", "q", "q_T", "kappa", "theta",
        "b", "b_T", "a", "a_T", "c", "c_T", "amp", "rho1", "rho2", "rho3", "decay",
    ]
}

struct Defaults {
    sigma0: f64,
    horizon: f64,
    costs: CouplingCosts,
    assumption_b: bool,
}

fn defaults(name: &str) -> Result<Defaults> {
    let zero = CouplingCosts::zero();
    let d = match name {
        "zero" => Defaults {
            sigma0: 1.0,
            horizon: 1.0,
            costs: zero,
            assumption_b: false,
        },
        "lq" => Defaults {
            sigma0: 1.0,
            horizon: 1.0,
            costs: CouplingCosts {
                confinement: 1.0,
                terminal_confinement: 0.5,
                ..zero
            },
            assumption_b: false,
        },
        "monotone-conv" => Defaults {
            sigma0: 3.0,
            horizon: 0.5,
            costs: CouplingCosts {
                confinement: 1.0,
                terminal_confinement: 0.5,
                major_pull: 0.5,
                terminal_major_pull: 0.25,
                interaction: 1.0,
                terminal_interaction: 0.5,
                minor_repulsion: 1.0,
                terminal_minor_repulsion: 0.5,
                ..zero
            },
            assumption_b: false,
        },
        "anti-monotone" => Defaults {
            sigma0: 3.0,
            horizon: 0.5,
            costs: CouplingCosts {
                confinement: 1.0,
                terminal_confinement: 0.5,
                major_pull: 0.5,
                terminal_major_pull: 0.25,
                interaction: -1.0,
                terminal_interaction: -0.5,
                minor_repulsion: 1.0,
                terminal_minor_repulsion: 0.5,
                ..zero
            },
            assumption_b: false,
        },
        "assumption-b" => Defaults {
            sigma0: 3.0,
            horizon: 4.0,
            costs: CouplingCosts {
                bounded_confinement: 0.5,
                major_bump: 0.5,
                major_pull: 0.5,
                interaction: 1.0,
                terminal_interaction: 0.5,
                minor_repulsion: 1.0,
                decay_rate: 1.0,
                long_time: true,
                ..zero
            },
            assumption_b: true,
        },
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Ok(d)
}

/// The built-in catalog at default parameters.
pub fn builtin_models() -> Vec<ModelSpec> {
    BUILTIN_MODELS
        .iter()
        .map(|name| builtin_model(name, &BTreeMap::new()).expect("built-in defaults are valid"))
        .collect()
}

/// Builds a named model, overriding defaults with `params` (see [`model_keys`]).
pub fn builtin_model(name: &str, params: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    let Defaults {
        mut sigma0,
        mut horizon,
        mut costs,
        assumption_b,
    } = defaults(name)?;
    let (mut lambda0, mut lambda) = (1.0, 1.0);
    let mut x0_domain = None;
    for (key, &v) in params {
        match key.as_str() {
            "sigma0" => sigma0 = v,
            "T" => horizon = v,
            "x0_domain" => x0_domain = Some(v),
            "lambda0" => lambda0 = v,
            "lambda" => lambda = v,
            "offset" => costs.major_offset = v,
            "q" => costs.confinement = v,
            "q_T" => costs.terminal_confinement = v,
            "kappa" => costs.bounded_confinement = v,
            "theta" => costs.major_bump = v,
            "b" => costs.major_pull = v,
            "b_T" => costs.terminal_major_pull = v,
            "a" => costs.interaction = v,
            "a_T" => costs.terminal_interaction = v,
            "c" => costs.minor_repulsion = v,
            "c_T" => costs.terminal_minor_repulsion = v,
            "amp" => costs.terminal_profile = v,
            "decay" => costs.decay_rate = v,
            k @ ("rho1" | "rho2" | "rho3") => {
                let i = (k.as_bytes()[3] - b'1') as usize;
                if costs.kernel.len() <= i {
                    costs.kernel.resize(i + 1, 0.0);
                }
                costs.kernel[i] = v;
            }
            other => return Err(Error::UnknownKey(format!("model.{other}"))),
        }
    }
    for (label, l) in [("lambda0", lambda0), ("lambda", lambda)] {
        if !(l > 0.0) {
            return Err(Error::InvalidParameter(format!("{label} = {l}")));
        }
    }
    let major_l = QuadraticLagrangian::new(lambda0);
    let minor_l = QuadraticLagrangian::new(lambda);
    let spec = ModelSpec {
        name: name.to_string(),
        major_hamiltonian: Arc::new(major_l.hamiltonian()),
        minor_hamiltonian: Arc::new(minor_l.hamiltonian()),
        major_lagrangian: Arc::new(major_l),
        minor_lagrangian: Arc::new(minor_l),
        costs: Arc::new(costs),
        sigma0,
        horizon,
        x0_domain,
        assumption_b,
        truncation: None,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_lasry_lions, sampled_convexity};
    use crate::torus::{DensityField, PeriodicGrid, ScalarField};

    #[test]
    fn catalog_contains_the_required_models() {
        let names: Vec<String> = builtin_models().into_iter().map(|m| m.name).collect();
        for n in ["lq", "monotone-conv", "assumption-b"] {
            assert!(names.iter().any(|m| m == n));
        }
    }

    #[test]
    fn lq_lagrangian_is_one_convex() {
        let m = builtin_model("lq", &BTreeMap::new()).unwrap();
        assert_eq!(m.major_lagrangian.convexity(), 1.0);
        assert!(sampled_convexity(m.major_lagrangian.as_ref(), 201) >= -1e-8);
        assert!(sampled_convexity(m.minor_lagrangian.as_ref(), 201) >= -1e-8);
        let g = PeriodicGrid::new(16).unwrap();
        let mu = DensityField::uniform(g);
        assert_eq!(m.costs.minor_running(0.3, 0.2, &mu), ScalarField::zeros(g));
        assert_eq!(m.costs.major_running(0.3, 2.0, &mu), 2.0);
    }

    #[test]
    fn monotone_conv_passes_lasry_lions() {
        let m = builtin_model("monotone-conv", &BTreeMap::new()).unwrap();
        let r = check_lasry_lions(m.costs.as_ref(), PeriodicGrid::new(64).unwrap(), 100);
        assert!(r.minimum >= -1e-10, "{r:?}");
        let anti = builtin_model("anti-monotone", &BTreeMap::new()).unwrap();
        let r = check_lasry_lions(anti.costs.as_ref(), PeriodicGrid::new(64).unwrap(), 100);
        assert!(r.minimum < 0.0);
    }

    #[test]
    fn assumption_b_defect_integrates_to_one() {
        let m = builtin_model("assumption-b", &BTreeMap::new()).unwrap();
        let (major, minor) = m.long_time_defect(PeriodicGrid::new(32).unwrap(), 40.0, 8000).unwrap();
        assert!(minor <= 1.0001, "{minor}");
        assert!(minor >= 0.99, "{minor}");
        assert!(major <= 1.0001, "{major}");
    }

    #[test]
    fn unknown_keys_and_models_are_errors() {
        let mut p = BTreeMap::new();
        p.insert("bogus".to_string(), 1.0);
        assert!(matches!(builtin_model("lq", &p), Err(Error::UnknownKey(_))));
        assert!(matches!(builtin_model("nope", &BTreeMap::new()), Err(Error::UnknownModel(_))));
        let mut p = BTreeMap::new();
        p.insert("rho3".to_string(), 0.25);
        p.insert("sigma0".to_string(), 2.0);
        let m = builtin_model("monotone-conv", &p).unwrap();
        assert_eq!(m.sigma0, 2.0);
    }
}
