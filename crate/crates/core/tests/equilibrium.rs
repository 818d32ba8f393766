//! Multi-start behaviour of the coupled solver and long-horizon continuation.

use std::collections::BTreeMap;

use mmfg_core::coupled::{
    solve_by_continuation, solve_equilibrium, ContinuationConfig, EquilibriumConfig, EquilibriumSolution, OuterInit,
};
use mmfg_core::minor::gradient_diagnostic;
use mmfg_core::model::{builtin_model, ModelSpec};
use mmfg_core::torus::{DensityField, PeriodicGrid};
use mmfg_core::tree::NoiseTree;

fn inits() -> [OuterInit; 3] {
    [OuterInit::Constant, OuterInit::DriftlessWalk, OuterInit::Walk { drift: 1.0 }]
}

fn multi_start(m: &ModelSpec, n: usize, depth: usize) -> Vec<EquilibriumSolution> {
    let mu0 = DensityField::uniform(PeriodicGrid::new(n).unwrap());
    let tree = NoiseTree::over(m.horizon, depth).unwrap();
    inits()
        .into_iter()
        .map(|init| {
            let cfg = EquilibriumConfig { init, ..Default::default() };
            solve_equilibrium(m, 0.0, &mu0, &tree, &cfg).unwrap()
        })
        .collect()
}

fn node_distance(a: &EquilibriumSolution, b: &EquilibriumSolution) -> f64 {
    let sup = |p: &[f64], q: &[f64]| p.iter().zip(q).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    sup(a.major.x0.values(), b.major.x0.values()).max(sup(a.major.y0.values(), b.major.y0.values()))
}

#[test]
fn large_common_noise_gives_a_unique_equilibrium() {
    let base = builtin_model("monotone-conv", &BTreeMap::new()).unwrap().with_horizon(0.5);
    let tol = EquilibriumConfig::default().tol;
    for sigma0 in [2.0, 3.0, 4.0] {
        let sols = multi_start(&base.with_sigma0(sigma0), 64, 8);
        for i in 0..3 {
            for j in 0..i {
                let d = node_distance(&sols[i], &sols[j]);
                assert!(d <= 10.0 * tol, "sigma0 = {sigma0}: {d}");
            }
        }
    }
}

#[test]
fn common_noise_improves_the_stability_margin() {
    let base = builtin_model("anti-monotone", &BTreeMap::new()).unwrap();
    let mut worst = Vec::new();
    for sigma0 in [0.2, 0.5, 1.0] {
        let sols = multi_start(&base.with_sigma0(sigma0), 32, 6);
        let spread = (0..3)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| node_distance(&sols[i], &sols[j]))
            .fold(0.0, f64::max);
        let ratio = sols.iter().map(|s| s.worst_ratio()).fold(0.0, f64::max);
        println!("anti-monotone sigma0 = {sigma0}: worst ratio {ratio:.3e}, spread {spread:.3e}");
        worst.push(ratio);
    }
    for w in worst.windows(2) {
        assert!(w[1] < w[0], "{worst:?}");
    }
}

#[test]
fn long_horizon_gradient_stays_in_the_short_horizon_band() {
    let m = builtin_model("assumption-b", &BTreeMap::new()).unwrap();
    let mu0 = DensityField::uniform(PeriodicGrid::new(64).unwrap());
    let grad = |horizon: f64| {
        // same tree step 0.5 on both horizons
        let tree = NoiseTree::over(horizon, (2.0 * horizon) as usize).unwrap();
        let c = solve_by_continuation(&m.with_horizon(horizon), 0.0, &mu0, &tree, &ContinuationConfig::default())
            .unwrap();
        (gradient_diagnostic(&c.solution.minor).sup_grad_u, c.windows.len())
    };
    let (short, _) = grad(0.5);
    let (long, windows) = grad(4.0);
    assert_eq!(windows, 8);
    assert!((long / short - 1.0).abs() <= 0.2, "{short} {long}");
}
