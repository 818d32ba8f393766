//! The coupled major-minor equilibrium and everything built on it.

mod continuation;
mod equilibrium;
mod flat;
mod linearized;
mod master;

pub use continuation::{
    solve_by_continuation, ContinuationConfig, ContinuationSolution, MasterTable, Projection, WindowReport,
};
pub use equilibrium::{
    apply_outer_map, bisect_contraction_threshold, initial_trajectory, probe_contraction, solve_equilibrium,
    solve_equilibrium_with, ContractionProbe, EquilibriumConfig, EquilibriumSolution, OuterInit, Truncation,
};
pub use flat::{flat_derivative, flat_derivative_field, flat_derivative_profile, flat_derivative_richardson};
pub use linearized::{solve_linearized, Direction, LinearizedConfig, LinearizedSolution};
pub use master::{
    lipschitz_table, master_equation_residual, representation_check, sample_interior_nodes, LipschitzTable, MajorTerms,
    MasterField, MasterResidual, MasterValue, RepresentationSample, ResidualConfig,
};
