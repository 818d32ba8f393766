//! Experiment runner for the major-minor mean field game solver: settings,
//! named experiments, solver subcommands and the acceptance suite.

pub mod accept;
pub mod commands;
pub mod config;
pub mod experiments;
pub mod output;
