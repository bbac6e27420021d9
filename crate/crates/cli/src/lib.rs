//! Experiment harness: dataset generation, the training/fitting pipeline,
//! the budget-matched comparison and the ablation sweeps.

pub mod commands;
pub mod config;
pub mod data;
pub mod experiment;
pub mod manifest;
pub mod plot;

pub use config::RunConfig;
pub use manifest::RunManifest;
