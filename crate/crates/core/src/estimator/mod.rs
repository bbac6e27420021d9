//! θ estimation: gradient fitting through the surrogate and simulation grid search.

mod fit;
mod grid;

pub use fit::{fit_observed, fit_theta, objective_value_and_grad, observe, FitConfig, FitResult, Observed, PriorSpec};
pub use grid::{common_seed, episode_errors, evaluate, grid_search, lambda_sweep, mean_infections, GridResult, SweepRow};
