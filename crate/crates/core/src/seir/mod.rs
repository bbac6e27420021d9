//! Agent-level stochastic SEIR over mobility episodes.

mod batch;
mod sim;
mod theta;

pub use batch::{cell_seed, simulate_batch, simulate_thetas, SimCounter, SimulationDataset, SimulationRecord};
pub use sim::{effective_beta, l2_error, simulate, simulate_with, step, transition_probs, CompartmentCounts, Trajectory};
pub use theta::{
    sample_theta, sample_thetas, DwellPrior, PriorConfig, ThetaSeir, GAMMA_INDEX, KAPPA_INDEX, THETA_DIM,
};
