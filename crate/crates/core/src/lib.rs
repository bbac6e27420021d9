pub mod autodiff;
pub mod encoder;
pub mod error;
pub mod estimator;
pub mod mobility;
pub mod nn;
pub mod rng;
pub mod seir;
pub mod surrogate;

pub use autodiff::{Tape, Tensor, Var};
pub use error::{Error, Result};
pub use mobility::{Episode, GeneratorConfig};
pub use seir::{simulate, CompartmentCounts, PriorConfig, ThetaSeir, Trajectory};
