//! LSTM surrogate of the SEIR simulator, conditioned on θ and graph embeddings.

mod cell;
mod model;
mod train;

pub use cell::{lstm_cell, readout, GateVars, ReadoutVars};
pub use model::{
    denormalize_count, normalize_counts, GraphMode, Incorporation, PreparedEpisode, RolloutBatch, RolloutMode, SequenceRef,
    SurrogateConfig, SurrogateModel, SurrogateVars, SURROGATE_SCHEMA_VERSION,
};
pub use train::{embedding_stats, train_surrogate, validation_split, CurveRow, TrainingCurve};
