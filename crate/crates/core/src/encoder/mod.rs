//! DiffPool graph encoder: snapshot graph → K-dimensional embedding.

mod model;
mod train;

pub use model::{
    coarsen, diffpool_level, gnn_forward, Adjacency, DiffPoolModel, EncoderConfig, GnnVars, LevelOutput,
    ENCODER_SCHEMA_VERSION,
};
pub use train::{
    classification_accuracy, classification_loss, time_labeled_graphs, train_encoder, train_encoder_on_episodes,
    EncoderReport, LabeledGraph,
};
