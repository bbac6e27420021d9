//! Time-varying person–location networks and observation episodes.

mod generate;
mod graph;
mod io;
mod types;

pub use generate::{generate_synthetic_episode, GeneratorConfig, Lockdown};
pub use graph::{episode_graphs, node_features, snapshot_to_graph, GraphInput, NODE_FEATURES};
pub use io::{episode_from_json, episode_to_json, load_episode, save_episode, EPISODE_SCHEMA_VERSION};
pub use types::*;
