//! Parameter storage, optimizers and checkpoint files shared by the
//! graph encoder and the surrogate.

mod optim;
mod params;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use optim::{clip_grad_norm, Optimizer, OptimizerConfig};
pub use params::{NamedArray, ParamSet};

pub fn save_json(value: &impl Serialize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::parse(
            format!("{} line {} column {}", path.display(), e.line(), e.column()),
            e.to_string(),
        )
    })
}
