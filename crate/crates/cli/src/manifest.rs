//! Run manifests: config echo, seeds, stage timings and the simulation ledger.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub seeds: IndexMap<String, u64>,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
    /// Simulator runs per budget entry, counted as they execute.
    pub simulations: IndexMap<String, u64>,
    pub complete: bool,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: config.seed,
            seeds: IndexMap::new(),
            config: config.clone(),
            stages: Vec::new(),
            simulations: IndexMap::new(),
            complete: false,
        }
    }

    pub fn path(out: &Path, command: &str) -> PathBuf {
        out.join("manifests").join(format!("{command}.json"))
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = Self::path(out, &self.command);
        std::fs::create_dir_all(path.parent().expect("manifest path has a parent"))
            .with_context(|| format!("creating {}", out.display()))?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn record_simulations(&mut self, key: impl Into<String>, runs: u64) {
        *self.simulations.entry(key.into()).or_insert(0) += runs;
    }

    /// Runs one stage and records its wall-clock time. On failure the
    /// manifest is written as it stands and the error names the stage.
    pub fn stage<T>(&mut self, out: &Path, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let result = f(self);
        let seconds = start.elapsed().as_secs_f64();
        match result {
            Ok(v) => {
                self.stages.push(StageRecord { name: name.into(), seconds, ok: true, error: None });
                Ok(v)
            }
            Err(e) => {
                let msg = format!("{e:#}");
                self.stages.push(StageRecord { name: name.into(), seconds, ok: false, error: Some(msg.clone()) });
                if let Err(w) = self.write(out) {
                    return Err(anyhow!("stage `{name}` failed: {msg} (manifest not written: {w:#})"));
                }
                Err(anyhow!("stage `{name}` failed: {msg}"))
            }
        }
    }

    pub fn finish(&mut self, out: &Path) -> Result<PathBuf> {
        self.complete = true;
        self.write(out)
    }
}
