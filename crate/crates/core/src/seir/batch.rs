use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::Episode;
use crate::rng::{derive_seed, stream_id};
use crate::seir::sim::{simulate_with, CompartmentCounts, Trajectory};
use crate::seir::theta::{sample_thetas, PriorConfig, ThetaSeir};

/// Runs simulations and counts them, so budgets can be audited.
#[derive(Debug, Default)]
pub struct SimCounter {
    runs: AtomicU64,
    agent_steps: AtomicU64,
}

impl SimCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn simulate(&self, episode: &Episode, theta: &ThetaSeir, seed: u64, record_locations: bool) -> Result<Trajectory> {
        let traj = simulate_with(episode, theta, seed, record_locations)?;
        self.runs.fetch_add(1, Ordering::Relaxed);
        self.agent_steps
            .fetch_add((episode.n_persons() * episode.n_steps()) as u64, Ordering::Relaxed);
        Ok(traj)
    }

    pub fn runs(&self) -> u64 {
        self.runs.load(Ordering::Relaxed)
    }

    pub fn agent_steps(&self) -> u64 {
        self.agent_steps.load(Ordering::Relaxed)
    }
}

/// Seed of cell `(episode, theta, replicate)`; distinct cells get distinct streams.
pub fn cell_seed(base_seed: u64, episode: usize, theta: usize, replicate: usize) -> u64 {
    derive_seed(base_seed, stream_id(episode, theta, replicate))
}

/// One trajectory of a simulation dataset (one JSON line).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub episode_id: String,
    pub episode_index: usize,
    pub theta_index: usize,
    pub replicate: usize,
    pub theta_vector: Vec<f64>,
    pub seed: u64,
    pub counts: Vec<[u64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_location: Option<Vec<Vec<[u64; 4]>>>,
}

impl SimulationRecord {
    fn from_trajectory(episode_id: String, cell: (usize, usize, usize), traj: Trajectory) -> Self {
        let arr = |v: &[CompartmentCounts]| v.iter().map(|c| c.as_array()).collect::<Vec<_>>();
        SimulationRecord {
            episode_id,
            episode_index: cell.0,
            theta_index: cell.1,
            replicate: cell.2,
            theta_vector: traj.theta_used.to_vec(),
            seed: traj.seed,
            counts: arr(&traj.counts),
            per_location: traj.per_location.as_ref().map(|pl| pl.iter().map(|c| arr(c)).collect()),
        }
    }

    pub fn theta(&self) -> Result<ThetaSeir> {
        ThetaSeir::from_slice(&self.theta_vector)
    }

    pub fn n_steps(&self) -> usize {
        self.counts.len().saturating_sub(1)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimulationDataset {
    pub records: Vec<SimulationRecord>,
}

impl SimulationDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (k, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SimulationRecord = serde_json::from_str(&line)
                .map_err(|e| Error::parse(format!("{} line {}", path.display(), k + 1), e.to_string()))?;
            if rec.counts.is_empty() {
                return Err(Error::parse(format!("{} line {}", path.display(), k + 1), "empty counts"));
            }
            records.push(rec);
        }
        Ok(SimulationDataset { records })
    }
}

/// Simulates every `(episode, theta, replicate)` cell. Cells run on the rayon
/// pool; records come back in cell order whatever the scheduling.
pub fn simulate_thetas(
    episodes: &[(String, &Episode)],
    thetas: &[ThetaSeir],
    replicates: usize,
    base_seed: u64,
    counter: &SimCounter,
    record_locations: bool,
) -> Result<SimulationDataset> {
    let cells: Vec<(usize, usize, usize)> = (0..episodes.len())
        .flat_map(|e| (0..thetas.len()).flat_map(move |k| (0..replicates).map(move |r| (e, k, r))))
        .collect();
    let records = cells
        .par_iter()
        .map(|&(e, k, r)| {
            let (id, episode) = &episodes[e];
            let traj = counter.simulate(episode, &thetas[k], cell_seed(base_seed, e, k, r), record_locations)?;
            Ok(SimulationRecord::from_trajectory(id.clone(), (e, k, r), traj))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationDataset { records })
}

/// Draws `k` θ from the prior (shared by every episode) and simulates each
/// episode under each of them `replicates` times.
pub fn simulate_batch(
    episodes: &[(String, &Episode)],
    k: usize,
    replicates: usize,
    prior: &PriorConfig,
    base_seed: u64,
    counter: &SimCounter,
) -> Result<SimulationDataset> {
    if k == 0 || replicates == 0 {
        return Err(Error::Contract("simulate_batch needs K ≥ 1 and replicates ≥ 1".into()));
    }
    prior.validate()?;
    let thetas = sample_thetas(prior, k, base_seed);
    simulate_thetas(episodes, &thetas, replicates, base_seed, counter, false)
}
