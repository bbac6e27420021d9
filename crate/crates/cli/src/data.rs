//! Episode datasets: generation, observation, train/dev/test split, files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use seirgrad::mobility::{generate_synthetic_episode, load_episode, save_episode, Episode};
use seirgrad::rng::{derive_seed, Domain};
use seirgrad::seir::{sample_thetas, simulate, ThetaSeir};

use crate::config::RunConfig;

/// Which episodes went where, and the θ that generated the observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    /// `None` when the episodes came with their own observations.
    pub true_theta: Option<Vec<f64>>,
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub episodes: IndexMap<String, Episode>,
    pub split: SplitManifest,
}

pub fn episode_id(i: usize) -> String {
    format!("ep{i:03}")
}

/// Sizes of the three parts: train and dev are rounded, test takes the rest.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let train = ((fractions[0] * n as f64).round() as usize).min(n);
    let dev = ((fractions[1] * n as f64).round() as usize).min(n - train);
    [train, dev, n - train - dev]
}

/// Seeded permutation of `ids` cut into train/dev/test.
pub fn split_ids(ids: &[String], fractions: [f64; 3], seed: u64) -> [Vec<String>; 3] {
    let mut keyed: Vec<(u64, &String)> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (derive_seed(seed, i as u64), id))
        .collect();
    keyed.sort_unstable();
    let [a, b, _] = split_sizes(ids.len(), fractions);
    let order: Vec<String> = keyed.into_iter().map(|(_, id)| id.clone()).collect();
    [order[..a].to_vec(), order[a..a + b].to_vec(), order[a + b..].to_vec()]
}

/// θ used to simulate observations: configured, or drawn from the sampling prior.
pub fn true_theta(config: &RunConfig) -> Result<ThetaSeir> {
    Ok(match &config.dataset.true_theta {
        Some(v) => ThetaSeir::from_slice(v)?,
        None => sample_thetas(&config.simulation.prior, 1, config.stage_seed(Domain::Observe, 1))
            .pop()
            .expect("one sample"),
    })
}

/// Generates (or loads) episodes, attaches observations and splits them.
pub fn build_dataset(config: &RunConfig) -> Result<Dataset> {
    let mut episodes = IndexMap::new();
    let mut theta_used = None;
    if config.dataset.episode_paths.is_empty() {
        let theta = true_theta(config)?;
        let gen_seed = config.stage_seed(Domain::Generate, 0);
        let obs_seed = config.stage_seed(Domain::Observe, 0);
        for i in 0..config.dataset.n_episodes {
            let mut ep = generate_synthetic_episode(&config.dataset.generator, derive_seed(gen_seed, i as u64))?;
            let traj = simulate(&ep, &theta, derive_seed(obs_seed, i as u64))?;
            ep.observed_infections = Some(traj.infections()[1..].to_vec());
            episodes.insert(episode_id(i), ep);
        }
        theta_used = Some(theta.to_vec());
    } else {
        for (i, path) in config.dataset.episode_paths.iter().enumerate() {
            let ep = load_episode(path).with_context(|| format!("loading {}", path.display()))?;
            ep.observations().with_context(|| format!("{} has no observations", path.display()))?;
            episodes.insert(episode_id(i), ep);
        }
    }
    let ids: Vec<String> = episodes.keys().cloned().collect();
    let seed = config.stage_seed(Domain::Split, 0);
    let [train, dev, test] = split_ids(&ids, config.dataset.split, seed);
    Ok(Dataset {
        episodes,
        split: SplitManifest { seed, true_theta: theta_used, train, dev, test },
    })
}

pub fn episodes_dir(out: &Path) -> PathBuf {
    out.join("episodes")
}

pub fn split_path(out: &Path) -> PathBuf {
    out.join("split.json")
}

impl Dataset {
    pub fn write(&self, out: &Path) -> Result<Vec<PathBuf>> {
        let dir = episodes_dir(out);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut written = Vec::new();
        for (id, ep) in &self.episodes {
            let path = dir.join(format!("{id}.json"));
            save_episode(ep, &path)?;
            written.push(path);
        }
        let split = split_path(out);
        std::fs::write(&split, serde_json::to_string_pretty(&self.split)? + "\n")
            .with_context(|| format!("writing {}", split.display()))?;
        written.push(split);
        Ok(written)
    }

    pub fn load(out: &Path) -> Result<Self> {
        let split_file = split_path(out);
        let text = std::fs::read_to_string(&split_file)
            .with_context(|| format!("reading {} (run `generate` first)", split_file.display()))?;
        let split: SplitManifest = serde_json::from_str(&text)?;
        let mut ids: Vec<&String> = split.train.iter().chain(&split.dev).chain(&split.test).collect();
        ids.sort();
        let mut episodes = IndexMap::new();
        for id in ids {
            let path = episodes_dir(out).join(format!("{id}.json"));
            let ep = load_episode(&path).with_context(|| format!("loading {}", path.display()))?;
            episodes.insert(id.clone(), ep);
        }
        Ok(Dataset { episodes, split })
    }

    fn part(&self, ids: &[String]) -> Vec<(String, &Episode)> {
        ids.iter().map(|id| (id.clone(), &self.episodes[id])).collect()
    }

    pub fn train(&self) -> Vec<(String, &Episode)> {
        self.part(&self.split.train)
    }

    pub fn dev(&self) -> Vec<(String, &Episode)> {
        self.part(&self.split.dev)
    }

    pub fn test(&self) -> Vec<(String, &Episode)> {
        self.part(&self.split.test)
    }

    pub fn require_parts(&self, dev: bool) -> Result<()> {
        if self.split.train.is_empty() || self.split.test.is_empty() || (dev && self.split.dev.is_empty()) {
            bail!(
                "split {}/{}/{} leaves a required part empty",
                self.split.train.len(),
                self.split.dev.len(),
                self.split.test.len()
            );
        }
        Ok(())
    }
}

pub fn refs<'a>(named: &'a [(String, &'a Episode)]) -> Vec<&'a Episode> {
    named.iter().map(|(_, e)| *e).collect()
}
