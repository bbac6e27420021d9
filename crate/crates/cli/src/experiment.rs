//! In-memory experiment stages shared by the commands and the acceptance suite.

use std::str::FromStr;

use anyhow::{bail, ensure, Result};
use serde::{Deserialize, Serialize};

use seirgrad::encoder::{train_encoder_on_episodes, DiffPoolModel, EncoderReport};
use seirgrad::estimator::{evaluate, fit_theta, grid_search, lambda_sweep, mean_infections, FitResult};
use seirgrad::mobility::Episode;
use seirgrad::rng::Domain;
use seirgrad::seir::{sample_thetas, simulate_batch, SimCounter, SimulationDataset, ThetaSeir};
use seirgrad::surrogate::{train_surrogate, GraphMode, Incorporation, SurrogateConfig, SurrogateModel, TrainingCurve};

use crate::config::RunConfig;
use crate::data::{refs, Dataset};

pub fn simulate_seed(config: &RunConfig) -> u64 {
    config.stage_seed(Domain::Simulate, 0)
}

pub fn grid_seed(config: &RunConfig) -> u64 {
    config.stage_seed(Domain::GridSearch, 0)
}

pub fn evaluate_seed(config: &RunConfig) -> u64 {
    config.stage_seed(Domain::Evaluate, 0)
}

/// `k` prior draws simulated on every training episode.
pub fn simulate_train(config: &RunConfig, data: &Dataset, k: usize, counter: &SimCounter) -> Result<SimulationDataset> {
    let train = data.train();
    Ok(simulate_batch(&train, k, config.simulation.replicates, &config.simulation.prior, simulate_seed(config), counter)?)
}

/// Encoder trained on the training episodes' snapshots.
pub fn train_encoder(config: &RunConfig, data: &Dataset) -> Result<(DiffPoolModel, EncoderReport)> {
    let train = data.train();
    Ok(train_encoder_on_episodes(&refs(&train), &config.encoder_config())?)
}

pub fn needs_encoder(surrogate: &SurrogateConfig) -> bool {
    surrogate.graph_mode != GraphMode::None
}

pub fn train_surrogate_on(
    config: &RunConfig,
    data: &Dataset,
    sims: &SimulationDataset,
    encoder: Option<&DiffPoolModel>,
    surrogate: &SurrogateConfig,
) -> Result<(SurrogateModel, TrainingCurve)> {
    let encoder = if needs_encoder(surrogate) {
        match encoder {
            Some(e) => Some(e.clone()),
            None => bail!("graph mode {} needs a trained encoder", surrogate.graph_mode.label()),
        }
    } else {
        None
    };
    Ok(train_surrogate(sims, &data.train(), encoder, &config.simulation.prior, surrogate)?)
}

pub fn fit(config: &RunConfig, data: &Dataset, model: &SurrogateModel, lambda: f64) -> Result<FitResult> {
    let train = data.train();
    let prior = config.prior_spec(lambda)?;
    Ok(fit_theta(model, &refs(&train), None, &prior, &config.fit_config())?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeEval {
    pub id: String,
    pub observed: Vec<u64>,
    /// Replicate-mean simulated infections under the fitted θ.
    pub simulated: Vec<f64>,
    pub surrogate: Option<Vec<f64>>,
    pub sq_error: f64,
    pub surrogate_sq_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub mean_error: f64,
    pub episodes: Vec<EpisodeEval>,
}

fn sq_error(a: &[f64], obs: &[u64]) -> f64 {
    a.iter().zip(obs).map(|(x, o)| (x - *o as f64).powi(2)).sum()
}

/// Scores `theta` on `episodes` by simulation; with a model, also records the
/// surrogate's own prediction.
pub fn evaluate_episodes(
    config: &RunConfig,
    episodes: &[(String, &Episode)],
    theta: &ThetaSeir,
    model: Option<&SurrogateModel>,
    counter: &SimCounter,
) -> Result<Evaluation> {
    ensure!(!episodes.is_empty(), "no episodes to evaluate");
    let eps = refs(episodes);
    let means = mean_infections(&eps, theta, config.estimation.eval_replicates, evaluate_seed(config), Domain::Evaluate, counter)?;
    let mut out = Vec::with_capacity(eps.len());
    for ((id, ep), simulated) in episodes.iter().zip(means) {
        let observed = ep.observations()?.to_vec();
        let surrogate = match model {
            Some(m) => Some(m.predict_infections(&m.prepare(ep)?, theta)?),
            None => None,
        };
        out.push(EpisodeEval {
            id: id.clone(),
            sq_error: sq_error(&simulated, &observed),
            surrogate_sq_error: surrogate.as_ref().map(|s| sq_error(s, &observed)),
            observed,
            simulated,
            surrogate,
        });
    }
    let mean_error = out.iter().map(|e| e.sq_error).sum::<f64>() / out.len() as f64;
    Ok(Evaluation { mean_error, episodes: out })
}

pub fn test_error(config: &RunConfig, data: &Dataset, theta: &ThetaSeir) -> Result<f64> {
    let test = data.test();
    Ok(evaluate(theta, &refs(&test), config.estimation.eval_replicates, evaluate_seed(config), &SimCounter::new())?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub k: usize,
    pub vanilla_error: f64,
    pub surrogate_error: f64,
    pub vanilla_simulations: u64,
    pub surrogate_simulations: u64,
}

/// One budget level of the comparison: grid search over `k` prior draws
/// against a surrogate trained on simulations of the same `k` draws.
pub fn compare_k(config: &RunConfig, data: &Dataset, encoder: Option<&DiffPoolModel>, k: usize) -> Result<CompareRow> {
    ensure!(k > 0, "K must be positive");
    let train = data.train();
    let candidates = sample_thetas(&config.simulation.prior, k, simulate_seed(config));
    let vanilla_counter = SimCounter::new();
    let grid = grid_search(&refs(&train), &candidates, config.simulation.replicates, grid_seed(config), &vanilla_counter)?;
    let vanilla_theta = ThetaSeir::from_slice(&grid.best_theta)?;

    let surrogate_counter = SimCounter::new();
    let sims = simulate_train(config, data, k, &surrogate_counter)?;
    let (model, _) = train_surrogate_on(config, data, &sims, encoder, &config.surrogate_config())?;
    let fitted = fit(config, data, &model, config.estimation.lambda)?;

    let row = CompareRow {
        k,
        vanilla_error: test_error(config, data, &vanilla_theta)?,
        surrogate_error: test_error(config, data, &fitted.theta()?)?,
        vanilla_simulations: vanilla_counter.runs(),
        surrogate_simulations: surrogate_counter.runs(),
    };
    ensure!(
        row.vanilla_simulations == row.surrogate_simulations,
        "budget mismatch at K={k}: vanilla ran {} simulations, surrogate {}",
        row.vanilla_simulations,
        row.surrogate_simulations
    );
    Ok(row)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Lambda,
    Incorporation,
    Graph,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Lambda, Ablation::Incorporation, Ablation::Graph];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Lambda => "lambda",
            Ablation::Incorporation => "incorporation",
            Ablation::Graph => "graph",
        }
    }
}

impl FromStr for Ablation {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| anyhow::anyhow!("unknown ablation `{s}` (expected one of: lambda, incorporation, graph)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub dev_error: Option<f64>,
    pub test_error: f64,
    /// Best validation loss of the surrogate behind this row.
    pub val_loss: f64,
    pub theta: Vec<f64>,
}

/// Runs one sweep holding everything else at the configured values. The
/// simulation dataset and the encoder are shared by every variant.
pub fn ablate(config: &RunConfig, data: &Dataset, which: Ablation, counter: &SimCounter) -> Result<Vec<AblationRow>> {
    let sims = simulate_train(config, data, config.simulation.k, counter)?;
    let base = config.surrogate_config();
    let variants: Vec<SurrogateConfig> = match which {
        Ablation::Lambda => vec![base.clone()],
        Ablation::Incorporation => Incorporation::ALL
            .into_iter()
            .map(|incorporation| SurrogateConfig { incorporation, ..base.clone() })
            .collect(),
        Ablation::Graph => GraphMode::ALL
            .into_iter()
            .map(|graph_mode| SurrogateConfig { graph_mode, ..base.clone() })
            .collect(),
    };
    let encoder = if variants.iter().any(needs_encoder) {
        Some(train_encoder(config, data)?.0)
    } else {
        None
    };

    let dev = data.dev();
    let mut rows = Vec::new();
    for variant in &variants {
        let (model, curve) = train_surrogate_on(config, data, &sims, encoder.as_ref(), variant)?;
        if which == Ablation::Lambda {
            ensure!(!config.ablation.lambda_grid.is_empty(), "ablation.lambda_grid is empty");
            ensure!(!dev.is_empty(), "the λ sweep scores on the dev split, which is empty");
            let train = data.train();
            let sweep = lambda_sweep(
                &model,
                &refs(&train),
                &refs(&dev),
                &config.prior_spec(0.0)?,
                &config.ablation.lambda_grid,
                &config.fit_config(),
                config.estimation.eval_replicates,
                evaluate_seed(config),
                &SimCounter::new(),
            )?;
            for r in sweep {
                rows.push(AblationRow {
                    variant: format!("{}", r.lambda),
                    dev_error: Some(r.dev_error),
                    test_error: test_error(config, data, &r.fit.theta()?)?,
                    val_loss: curve.best_val_loss(),
                    theta: r.fit.theta_star,
                });
            }
        } else {
            let fitted = fit(config, data, &model, config.estimation.lambda)?;
            let theta = fitted.theta()?;
            let dev_error = if dev.is_empty() {
                None
            } else {
                Some(evaluate(&theta, &refs(&dev), config.estimation.eval_replicates, evaluate_seed(config), &SimCounter::new())?)
            };
            let label = match which {
                Ablation::Incorporation => variant.incorporation.label(),
                _ => variant.graph_mode.label(),
            };
            rows.push(AblationRow {
                variant: label.to_string(),
                dev_error,
                test_error: test_error(config, data, &theta)?,
                val_loss: curve.best_val_loss(),
                theta: fitted.theta_star,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        let err = "dropout".parse::<Ablation>().unwrap_err();
        assert!(err.to_string().contains("unknown ablation `dropout`"));
    }
}
