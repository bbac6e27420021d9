use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::fit::{fit_theta, FitConfig, FitResult, PriorSpec};
use crate::mobility::Episode;
use crate::rng::{derive_seed, Domain};
use crate::seir::{cell_seed, SimCounter, ThetaSeir};
use crate::surrogate::SurrogateModel;

/// Seed of replicate `r` on episode `e`, independent of the candidate θ so
/// that every candidate sees the same random numbers.
pub fn common_seed(base_seed: u64, domain: Domain, episode: usize, replicate: usize) -> u64 {
    cell_seed(derive_seed(base_seed, domain as u64), episode, 0, replicate)
}

/// Replicate-mean infections `Ī_1..Ī_T` of each episode under `theta`.
pub fn mean_infections(episodes: &[&Episode], theta: &ThetaSeir, replicates: usize, base_seed: u64, domain: Domain, counter: &SimCounter) -> Result<Vec<Vec<f64>>> {
    episodes
        .iter()
        .enumerate()
        .map(|(e, ep)| {
            let mut mean = vec![0.0; ep.n_steps()];
            for r in 0..replicates {
                let traj = counter.simulate(ep, theta, common_seed(base_seed, domain, e, r), false)?;
                for (m, i) in mean.iter_mut().zip(traj.infections().iter().skip(1)) {
                    *m += *i as f64;
                }
            }
            Ok(mean.into_iter().map(|m| m / replicates as f64).collect())
        })
        .collect()
}

/// Per-episode `Σ_t (Ī_t − I_t)²`.
fn squared_errors(episodes: &[&Episode], theta: &ThetaSeir, replicates: usize, base_seed: u64, domain: Domain, counter: &SimCounter) -> Result<Vec<f64>> {
    let means = mean_infections(episodes, theta, replicates, base_seed, domain, counter)?;
    episodes
        .iter()
        .zip(means)
        .map(|(ep, mean)| Ok(mean.iter().zip(ep.observations()?).map(|(m, o)| (m - *o as f64).powi(2)).sum()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_index: usize,
    pub best_theta: Vec<f64>,
    /// Summed squared error of each candidate over all episodes.
    pub errors: Vec<f64>,
    pub simulations: u64,
}

/// Simulates every episode under every candidate and keeps the one with the
/// lowest total squared error. Ties go to the lowest candidate index.
pub fn grid_search(episodes: &[&Episode], candidates: &[ThetaSeir], replicates: usize, base_seed: u64, counter: &SimCounter) -> Result<GridResult> {
    if candidates.is_empty() {
        return Err(Error::Contract("grid search needs at least one candidate".into()));
    }
    if replicates == 0 {
        return Err(Error::Contract("grid search needs at least one replicate".into()));
    }
    for ep in episodes {
        ep.observations()?;
    }
    let before = counter.runs();
    let errors: Vec<f64> = candidates
        .par_iter()
        .map(|theta| Ok(squared_errors(episodes, theta, replicates, base_seed, Domain::GridSearch, counter)?.iter().sum()))
        .collect::<Result<_>>()?;
    let mut best_index = 0;
    for (k, e) in errors.iter().enumerate() {
        if *e < errors[best_index] {
            best_index = k;
        }
    }
    Ok(GridResult {
        best_index,
        best_theta: candidates[best_index].to_vec(),
        errors,
        simulations: counter.runs() - before,
    })
}

/// Per-episode `Σ_t (Ī_t − I_t)²` under the evaluation draws.
pub fn episode_errors(theta: &ThetaSeir, episodes: &[&Episode], replicates: usize, base_seed: u64, counter: &SimCounter) -> Result<Vec<f64>> {
    if replicates == 0 {
        return Err(Error::Contract("evaluation needs at least one replicate".into()));
    }
    for ep in episodes {
        ep.observations()?;
    }
    squared_errors(episodes, theta, replicates, base_seed, Domain::Evaluate, counter)
}

/// Mean over episodes of `Σ_t (Ī_t − I_t)²`, with `Ī_t` averaged over replicates.
pub fn evaluate(theta: &ThetaSeir, episodes: &[&Episode], replicates: usize, base_seed: u64, counter: &SimCounter) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::Contract("no episodes to evaluate".into()));
    }
    let errs = episode_errors(theta, episodes, replicates, base_seed, counter)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub dev_error: f64,
    pub fit: FitResult,
}

/// Fits θ for each λ on the training episodes and scores the fit on the dev episodes.
#[allow(clippy::too_many_arguments)]
pub fn lambda_sweep(
    model: &SurrogateModel,
    train: &[&Episode],
    dev: &[&Episode],
    prior: &PriorSpec,
    lambdas: &[f64],
    fit: &FitConfig,
    replicates: usize,
    base_seed: u64,
    counter: &SimCounter,
) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::Config("λ grid is empty".into()));
    }
    lambdas
        .iter()
        .map(|&lambda| {
            let spec = PriorSpec { lambda, ..prior.clone() };
            let result = fit_theta(model, train, None, &spec, fit)?;
            let dev_error = evaluate(&result.theta()?, dev, replicates, base_seed, counter)?;
            Ok(SweepRow { lambda, dev_error, fit: result })
        })
        .collect()
}
