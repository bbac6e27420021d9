use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::encoder::DiffPoolModel;
use crate::error::{Error, Result};
use crate::mobility::Episode;
use crate::nn::{clip_grad_norm, Optimizer};
use crate::rng::{stream_rng, Domain};
use crate::seir::{PriorConfig, SimulationDataset};
use crate::surrogate::model::{normalize_counts, PreparedEpisode, RolloutBatch, SequenceRef, SurrogateConfig, SurrogateModel};

const EMBED_STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    /// Row 0 is evaluated at initialization.
    pub rows: Vec<CurveRow>,
    pub best_epoch: usize,
    pub steps: usize,
    pub n_train: usize,
    pub n_val: usize,
}

impl TrainingCurve {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::parse("curve csv", e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::parse("curve csv", e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::parse("curve csv", e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn best_val_loss(&self) -> f64 {
        self.rows[self.best_epoch].val_loss
    }
}

/// Per-dimension mean and standard deviation of the encoder embeddings over
/// every snapshot of `episodes`.
pub fn embedding_stats(encoder: &DiffPoolModel, episodes: &[&Episode]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rows = Vec::new();
    for ep in episodes {
        rows.extend(SurrogateModel::raw_embeddings(encoder, ep)?);
    }
    let k = encoder.embed_dim();
    if rows.is_empty() {
        return Ok((vec![0.0; k], vec![1.0; k]));
    }
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std = (0..k)
        .map(|j| {
            let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            var.sqrt().max(EMBED_STD_FLOOR)
        })
        .collect();
    Ok((mean, std))
}

/// One training sequence: its prepared episode, scaled θ and normalized counts.
struct Sample {
    episode: usize,
    theta: Vec<f64>,
    initial: [f64; 4],
    targets: Vec<[f64; 4]>,
}

fn batch_of<'a>(prepared: &'a [PreparedEpisode], samples: &[&'a Sample]) -> Result<(RolloutBatch, Tensor)> {
    let seqs: Vec<SequenceRef> = samples
        .iter()
        .map(|s| SequenceRef {
            episode: &prepared[s.episode],
            initial: s.initial,
            targets: Some(&s.targets),
        })
        .collect();
    let batch = RolloutBatch::assemble(&seqs)?;
    let p = samples[0].theta.len();
    let mut theta = Tensor::zeros(&[p, samples.len()]);
    for (c, s) in samples.iter().enumerate() {
        for (r, v) in s.theta.iter().enumerate() {
            theta.values_mut()[r * samples.len() + c] = *v;
        }
    }
    Ok((batch, theta))
}

/// Mini-batches of equal sequence length, in the given order within each length.
fn length_batches(samples: &[Sample], prepared: &[PreparedEpisode], order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut by_len: Vec<(usize, Vec<usize>)> = Vec::new();
    for &i in order {
        let t = prepared[samples[i].episode].n_steps();
        match by_len.iter_mut().find(|(len, _)| *len == t) {
            Some((_, v)) => v.push(i),
            None => by_len.push((t, vec![i])),
        }
    }
    by_len.sort_by_key(|(t, _)| *t);
    by_len
        .into_iter()
        .flat_map(|(_, v)| v.chunks(size).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect()
}

fn mean_loss(model: &SurrogateModel, samples: &[Sample], prepared: &[PreparedEpisode], idx: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in length_batches(samples, prepared, idx, model.config.batch_size) {
        let refs: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
        let (batch, theta) = batch_of(prepared, &refs)?;
        let mut tape = Tape::new();
        let (vars, _) = model.bind(&mut tape, false)?;
        let theta = tape.constant(theta);
        let preds = model.rollout(&mut tape, &vars, &batch, theta, true, None)?;
        let loss = model.sequence_loss(&mut tape, &preds, &batch)?;
        total += tape.value(loss).item() * chunk.len() as f64;
    }
    Ok(total / idx.len().max(1) as f64)
}

/// Record indices `(validation, train)` used by [`train_surrogate`] for a
/// dataset of `n` records; both keep the seeded shuffle order.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Domain::Split, 0, 0, 0));
    let n_val = if n < 2 || fraction == 0.0 {
        0
    } else {
        ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
    };
    let train = order.split_off(n_val);
    (order, train)
}

/// Trains the surrogate on simulated trajectories with teacher forcing.
///
/// Records are split into train and validation sets by a seeded shuffle; the
/// returned model is the parameter state with the lowest validation loss.
pub fn train_surrogate(
    dataset: &SimulationDataset,
    episodes: &[(String, &Episode)],
    encoder: Option<DiffPoolModel>,
    prior: &PriorConfig,
    config: &SurrogateConfig,
) -> Result<(SurrogateModel, TrainingCurve)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("surrogate training needs at least one simulation record".into()));
    }
    let ids: HashMap<&str, usize> = episodes.iter().enumerate().map(|(i, (id, _))| (id.as_str(), i)).collect();
    for r in &dataset.records {
        if !ids.contains_key(r.episode_id.as_str()) {
            return Err(Error::Config(format!("record references unknown episode {}", r.episode_id)));
        }
    }
    let stats = match (&encoder, config.graph_mode) {
        (Some(enc), mode) if mode != crate::surrogate::GraphMode::None => {
            let eps: Vec<&Episode> = episodes.iter().map(|(_, e)| *e).collect();
            Some(embedding_stats(enc, &eps)?)
        }
        _ => None,
    };
    let mut model = SurrogateModel::new(config.clone(), prior, encoder, stats)?;
    let prepared: Vec<PreparedEpisode> = episodes.iter().map(|(_, e)| model.prepare(e)).collect::<Result<_>>()?;

    let mut samples = Vec::with_capacity(dataset.len());
    for r in &dataset.records {
        let episode = ids[r.episode_id.as_str()];
        let n = prepared[episode].population;
        if r.counts.len() != prepared[episode].n_steps() + 1 {
            return Err(Error::shape("train_surrogate record", &[r.counts.len()], &[prepared[episode].n_steps() + 1]));
        }
        samples.push(Sample {
            episode,
            theta: model.scale_theta(&r.theta()?),
            initial: normalize_counts(r.counts[0], n),
            targets: r.counts[1..].iter().map(|c| normalize_counts(*c, n)).collect(),
        });
    }

    let (val_idx, mut train_idx) = validation_split(samples.len(), config.validation_fraction, config.seed);

    let evaluate = |model: &SurrogateModel| -> Result<(f64, f64)> {
        let train = mean_loss(model, &samples, &prepared, &train_idx)?;
        let val = if val_idx.is_empty() { train } else { mean_loss(model, &samples, &prepared, &val_idx)? };
        Ok((train, val))
    };
    let (train0, val0) = evaluate(&model)?;
    let mut curve = TrainingCurve {
        rows: vec![CurveRow { epoch: 0, train_loss: train0, val_loss: val0 }],
        best_epoch: 0,
        steps: 0,
        n_train: train_idx.len(),
        n_val: val_idx.len(),
    };
    let mut best = model.params.clone();
    let mut opt = Optimizer::new(config.optimizer.clone(), model.params.tensors())?;
    let mut dropout_rng = stream_rng(config.seed, Domain::Train, 0, 1, 0);
    let budget = config.max_steps.unwrap_or(usize::MAX);

    for epoch in 1..=config.epochs {
        if curve.steps >= budget {
            break;
        }
        train_idx.shuffle(&mut stream_rng(config.seed, Domain::Train, 0, 0, epoch));
        let mut seen = 0usize;
        let mut running = 0.0;
        for chunk in length_batches(&samples, &prepared, &train_idx, config.batch_size) {
            if curve.steps >= budget {
                break;
            }
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (batch, theta) = batch_of(&prepared, &refs)?;
            let mut tape = Tape::new();
            let (vars, params) = model.bind(&mut tape, true)?;
            let theta = tape.constant(theta);
            let preds = model.rollout(&mut tape, &vars, &batch, theta, true, Some(&mut dropout_rng))?;
            let loss = model.sequence_loss(&mut tape, &preds, &batch)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("surrogate training loss at step {}", curve.steps)));
            }
            let mut grads = tape.backward(loss)?;
            let mut g: Vec<Tensor> = params.into_iter().map(|v| grads.take(v)).collect();
            clip_grad_norm(&mut g, config.clip_norm);
            opt.step(model.params.tensors_mut(), &g)?;
            curve.steps += 1;
            running += value * chunk.len() as f64;
            seen += chunk.len();
        }
        // without a validation split, select on the train loss after the epoch
        let val = if val_idx.is_empty() {
            mean_loss(&model, &samples, &prepared, &train_idx)?
        } else {
            mean_loss(&model, &samples, &prepared, &val_idx)?
        };
        curve.rows.push(CurveRow {
            epoch,
            train_loss: running / seen.max(1) as f64,
            val_loss: val,
        });
        if val < curve.best_val_loss() {
            curve.best_epoch = epoch;
            best = model.params.clone();
        }
    }
    model.params = best;
    if !model.params.is_finite() {
        return Err(Error::NonFinite("surrogate parameters after training".into()));
    }
    Ok((model, curve))
}
