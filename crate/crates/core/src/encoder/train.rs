use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::encoder::model::{DiffPoolModel, EncoderConfig};
use crate::error::{Error, Result};
use crate::mobility::{episode_graphs, Episode, GraphInput, NODE_FEATURES};
use crate::nn::Optimizer;
use crate::rng::{stream_rng, Domain};

#[derive(Clone, Debug)]
pub struct LabeledGraph {
    pub graph: GraphInput,
    /// Zero-based time-step class.
    pub label: usize,
}

/// Every snapshot of every episode, labeled by its position in the episode.
pub fn time_labeled_graphs(episodes: &[&Episode]) -> Result<Vec<LabeledGraph>> {
    let mut out = Vec::new();
    for ep in episodes {
        for (t, graph) in episode_graphs(ep)?.into_iter().enumerate() {
            out.push(LabeledGraph { graph, label: t });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderReport {
    /// Entry 0 is the loss at initialization; entry e the mean batch loss of epoch e.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

fn batch_loss(model: &DiffPoolModel, tape: &mut Tape, batch: &[&LabeledGraph], trainable: bool) -> Result<(Var, Vec<Var>)> {
    let params = model.params.bind(tape, trainable);
    let pairs: Vec<(&GraphInput, usize)> = batch.iter().map(|g| (&g.graph, g.label)).collect();
    let loss = model.classification_objective(tape, &params, &pairs)?;
    Ok((loss, params))
}

/// Mean cross-entropy of the classifier head over `graphs`.
pub fn classification_loss(model: &DiffPoolModel, graphs: &[LabeledGraph]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in graphs.chunks(model.config.batch_size) {
        let refs: Vec<&LabeledGraph> = chunk.iter().collect();
        let mut tape = Tape::new();
        let (loss, _) = batch_loss(model, &mut tape, &refs, false)?;
        total += tape.value(loss).item() * chunk.len() as f64;
    }
    Ok(total / graphs.len().max(1) as f64)
}

pub fn classification_accuracy(model: &DiffPoolModel, graphs: &[LabeledGraph]) -> Result<f64> {
    let mut hits = 0usize;
    for g in graphs {
        if model.predict(&g.graph)? == g.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / graphs.len().max(1) as f64)
}

/// Trains the encoder to classify snapshots by time step (cross-entropy,
/// mini-batches in a seeded shuffle order).
pub fn train_encoder(graphs: &[LabeledGraph], n_classes: usize, config: &EncoderConfig) -> Result<(DiffPoolModel, EncoderReport)> {
    config.validate()?;
    let first = graphs.first().ok_or_else(|| Error::Config("no graphs to train the encoder on".into()))?;
    let mut labels: Vec<usize> = graphs.iter().map(|g| g.label).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::Config("encoder training needs at least two distinct time labels".into()));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Config(format!("label {bad} outside {n_classes} classes")));
    }
    let n_features = first.graph.features.cols();
    let mut model = DiffPoolModel::new(config.clone(), first.graph.n_nodes(), n_features, n_classes)?;
    let mut opt = Optimizer::new(config.optimizer.clone(), model.params.tensors())?;

    let mut epoch_losses = vec![classification_loss(&model, graphs)?];
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut stream_rng(config.seed, Domain::Train, 0, 0, epoch));
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&LabeledGraph> = chunk.iter().map(|&i| &graphs[i]).collect();
            let mut tape = Tape::new();
            let (loss, params) = batch_loss(&model, &mut tape, &batch, true)?;
            let mut grads = tape.backward(loss)?;
            let g: Vec<_> = params.into_iter().map(|v| grads.take(v)).collect();
            opt.step(model.params.tensors_mut(), &g)?;
            total += tape.value(loss).item() * batch.len() as f64;
        }
        epoch_losses.push(total / graphs.len() as f64);
    }
    if !model.params.is_finite() {
        return Err(Error::NonFinite("encoder parameters after training".into()));
    }
    let train_accuracy = classification_accuracy(&model, graphs)?;
    Ok((model, EncoderReport { epoch_losses, train_accuracy }))
}

/// Convenience for episodes: labels are snapshot positions, classes = max T.
pub fn train_encoder_on_episodes(episodes: &[&Episode], config: &EncoderConfig) -> Result<(DiffPoolModel, EncoderReport)> {
    let graphs = time_labeled_graphs(episodes)?;
    let n_classes = episodes.iter().map(|e| e.n_steps()).max().unwrap_or(0);
    let (model, report) = train_encoder(&graphs, n_classes, config)?;
    debug_assert_eq!(model.n_features, NODE_FEATURES);
    Ok((model, report))
}
