use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::encoder::DiffPoolModel;
use crate::error::{Error, Result};
use crate::mobility::{episode_graphs, Episode};
use crate::nn::{OptimizerConfig, ParamSet};
use crate::rng::{stream_rng, Domain, SimRng};
use crate::seir::{PriorConfig, ThetaSeir, THETA_DIM};
use crate::surrogate::cell::{lstm_cell, readout, GateVars, ReadoutVars};

pub const SURROGATE_SCHEMA_VERSION: u32 = 1;

/// How θ enters the first LSTM layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Incorporation {
    /// θ concatenated at every step.
    Each,
    /// θ at the first step, zeros afterwards.
    First,
    /// `FFN(x_t) ⊙ θ` in the θ slot.
    Hadamard,
}

/// Which graph embedding is fed at each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// Zero vector.
    None,
    /// Embedding of the first snapshot at every step.
    Constant,
    /// Embedding of the current snapshot.
    Varying,
}

impl Incorporation {
    pub const ALL: [Incorporation; 3] = [Incorporation::Each, Incorporation::First, Incorporation::Hadamard];

    pub fn label(self) -> &'static str {
        match self {
            Incorporation::Each => "each",
            Incorporation::First => "first",
            Incorporation::Hadamard => "hadamard",
        }
    }
}

impl GraphMode {
    pub const ALL: [GraphMode; 3] = [GraphMode::None, GraphMode::Constant, GraphMode::Varying];

    pub fn label(self) -> &'static str {
        match self {
            GraphMode::None => "none",
            GraphMode::Constant => "constant",
            GraphMode::Varying => "varying",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    /// Hidden width K; also the graph embedding width.
    pub hidden: usize,
    pub layers: usize,
    pub incorporation: Incorporation,
    pub graph_mode: GraphMode,
    pub epochs: usize,
    /// Stop after this many optimizer steps, whatever the epoch.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub clip_norm: f64,
    pub init_range: f64,
    /// Dropout between stacked layers during training.
    pub dropout: f64,
    pub validation_fraction: f64,
    /// Predict the change from the input counts instead of the counts.
    pub residual_output: bool,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            hidden: 128,
            layers: 3,
            incorporation: Incorporation::Each,
            graph_mode: GraphMode::Varying,
            epochs: 50,
            max_steps: None,
            batch_size: 256,
            optimizer: OptimizerConfig::adam(3e-3),
            clip_norm: 1.0,
            init_range: 0.08,
            dropout: 0.0,
            validation_fraction: 0.1,
            residual_output: true,
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.batch_size == 0 {
            return Err(Error::Config("surrogate hidden, layers and batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("dropout and validation_fraction must lie in [0, 1)".into()));
        }
        if self.clip_norm <= 0.0 || self.init_range <= 0.0 {
            return Err(Error::Config("clip_norm and init_range must be positive".into()));
        }
        self.optimizer.validate()
    }

    fn input_width(&self) -> usize {
        2 * self.hidden + 4 + THETA_DIM
    }
}

/// Episode-level inputs of a rollout, in normalized units.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedEpisode {
    pub population: f64,
    /// Initial `[S, E, I, R] / N`.
    pub initial: [f64; 4],
    /// Standardized graph input per step (zeros in `GraphMode::None`).
    pub graph: Vec<Vec<f64>>,
}

impl PreparedEpisode {
    pub fn n_steps(&self) -> usize {
        self.graph.len()
    }
}

pub fn normalize_counts(counts: [u64; 4], population: f64) -> [f64; 4] {
    counts.map(|c| c as f64 / population)
}

/// Inverse of [`normalize_counts`] for integer counts (rounds to the nearest count).
pub fn denormalize_count(x: f64, population: f64) -> u64 {
    (x * population).round().max(0.0) as u64
}

/// One sequence of a rollout batch.
#[derive(Clone, Copy, Debug)]
pub struct SequenceRef<'a> {
    pub episode: &'a PreparedEpisode,
    pub initial: [f64; 4],
    /// Normalized counts for steps 1..=T (teacher forcing and loss targets).
    pub targets: Option<&'a [[f64; 4]]>,
}

/// Column-batched rollout inputs.
#[derive(Clone, Debug)]
pub struct RolloutBatch {
    pub n_steps: usize,
    pub initial: Tensor,
    pub graph: Vec<Tensor>,
    pub targets: Option<Vec<Tensor>>,
}

fn columns(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            values.push(f(r, c));
        }
    }
    Tensor::matrix(rows, cols, values).expect("finite batch entries")
}

impl RolloutBatch {
    pub fn assemble(seqs: &[SequenceRef]) -> Result<Self> {
        let first = seqs.first().ok_or_else(|| Error::Contract("empty rollout batch".into()))?;
        let t = first.episode.n_steps();
        let k = first.episode.graph.first().map_or(0, Vec::len);
        for s in seqs {
            if s.episode.n_steps() != t || s.targets.is_some_and(|y| y.len() != t) {
                return Err(Error::shape("RolloutBatch", &[s.episode.n_steps()], &[t]));
            }
        }
        let b = seqs.len();
        let initial = columns(4, b, |r, c| seqs[c].initial[r]);
        let graph = (0..t).map(|step| columns(k, b, |r, c| seqs[c].episode.graph[step][r])).collect();
        let targets = if seqs.iter().all(|s| s.targets.is_some()) {
            Some((0..t).map(|step| columns(4, b, |r, c| seqs[c].targets.unwrap()[step][r])).collect())
        } else {
            None
        };
        Ok(RolloutBatch { n_steps: t, initial, graph, targets })
    }

    pub fn batch_size(&self) -> usize {
        self.initial.cols()
    }
}

/// Surrogate parameters bound on a tape.
pub struct SurrogateVars {
    layers: Vec<GateVars>,
    hadamard: Option<[Var; 4]>,
    readout: ReadoutVars,
}

/// Trained LSTM surrogate with its normalization constants and encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub schema_version: u32,
    pub config: SurrogateConfig,
    pub theta_names: Vec<String>,
    pub theta_lower: Vec<f64>,
    pub theta_upper: Vec<f64>,
    pub embed_mean: Vec<f64>,
    pub embed_std: Vec<f64>,
    pub encoder: Option<DiffPoolModel>,
    pub params: ParamSet,
}

const GATES: [&str; 4] = ["i", "f", "o", "l"];

impl SurrogateModel {
    /// Fresh model with uniform initialization in `[-init_range, init_range]`.
    pub fn new(config: SurrogateConfig, prior: &PriorConfig, encoder: Option<DiffPoolModel>, embed_stats: Option<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        config.validate()?;
        prior.validate()?;
        let k = config.hidden;
        let encoder = if config.graph_mode == GraphMode::None { None } else { encoder };
        if config.graph_mode != GraphMode::None {
            let enc = encoder
                .as_ref()
                .ok_or_else(|| Error::Config(format!("graph_mode {:?} needs an encoder", config.graph_mode)))?;
            if enc.embed_dim() != k {
                return Err(Error::Config(format!(
                    "encoder embedding width {} differs from surrogate hidden width {k}",
                    enc.embed_dim()
                )));
            }
        }
        let (embed_mean, embed_std) = match (&encoder, embed_stats) {
            (Some(_), Some((m, s))) if m.len() == k && s.len() == k => (m, s),
            (Some(_), Some(_)) => return Err(Error::Config("embedding statistics have the wrong width".into())),
            (Some(_), None) => (vec![0.0; k], vec![1.0; k]),
            (None, _) => (Vec::new(), Vec::new()),
        };

        let mut rng = stream_rng(config.seed, Domain::Init, 0, 1, 0);
        let r = config.init_range;
        let mut params = ParamSet::new();
        for layer in 0..config.layers {
            let width = if layer == 0 { config.input_width() } else { 2 * k };
            for g in GATES {
                params.insert_uniform(format!("lstm{layer}.w_{g}"), &[k, width], r, &mut rng);
            }
            for g in GATES {
                params.insert_uniform(format!("lstm{layer}.b_{g}"), &[k, 1], r, &mut rng);
            }
        }
        if config.incorporation == Incorporation::Hadamard {
            params.insert_uniform("hadamard.w1", &[k, 4], r, &mut rng);
            params.insert_uniform("hadamard.b1", &[k, 1], r, &mut rng);
            params.insert_uniform("hadamard.w2", &[THETA_DIM, k], r, &mut rng);
            params.insert_uniform("hadamard.b2", &[THETA_DIM, 1], r, &mut rng);
        }
        params.insert_uniform("readout.weight", &[k, k], r, &mut rng);
        params.insert_uniform("readout.bias", &[k, 1], r, &mut rng);
        for c in ["s", "e", "i", "r"] {
            params.insert_uniform(format!("head.{c}"), &[1, k], r, &mut rng);
        }

        let (theta_lower, theta_upper) = prior.bounds();
        Ok(SurrogateModel {
            schema_version: SURROGATE_SCHEMA_VERSION,
            config,
            theta_names: ThetaSeir::component_names(),
            theta_lower,
            theta_upper,
            embed_mean,
            embed_std,
            encoder,
            params,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SURROGATE_SCHEMA_VERSION {
            return Err(Error::parse(
                "schema_version",
                format!("unsupported surrogate version {}", self.schema_version),
            ));
        }
        self.config.validate()?;
        if self.theta_names != ThetaSeir::component_names() || self.theta_lower.len() != THETA_DIM || self.theta_upper.len() != THETA_DIM {
            return Err(Error::parse("theta_names", "θ layout does not match this build"));
        }
        let fresh = SurrogateModel::new(
            self.config.clone(),
            &PriorConfig::default(),
            self.encoder.clone(),
            self.encoder.is_some().then(|| (self.embed_mean.clone(), self.embed_std.clone())),
        )?;
        if let Some(enc) = &self.encoder {
            enc.validate()?;
        }
        self.params.check_layout(&fresh.params.layout())
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    /// θ mapped to `[0, 1]` per component by the prior box.
    pub fn scale_theta(&self, theta: &ThetaSeir) -> Vec<f64> {
        theta
            .to_vec()
            .iter()
            .zip(self.theta_lower.iter().zip(&self.theta_upper))
            .map(|(v, (lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }

    pub fn theta_span(&self) -> Vec<f64> {
        self.theta_lower.iter().zip(&self.theta_upper).map(|(lo, hi)| hi - lo).collect()
    }

    pub fn unscale_theta(&self, u: &[f64]) -> Result<ThetaSeir> {
        if u.len() != THETA_DIM {
            return Err(Error::shape("unscale_theta", &[u.len()], &[THETA_DIM]));
        }
        let v: Vec<f64> = u
            .iter()
            .zip(self.theta_lower.iter().zip(&self.theta_upper))
            .map(|(u, (lo, hi))| lo + u * (hi - lo))
            .collect();
        ThetaSeir::from_slice(&v)
    }

    /// Raw encoder embeddings of every snapshot.
    pub fn raw_embeddings(encoder: &DiffPoolModel, episode: &Episode) -> Result<Vec<Vec<f64>>> {
        episode_graphs(episode)?.iter().map(|g| encoder.encode_graph(g)).collect()
    }

    /// Population, initial state and standardized graph inputs of `episode`.
    pub fn prepare(&self, episode: &Episode) -> Result<PreparedEpisode> {
        let t = episode.n_steps();
        let k = self.hidden();
        let graph = match (self.config.graph_mode, &self.encoder) {
            (GraphMode::None, _) | (_, None) => vec![vec![0.0; k]; t],
            (mode, Some(enc)) => {
                let raw = if mode == GraphMode::Constant {
                    let first = enc.encode_graph(&episode_graphs(episode)?[0])?;
                    vec![first; t]
                } else {
                    Self::raw_embeddings(enc, episode)?
                };
                raw.into_iter()
                    .map(|e| {
                        e.iter()
                            .zip(self.embed_mean.iter().zip(&self.embed_std))
                            .map(|(v, (m, s))| (v - m) / s)
                            .collect()
                    })
                    .collect()
            }
        };
        let population = episode.population() as f64;
        if population == 0.0 {
            return Err(Error::Contract("episode has no persons".into()));
        }
        Ok(PreparedEpisode {
            population,
            initial: normalize_counts(episode.initial_counts(), population),
            graph,
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<(SurrogateVars, Vec<Var>)> {
        let all = self.params.bind(tape, trainable);
        let vars = self.vars_from(tape, &all)?;
        Ok((vars, all))
    }

    /// Interprets caller-bound vars (in [`ParamSet`] order) as surrogate parameters.
    pub fn vars_from(&self, tape: &mut Tape, all: &[Var]) -> Result<SurrogateVars> {
        if all.len() != self.params.len() {
            return Err(Error::shape("SurrogateModel::vars_from", &[all.len()], &[self.params.len()]));
        }
        let p = |name: &str| -> Result<Var> { Ok(all[self.params.id(name)?]) };
        let mut layers = Vec::with_capacity(self.config.layers);
        for layer in 0..self.config.layers {
            let w = [p(&format!("lstm{layer}.w_i"))?, p(&format!("lstm{layer}.w_f"))?, p(&format!("lstm{layer}.w_o"))?, p(&format!("lstm{layer}.w_l"))?];
            let b = [p(&format!("lstm{layer}.b_i"))?, p(&format!("lstm{layer}.b_f"))?, p(&format!("lstm{layer}.b_o"))?, p(&format!("lstm{layer}.b_l"))?];
            layers.push(GateVars::stack(tape, w, b)?);
        }
        let hadamard = if self.config.incorporation == Incorporation::Hadamard {
            Some([p("hadamard.w1")?, p("hadamard.b1")?, p("hadamard.w2")?, p("hadamard.b2")?])
        } else {
            None
        };
        let heads = [p("head.s")?, p("head.e")?, p("head.i")?, p("head.r")?];
        let heads = tape.concat_rows(&heads)?;
        Ok(SurrogateVars {
            layers,
            hadamard,
            readout: ReadoutVars {
                weight: p("readout.weight")?,
                bias: p("readout.bias")?,
                heads,
            },
        })
    }

    /// Normalized predictions for steps 1..=T, each `4 × B`.
    ///
    /// `theta` is the scaled θ (`P × B`). With `teacher_forced`, step t reads the
    /// batch targets of step t−1; otherwise it reads its own previous prediction.
    pub fn rollout(
        &self,
        tape: &mut Tape,
        vars: &SurrogateVars,
        batch: &RolloutBatch,
        theta: Var,
        teacher_forced: bool,
        mut dropout: Option<&mut SimRng>,
    ) -> Result<Vec<Var>> {
        let (k, b) = (self.hidden(), batch.batch_size());
        if tape.value(theta).shape() != [THETA_DIM, b] {
            return Err(Error::shape("rollout θ", tape.value(theta).shape(), &[THETA_DIM, b]));
        }
        let targets = match (teacher_forced, &batch.targets) {
            (true, Some(t)) => Some(t),
            (true, None) => return Err(Error::Contract("teacher forcing needs targets".into())),
            (false, _) => None,
        };
        let zero_state = tape.constant(Tensor::zeros(&[k, b]));
        let mut h = vec![zero_state; vars.layers.len()];
        let mut c = vec![zero_state; vars.layers.len()];
        let zero_theta = tape.constant(Tensor::zeros(&[THETA_DIM, b]));
        let mut x = tape.constant(batch.initial.clone());
        let mut preds = Vec::with_capacity(batch.n_steps);

        for t in 0..batch.n_steps {
            if let (Some(tg), true) = (targets, t > 0) {
                x = tape.constant(tg[t - 1].clone());
            }
            let g = tape.constant(batch.graph[t].clone());
            let slot = match (self.config.incorporation, &vars.hadamard) {
                (Incorporation::Each, _) => theta,
                (Incorporation::First, _) => if t == 0 { theta } else { zero_theta },
                (Incorporation::Hadamard, Some([w1, b1, w2, b2])) => {
                    let a = tape.matmul(*w1, x)?;
                    let a = tape.add_column(a, *b1)?;
                    let a = tape.relu(a);
                    let f = tape.matmul(*w2, a)?;
                    let f = tape.add_column(f, *b2)?;
                    tape.mul(f, theta)?
                }
                (Incorporation::Hadamard, None) => return Err(Error::Contract("missing Hadamard parameters".into())),
            };
            let (h0, c0) = lstm_cell(tape, &vars.layers[0], h[0], c[0], &[x, g, slot])?;
            h[0] = h0;
            c[0] = c0;
            let mut out = h0;
            for l in 1..vars.layers.len() {
                let input = match dropout.as_deref_mut() {
                    Some(rng) if self.config.dropout > 0.0 => dropout_mask(tape, out, self.config.dropout, rng)?,
                    _ => out,
                };
                let (hl, cl) = lstm_cell(tape, &vars.layers[l], h[l], c[l], &[input])?;
                h[l] = hl;
                c[l] = cl;
                out = tape.add(hl, out)?;
            }
            let mut y = readout(tape, &vars.readout, out)?;
            if self.config.residual_output {
                y = tape.add(y, x)?;
            }
            preds.push(y);
            x = y;
        }
        Ok(preds)
    }

    /// Mean squared error over compartments, steps and sequences.
    pub fn sequence_loss(&self, tape: &mut Tape, preds: &[Var], batch: &RolloutBatch) -> Result<Var> {
        let targets = batch
            .targets
            .as_ref()
            .ok_or_else(|| Error::Contract("loss needs targets".into()))?;
        let mut total: Option<Var> = None;
        for (p, y) in preds.iter().zip(targets) {
            let y = tape.constant(y.clone());
            let l = tape.mse(*p, y)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, l)?,
                None => l,
            });
        }
        let total = total.ok_or_else(|| Error::Contract("empty rollout".into()))?;
        Ok(tape.scale(total, 1.0 / preds.len() as f64))
    }

    /// Denormalized `[S, E, I, R]` predictions for steps 1..=T.
    pub fn forward_rollout(&self, episode: &PreparedEpisode, theta: &ThetaSeir, mode: RolloutMode) -> Result<Vec<[f64; 4]>> {
        let targets: Option<Vec<[f64; 4]>> = match mode {
            RolloutMode::TeacherForced(counts) => {
                if counts.len() != episode.n_steps() + 1 {
                    return Err(Error::shape("forward_rollout", &[counts.len()], &[episode.n_steps() + 1]));
                }
                Some(counts[1..].iter().map(|c| normalize_counts(*c, episode.population)).collect())
            }
            RolloutMode::Autoregressive => None,
        };
        let initial = match mode {
            RolloutMode::TeacherForced(counts) => normalize_counts(counts[0], episode.population),
            RolloutMode::Autoregressive => episode.initial,
        };
        let seq = SequenceRef { episode, initial, targets: targets.as_deref() };
        let batch = RolloutBatch::assemble(&[seq])?;
        let mut tape = Tape::new();
        let (vars, _) = self.bind(&mut tape, false)?;
        let theta_var = tape.constant(Tensor::column(self.scale_theta(theta))?);
        let preds = self.rollout(&mut tape, &vars, &batch, theta_var, targets.is_some(), None)?;
        Ok(preds
            .iter()
            .map(|p| {
                let v = tape.value(*p).values();
                [v[0], v[1], v[2], v[3]].map(|x| x * episode.population)
            })
            .collect())
    }

    /// Autoregressive infection counts `Î_1..Î_T`.
    pub fn predict_infections(&self, episode: &PreparedEpisode, theta: &ThetaSeir) -> Result<Vec<f64>> {
        Ok(self.forward_rollout(episode, theta, RolloutMode::Autoregressive)?.iter().map(|c| c[2]).collect())
    }
}

#[derive(Clone, Copy, Debug)]
pub enum RolloutMode<'a> {
    /// Full simulated trajectory, `T + 1` rows including t = 0.
    TeacherForced(&'a [[u64; 4]]),
    Autoregressive,
}

fn dropout_mask(tape: &mut Tape, x: Var, p: f64, rng: &mut SimRng) -> Result<Var> {
    use rand::Rng;
    let shape = tape.value(x).shape().to_vec();
    let keep = 1.0 / (1.0 - p);
    let n: usize = shape.iter().product();
    let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
    let m = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, m)
}
