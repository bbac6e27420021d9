use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{CsrMatrix, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::mobility::GraphInput;
use crate::nn::{OptimizerConfig, ParamSet};
use crate::rng::{stream_rng, Domain};

pub const ENCODER_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Width K of the graph embedding; must equal the surrogate hidden width.
    pub embed_dim: usize,
    /// Node embedding width at the first level.
    pub hidden_dim: usize,
    /// Upper limit on the first-level cluster count.
    pub max_clusters: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 128,
            hidden_dim: 16,
            max_clusters: 16,
            epochs: 30,
            batch_size: 16,
            optimizer: OptimizerConfig::adam(0.01),
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.max_clusters < 2 || self.batch_size == 0 {
            return Err(Error::Config(
                "encoder widths and batch size must be positive, max_clusters ≥ 2".into(),
            ));
        }
        self.optimizer.validate()
    }

    /// First-level cluster count for a graph of `n_nodes`: max(4, ⌈n/4⌉), capped.
    pub fn first_clusters(&self, n_nodes: usize) -> usize {
        n_nodes.div_ceil(4).max(4).min(self.max_clusters)
    }
}

/// Adjacency of one pooling level.
#[derive(Clone, Debug)]
pub enum Adjacency {
    /// Raw 0/1 adjacency with its precomputed normalization (first level).
    Sparse { raw: Arc<CsrMatrix>, normalized: Arc<CsrMatrix> },
    /// Dense raw adjacency on the tape (coarsened levels).
    Dense(Var),
}

impl Adjacency {
    pub fn of(graph: &GraphInput) -> Self {
        Adjacency::Sparse {
            raw: graph.adjacency.clone(),
            normalized: graph.normalized.clone(),
        }
    }

    fn n_nodes(&self, tape: &Tape) -> usize {
        match self {
            Adjacency::Sparse { raw, .. } => raw.rows(),
            Adjacency::Dense(a) => tape.value(*a).rows(),
        }
    }

    /// `Â·x` with `Â = D^{-1/2}(A+I)D^{-1/2}`.
    fn propagate(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Adjacency::Sparse { normalized, .. } => tape.sparse_matmul(normalized.clone(), x),
            Adjacency::Dense(a) => {
                let a_hat = tape.sym_normalize(*a)?;
                tape.matmul(a_hat, x)
            }
        }
    }

    /// Raw `A·x`.
    fn multiply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Adjacency::Sparse { raw, .. } => tape.sparse_matmul(raw.clone(), x),
            Adjacency::Dense(a) => tape.matmul(*a, x),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GnnVars {
    pub weight: Var,
    pub bias: Var,
}

/// Graph convolution `Â·X·W + b`, followed by ReLU when `relu`.
pub fn gnn_forward(tape: &mut Tape, adjacency: &Adjacency, x: Var, layer: GnnVars, relu: bool) -> Result<Var> {
    let n = adjacency.n_nodes(tape);
    if tape.value(x).rows() != n {
        return Err(Error::shape("gnn_forward", &[n, n], tape.value(x).shape()));
    }
    let ax = adjacency.propagate(tape, x)?;
    let axw = tape.matmul(ax, layer.weight)?;
    let out = tape.add_row(axw, layer.bias)?;
    Ok(if relu { tape.relu(out) } else { out })
}

/// `X' = SᵀZ`, `A' = SᵀAS`.
pub fn coarsen(tape: &mut Tape, adjacency: &Adjacency, z: Var, s: Var) -> Result<(Var, Var)> {
    let st = tape.transpose(s)?;
    let x_next = tape.matmul(st, z)?;
    let as_ = adjacency.multiply(tape, s)?;
    let a_next = tape.matmul(st, as_)?;
    Ok((a_next, x_next))
}

#[derive(Clone, Copy, Debug)]
pub struct LevelOutput {
    pub adjacency: Var,
    pub features: Var,
    pub assignment: Var,
}

/// One pooling level. `pool = None` assigns every node to a single cluster.
pub fn diffpool_level(tape: &mut Tape, adjacency: &Adjacency, x: Var, embed: GnnVars, pool: Option<GnnVars>) -> Result<LevelOutput> {
    let z = gnn_forward(tape, adjacency, x, embed, true)?;
    let s = match pool {
        Some(p) => {
            // assignment logits: no ReLU ahead of the softmax
            let logits = gnn_forward(tape, adjacency, x, p, false)?;
            tape.softmax_rows(logits)?
        }
        None => tape.constant(Tensor::filled(&[adjacency.n_nodes(tape), 1], 1.0)),
    };
    let (a, f) = coarsen(tape, adjacency, z, s)?;
    Ok(LevelOutput {
        adjacency: a,
        features: f,
        assignment: s,
    })
}

/// Two-level DiffPool encoder with a time-step classifier head.
///
/// Level 0 pools the snapshot graph into `clusters[0]` soft clusters; level 1
/// pools those into one, whose features are the embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffPoolModel {
    pub schema_version: u32,
    pub config: EncoderConfig,
    pub n_features: usize,
    pub clusters: Vec<usize>,
    pub n_classes: usize,
    pub params: ParamSet,
}

pub(crate) struct EncoderVars {
    embed0: GnnVars,
    pool0: GnnVars,
    embed1: GnnVars,
    head_w: Var,
    head_b: Var,
}

impl EncoderVars {
    fn from_vars(v: Vec<Var>) -> Self {
        EncoderVars {
            embed0: GnnVars { weight: v[0], bias: v[1] },
            pool0: GnnVars { weight: v[2], bias: v[3] },
            embed1: GnnVars { weight: v[4], bias: v[5] },
            head_w: v[6],
            head_b: v[7],
        }
    }
}

fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl DiffPoolModel {
    pub fn new(config: EncoderConfig, n_nodes: usize, n_features: usize, n_classes: usize) -> Result<Self> {
        config.validate()?;
        if n_features == 0 || n_classes == 0 {
            return Err(Error::Config("encoder needs features and classes".into()));
        }
        let n1 = config.first_clusters(n_nodes);
        let (h, k) = (config.hidden_dim, config.embed_dim);
        let mut rng = stream_rng(config.seed, Domain::Init, 0, 0, 0);
        let mut params = ParamSet::new();
        params.insert_uniform("embed0.weight", &[n_features, h], glorot(n_features, h), &mut rng);
        params.insert("embed0.bias", Tensor::zeros(&[1, h]));
        params.insert_uniform("pool0.weight", &[n_features, n1], glorot(n_features, n1), &mut rng);
        params.insert("pool0.bias", Tensor::zeros(&[1, n1]));
        params.insert_uniform("embed1.weight", &[h, k], glorot(h, k), &mut rng);
        params.insert("embed1.bias", Tensor::zeros(&[1, k]));
        params.insert_uniform("head.weight", &[k, n_classes], glorot(k, n_classes), &mut rng);
        params.insert("head.bias", Tensor::zeros(&[1, n_classes]));
        Ok(DiffPoolModel {
            schema_version: ENCODER_SCHEMA_VERSION,
            config,
            n_features,
            clusters: vec![n1, 1],
            n_classes,
            params,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != ENCODER_SCHEMA_VERSION {
            return Err(Error::parse("schema_version", format!("unsupported encoder version {}", self.schema_version)));
        }
        let (f, h, k, n1, c) = (
            self.n_features,
            self.config.hidden_dim,
            self.config.embed_dim,
            self.clusters.first().copied().unwrap_or(0),
            self.n_classes,
        );
        if self.clusters.len() != 2 || self.clusters[1] != 1 || n1 < 2 {
            return Err(Error::parse("clusters", format!("expected [n1 > 1, 1], found {:?}", self.clusters)));
        }
        let expected: Vec<(String, Vec<usize>)> = [
            ("embed0.weight", vec![f, h]),
            ("embed0.bias", vec![1, h]),
            ("pool0.weight", vec![f, n1]),
            ("pool0.bias", vec![1, n1]),
            ("embed1.weight", vec![h, k]),
            ("embed1.bias", vec![1, k]),
            ("head.weight", vec![k, c]),
            ("head.bias", vec![1, c]),
        ]
        .into_iter()
        .map(|(n, s)| (n.to_string(), s))
        .collect();
        self.params.check_layout(&expected)
    }

    pub(crate) fn bind(&self, tape: &mut Tape, trainable: bool) -> EncoderVars {
        EncoderVars::from_vars(self.params.bind(tape, trainable))
    }

    /// Mean cross-entropy of the time-step head over `batch`, with the
    /// parameters supplied as tape vars in [`ParamSet`] order.
    pub fn classification_objective(&self, tape: &mut Tape, params: &[Var], batch: &[(&GraphInput, usize)]) -> Result<Var> {
        if params.len() != self.params.len() {
            return Err(Error::shape("classification_objective", &[params.len()], &[self.params.len()]));
        }
        let vars = EncoderVars::from_vars(params.to_vec());
        let mut logits = Vec::with_capacity(batch.len());
        for (g, _) in batch {
            let (emb, _) = self.forward(tape, &vars, g)?;
            logits.push(self.classify(tape, &vars, emb, g.n_nodes())?);
        }
        let stacked = tape.concat_rows(&logits)?;
        let labels: Vec<usize> = batch.iter().map(|(_, l)| *l).collect();
        tape.cross_entropy(stacked, &labels)
    }

    /// Embedding `[1×K]` and the assignment matrices of both levels.
    pub(crate) fn forward(&self, tape: &mut Tape, vars: &EncoderVars, graph: &GraphInput) -> Result<(Var, [Var; 2])> {
        if graph.features.cols() != self.n_features {
            return Err(Error::shape(
                "encode_graph",
                graph.features.shape(),
                &[graph.n_nodes(), self.n_features],
            ));
        }
        let x = tape.constant((*graph.features).clone());
        let level0 = diffpool_level(tape, &Adjacency::of(graph), x, vars.embed0, Some(vars.pool0))?;
        let level1 = diffpool_level(tape, &Adjacency::Dense(level0.adjacency), level0.features, vars.embed1, None)?;
        Ok((level1.features, [level0.assignment, level1.assignment]))
    }

    /// Class logits `[1×T]` from an embedding; the embedding is scaled by
    /// 1/n_nodes so the head sees comparable magnitudes across graph sizes.
    pub(crate) fn classify(&self, tape: &mut Tape, vars: &EncoderVars, embedding: Var, n_nodes: usize) -> Result<Var> {
        let scaled = tape.scale(embedding, 1.0 / n_nodes.max(1) as f64);
        let logits = tape.matmul(scaled, vars.head_w)?;
        tape.add_row(logits, vars.head_b)
    }

    /// Final single-cluster features of one snapshot, width K.
    pub fn encode_graph(&self, graph: &GraphInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let (emb, _) = self.forward(&mut tape, &vars, graph)?;
        let out = tape.value(emb).values().to_vec();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("graph embedding".into()));
        }
        Ok(out)
    }

    /// Soft assignment matrices of both levels.
    pub fn assignments(&self, graph: &GraphInput) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let (_, s) = self.forward(&mut tape, &vars, graph)?;
        Ok(s.iter().map(|v| tape.value(*v).clone()).collect())
    }

    pub fn predict(&self, graph: &GraphInput) -> Result<usize> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let (emb, _) = self.forward(&mut tape, &vars, graph)?;
        let logits = self.classify(&mut tape, &vars, emb, graph.n_nodes())?;
        let v = tape.value(logits).values();
        Ok((0..v.len()).fold(0, |best, j| if v[j] > v[best] { j } else { best }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize, features: usize) -> GraphInput {
        let mut a = Tensor::zeros(&[n, n]);
        for i in 0..n - 1 {
            a.values_mut()[i * n + i + 1] = 1.0;
            a.values_mut()[(i + 1) * n + i] = 1.0;
        }
        let x = Tensor::matrix(n, features, (0..n * features).map(|v| ((v * 7) % 5) as f64 / 5.0).collect()).unwrap();
        GraphInput::from_dense(&a, x).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let g = path_graph(5, 3);
        let mut tape = Tape::new();
        let x = tape.constant((*g.features).clone());
        let layer = GnnVars {
            weight: tape.leaf(Tensor::zeros(&[3, 4])),
            bias: tape.leaf(Tensor::zeros(&[1, 4])),
        };
        let z = gnn_forward(&mut tape, &Adjacency::of(&g), x, layer, true).unwrap();
        assert!(tape.value(z).values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn isolated_node_sees_only_itself() {
        let g = GraphInput::from_dense(&Tensor::zeros(&[1, 1]), Tensor::matrix(1, 2, vec![1.0, -2.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant((*g.features).clone());
        let layer = GnnVars {
            weight: tape.leaf(Tensor::matrix(2, 2, vec![1.0, 0.5, 0.25, -1.0]).unwrap()),
            bias: tape.leaf(Tensor::matrix(1, 2, vec![0.1, 0.1]).unwrap()),
        };
        let z = gnn_forward(&mut tape, &Adjacency::of(&g), x, layer, true).unwrap();
        // relu(x·W + b) = relu([1 - 0.5 + 0.1, 0.5 + 2 + 0.1])
        assert_eq!(tape.value(z).values(), &[0.6, 2.6]);
    }

    #[test]
    fn identity_assignment_is_fixed_point() {
        let g = path_graph(4, 2);
        let mut tape = Tape::new();
        let z = tape.constant((*g.features).clone());
        let s = tape.constant(Tensor::identity(4));
        let (a, x) = coarsen(&mut tape, &Adjacency::of(&g), z, s).unwrap();
        assert_eq!(tape.value(a), &g.adjacency.to_dense());
        assert_eq!(tape.value(x), &*g.features);
    }

    #[test]
    fn single_cluster_sums_everything() {
        let g = path_graph(4, 2);
        let mut tape = Tape::new();
        let z = tape.constant((*g.features).clone());
        let s = tape.constant(Tensor::filled(&[4, 1], 1.0));
        let (a, x) = coarsen(&mut tape, &Adjacency::of(&g), z, s).unwrap();
        assert_eq!(tape.value(a).item(), 6.0);
        let col_sums: Vec<f64> = (0..2).map(|j| (0..4).map(|i| g.features.get(i, j)).sum()).collect();
        assert_eq!(tape.value(x).values(), col_sums.as_slice());
    }

    #[test]
    fn schedule_and_shapes() {
        let cfg = EncoderConfig { embed_dim: 8, max_clusters: 16, ..Default::default() };
        assert_eq!(cfg.first_clusters(6), 4);
        assert_eq!(cfg.first_clusters(40), 10);
        assert_eq!(cfg.first_clusters(2030), 16);
        let m = DiffPoolModel::new(cfg, 5, 3, 4).unwrap();
        m.validate().unwrap();
        let emb = m.encode_graph(&path_graph(5, 3)).unwrap();
        assert_eq!(emb.len(), 8);
        for s in m.assignments(&path_graph(5, 3)).unwrap() {
            for i in 0..s.rows() {
                let row: f64 = (0..s.cols()).map(|j| s.get(i, j)).sum();
                assert!((row - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn feature_width_mismatch_rejected() {
        let m = DiffPoolModel::new(EncoderConfig { embed_dim: 4, ..Default::default() }, 5, 3, 2).unwrap();
        assert!(m.encode_graph(&path_graph(5, 2)).is_err());
    }
}
