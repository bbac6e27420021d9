//! Run configuration (JSON).
//!
//! Every section has defaults, so `{}` is a valid config. Sub-config `seed`
//! fields are offsets: the seed a stage actually uses is derived from the run
//! seed and that offset.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use seirgrad::encoder::EncoderConfig;
use seirgrad::estimator::{FitConfig, PriorSpec};
use seirgrad::mobility::GeneratorConfig;
use seirgrad::rng::{derive_seed, Domain};
use seirgrad::seir::{PriorConfig, ThetaSeir};
use seirgrad::surrogate::{GraphMode, SurrogateConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
    pub output: PathBuf,
    pub dataset: DatasetConfig,
    pub simulation: SimulationConfig,
    pub encoder: EncoderConfig,
    pub surrogate: SurrogateConfig,
    pub estimation: EstimationConfig,
    pub compare: CompareConfig,
    pub ablation: AblationConfig,
    pub plots: PlotConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: None,
            output: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            simulation: SimulationConfig::default(),
            encoder: EncoderConfig::default(),
            surrogate: SurrogateConfig::default(),
            estimation: EstimationConfig::default(),
            compare: CompareConfig::default(),
            ablation: AblationConfig::default(),
            plots: PlotConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Episodes to generate when `episode_paths` is empty.
    pub n_episodes: usize,
    pub generator: GeneratorConfig,
    /// Existing episode files (with observations) used instead of generated ones.
    pub episode_paths: Vec<PathBuf>,
    /// Train / dev / test fractions.
    pub split: [f64; 3],
    /// θ that generates the observations; sampled from the prior when absent.
    pub true_theta: Option<Vec<f64>>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_episodes: 20,
            generator: GeneratorConfig::default(),
            episode_paths: Vec::new(),
            split: [0.8, 0.1, 0.1],
            true_theta: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// θ samples per simulation dataset.
    pub k: usize,
    pub replicates: usize,
    pub prior: PriorConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig { k: 100, replicates: 1, prior: PriorConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub lambda: f64,
    /// Prior center for the regularizer; the sampling prior's center when absent.
    pub prior_center: Option<Vec<f64>>,
    pub fit: FitConfig,
    /// Simulations per test episode when scoring a θ.
    pub eval_replicates: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            lambda: 0.0,
            prior_center: None,
            fit: FitConfig::default(),
            eval_replicates: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub k_grid: Vec<usize>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig { k_grid: vec![20, 100, 500] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub lambda_grid: Vec<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            lambda_grid: vec![0.0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    /// Draw 5-point moving averages instead of the raw series.
    pub smooth: bool,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig { smooth: true }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let split_sum: f64 = self.dataset.split.iter().sum();
        if (split_sum - 1.0).abs() > 1e-9 || self.dataset.split.iter().any(|f| *f < 0.0) {
            bail!("dataset.split must be non-negative and sum to 1, got {:?}", self.dataset.split);
        }
        if self.dataset.episode_paths.is_empty() {
            if self.dataset.n_episodes == 0 {
                bail!("dataset.n_episodes must be positive");
            }
            self.dataset.generator.validate()?;
        }
        for p in &self.dataset.episode_paths {
            if !p.exists() {
                bail!("episode file {} does not exist", p.display());
            }
        }
        if self.simulation.k == 0 || self.simulation.replicates == 0 || self.estimation.eval_replicates == 0 {
            bail!("simulation.k, simulation.replicates and estimation.eval_replicates must be positive");
        }
        if self.workers == Some(0) {
            bail!("workers must be positive");
        }
        self.simulation.prior.validate()?;
        self.encoder.validate()?;
        self.surrogate.validate()?;
        self.estimation.fit.validate()?;
        if self.surrogate.graph_mode != GraphMode::None && self.encoder.embed_dim != self.surrogate.hidden {
            bail!(
                "encoder.embed_dim ({}) must equal surrogate.hidden ({}) when the surrogate reads graphs",
                self.encoder.embed_dim,
                self.surrogate.hidden
            );
        }
        self.prior_spec(self.estimation.lambda)?.validate()?;
        if let Some(t) = &self.dataset.true_theta {
            ThetaSeir::from_slice(t)?.validate()?;
        }
        Ok(())
    }

    /// Seed of one stage: the run seed keyed by domain, then by the stage's own offset.
    pub fn stage_seed(&self, domain: Domain, offset: u64) -> u64 {
        derive_seed(derive_seed(self.seed, domain as u64), offset)
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig { seed: self.stage_seed(Domain::Init, self.encoder.seed), ..self.encoder.clone() }
    }

    pub fn surrogate_config(&self) -> SurrogateConfig {
        SurrogateConfig { seed: self.stage_seed(Domain::Train, self.surrogate.seed), ..self.surrogate.clone() }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig { seed: self.stage_seed(Domain::Restart, self.estimation.fit.seed), ..self.estimation.fit.clone() }
    }

    /// Box bounds and regularizer of the estimator.
    pub fn prior_spec(&self, lambda: f64) -> Result<PriorSpec> {
        let spec = PriorSpec::from_prior(&self.simulation.prior, lambda);
        Ok(match &self.estimation.prior_center {
            Some(c) => spec.with_center(&ThetaSeir::from_slice(c)?),
            None => spec,
        })
    }
}
