use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::mobility::Episode;
use crate::nn::{Optimizer, OptimizerConfig};
use crate::rng::{stream_rng, Domain};
use crate::seir::{PriorConfig, ThetaSeir, THETA_DIM};
use crate::surrogate::{PreparedEpisode, RolloutBatch, SequenceRef, SurrogateModel, SurrogateVars};

/// Box bounds plus the soft prior `λ‖θ − center‖²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub center: Vec<f64>,
    pub lambda: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl PriorSpec {
    /// Center and bounds of the sampling prior.
    pub fn from_prior(prior: &PriorConfig, lambda: f64) -> Self {
        let (lower, upper) = prior.bounds();
        PriorSpec { center: prior.center().to_vec(), lambda, lower, upper }
    }

    pub fn with_center(mut self, center: &ThetaSeir) -> Self {
        self.center = center.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("λ must be finite and non-negative, got {}", self.lambda)));
        }
        if self.center.len() != THETA_DIM || self.lower.len() != THETA_DIM || self.upper.len() != THETA_DIM {
            return Err(Error::shape("PriorSpec", &[self.center.len()], &[THETA_DIM]));
        }
        for j in 0..THETA_DIM {
            if !(self.lower[j] <= self.center[j] && self.center[j] <= self.upper[j]) {
                return Err(Error::Config(format!("prior center component {j} outside its bounds")));
            }
        }
        Ok(())
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iters: usize,
    pub optimizer: OptimizerConfig,
    pub restarts: usize,
    /// Half-width of the uniform jitter of restart inits, in scaled units.
    pub jitter: f64,
    /// Early stop when the best loss improves by less than this over `patience` iterations.
    pub tolerance: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 500,
            optimizer: OptimizerConfig::adagrad(0.05),
            restarts: 10,
            jitter: 0.25,
            tolerance: 1e-8,
            patience: 25,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.patience == 0 {
            return Err(Error::Config("restarts and patience must be positive".into()));
        }
        if self.jitter.is_nan() || self.jitter < 0.0 || self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::Config("jitter and tolerance must be non-negative".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_names: Vec<String>,
    pub theta_star: Vec<f64>,
    /// Lowest objective over restarts at each iterate, starting at the inits.
    pub loss_trace: Vec<f64>,
    /// Running minimum of `loss_trace`.
    pub best_trace: Vec<f64>,
    pub loss: f64,
    pub data_term: f64,
    pub prior_term: f64,
    pub iterations: usize,
    pub best_restart: usize,
    pub lambda: f64,
    pub config: FitConfig,
}

impl FitResult {
    pub fn theta(&self) -> Result<ThetaSeir> {
        ThetaSeir::from_slice(&self.theta_star)
    }
}

/// A prepared episode with its observed infection counts.
#[derive(Clone, Debug)]
pub struct Observed {
    pub episode: PreparedEpisode,
    pub infections: Vec<f64>,
}

pub fn observe(model: &SurrogateModel, episodes: &[&Episode]) -> Result<Vec<Observed>> {
    if episodes.is_empty() {
        return Err(Error::Contract("no episodes to fit".into()));
    }
    episodes
        .iter()
        .map(|ep| {
            let obs = ep.observations()?;
            if obs.len() != ep.n_steps() {
                return Err(Error::shape("observed infections", &[obs.len()], &[ep.n_steps()]));
            }
            Ok(Observed {
                episode: model.prepare(ep)?,
                infections: obs.iter().map(|&c| c as f64).collect(),
            })
        })
        .collect()
}

/// Per-column objective pieces on the tape, each `1 × R` for `R` candidate θ.
struct Objective {
    data: Var,
    prior: Var,
    total: Var,
}

/// Builds `mean_e (1/T_e) Σ_t (I_t − N_e Î_t)² + λ‖θ − center‖²` for each
/// column of `u` (scaled θ, `P × R`).
fn objective(model: &SurrogateModel, tape: &mut Tape, vars: &SurrogateVars, observed: &[Observed], prior: &PriorSpec, u: Var) -> Result<Objective> {
    let r = tape.value(u).cols();
    let n_eps = observed.len();
    let mut lengths: Vec<usize> = observed.iter().map(|o| o.episode.n_steps()).collect();
    lengths.sort_unstable();
    lengths.dedup();

    let mut data: Option<Var> = None;
    for t_len in lengths {
        let group: Vec<&Observed> = observed.iter().filter(|o| o.episode.n_steps() == t_len).collect();
        let g = group.len();
        // column c = restart · g + episode
        let seqs: Vec<SequenceRef> = (0..r)
            .flat_map(|_| group.iter().map(|o| SequenceRef { episode: &o.episode, initial: o.episode.initial, targets: None }))
            .collect();
        let batch = RolloutBatch::assemble(&seqs)?;
        let idx: Vec<usize> = (0..r * g).map(|c| c / g).collect();
        let theta = tape.gather_cols(u, &idx)?;
        let preds = model.rollout(tape, vars, &batch, theta, false, None)?;
        let pop = tape.constant(Tensor::matrix(1, r * g, (0..r * g).map(|c| group[c % g].episode.population).collect())?);
        let mut sq_sum: Option<Var> = None;
        for (t, p) in preds.iter().enumerate() {
            let i_hat = tape.slice_rows(*p, 2, 1)?;
            let i_hat = tape.mul(i_hat, pop)?;
            let obs = tape.constant(Tensor::matrix(1, r * g, (0..r * g).map(|c| group[c % g].infections[t]).collect())?);
            let d = tape.sub(i_hat, obs)?;
            let sq = tape.mul(d, d)?;
            sq_sum = Some(match sq_sum {
                Some(acc) => tape.add(acc, sq)?,
                None => sq,
            });
        }
        let sq_sum = sq_sum.ok_or_else(|| Error::Contract("episode without steps".into()))?;
        // sum each restart's columns, weighted by 1/(T·E)
        let mut reduce = Tensor::zeros(&[r * g, r]);
        for c in 0..r * g {
            reduce.values_mut()[c * r + c / g] = 1.0 / (t_len * n_eps) as f64;
        }
        let reduce = tape.constant(reduce);
        let part = tape.matmul(sq_sum, reduce)?;
        data = Some(match data {
            Some(acc) => tape.add(acc, part)?,
            None => part,
        });
    }
    let data = data.ok_or_else(|| Error::Contract("no episodes to fit".into()))?;

    let span = model.theta_span();
    let center_u: Vec<f64> = prior
        .center
        .iter()
        .zip(model.theta_lower.iter().zip(&span))
        .map(|(c, (lo, s))| if *s > 0.0 { (c - lo) / s } else { 0.0 })
        .collect();
    let center = tape.constant(Tensor::matrix(THETA_DIM, r, center_u.iter().flat_map(|v| std::iter::repeat_n(*v, r)).collect())?);
    let span_m = tape.constant(Tensor::matrix(THETA_DIM, r, span.iter().flat_map(|v| std::iter::repeat_n(*v, r)).collect())?);
    let du = tape.sub(u, center)?;
    let d = tape.mul(du, span_m)?;
    let sq = tape.mul(d, d)?;
    let ones = tape.constant(Tensor::filled(&[1, THETA_DIM], prior.lambda));
    let prior_term = tape.matmul(ones, sq)?;
    let total = tape.add(data, prior_term)?;
    Ok(Objective { data, prior: prior_term, total })
}

fn scaled_bounds(model: &SurrogateModel, prior: &PriorSpec) -> (Vec<f64>, Vec<f64>) {
    let span = model.theta_span();
    let to_u = |v: f64, j: usize| if span[j] > 0.0 { (v - model.theta_lower[j]) / span[j] } else { 0.0 };
    let lo = (0..THETA_DIM).map(|j| to_u(prior.lower[j], j)).collect();
    let hi = (0..THETA_DIM).map(|j| to_u(prior.upper[j], j)).collect();
    (lo, hi)
}

/// Value of the fitting objective at `theta` and its gradient with respect to θ.
pub fn objective_value_and_grad(model: &SurrogateModel, observed: &[Observed], theta: &ThetaSeir, prior: &PriorSpec) -> Result<(f64, Vec<f64>)> {
    prior.validate()?;
    let mut tape = Tape::new();
    let (vars, _) = model.bind(&mut tape, false)?;
    let u = tape.leaf(Tensor::column(model.scale_theta(theta))?);
    let obj = objective(model, &mut tape, &vars, observed, prior, u)?;
    let loss = tape.sum(obj.total);
    let grads = tape.backward(loss)?;
    let span = model.theta_span();
    let g = grads
        .get(u)
        .values()
        .iter()
        .zip(&span)
        .map(|(g, s)| if *s > 0.0 { g / s } else { 0.0 })
        .collect();
    Ok((tape.value(loss).item(), g))
}

/// Fits θ to the observed infections through the frozen surrogate.
///
/// All restarts run together as columns of one batch; each column has its own
/// adaptive step sizes, so they evolve independently. Every iterate is
/// projected onto the box bounds and the best iterate over all restarts wins.
pub fn fit_theta(model: &SurrogateModel, episodes: &[&Episode], init: Option<&ThetaSeir>, prior: &PriorSpec, config: &FitConfig) -> Result<FitResult> {
    prior.validate()?;
    config.validate()?;
    let observed = observe(model, episodes)?;
    fit_observed(model, &observed, init, prior, config)
}

pub fn fit_observed(model: &SurrogateModel, observed: &[Observed], init: Option<&ThetaSeir>, prior: &PriorSpec, config: &FitConfig) -> Result<FitResult> {
    prior.validate()?;
    config.validate()?;
    let r = config.restarts;
    let (lo, hi) = scaled_bounds(model, prior);
    let start = match init {
        Some(theta) => theta.clone(),
        None if prior.lambda > 0.0 => ThetaSeir::from_slice(&prior.center)?,
        None => ThetaSeir::from_slice(&prior.midpoint())?,
    };
    let u0 = model.scale_theta(&start);
    let mut u = Tensor::zeros(&[THETA_DIM, r]);
    for k in 0..r {
        let mut rng = stream_rng(config.seed, Domain::Restart, 0, k, 0);
        for j in 0..THETA_DIM {
            let jitter = if k == 0 { 0.0 } else { rng.random_range(-1.0..=1.0) * config.jitter };
            u.values_mut()[j * r + k] = (u0[j] + jitter).clamp(lo[j], hi[j]);
        }
    }

    let mut opt = Optimizer::new(config.optimizer.clone(), std::slice::from_ref(&u))?;
    let mut loss_trace = Vec::new();
    let mut best_trace: Vec<f64> = Vec::new();
    let mut best = (f64::INFINITY, 0usize, Vec::new(), 0.0, 0.0);
    let mut iterations = 0;
    loop {
        let mut tape = Tape::new();
        let (vars, _) = model.bind(&mut tape, false)?;
        let uv = tape.leaf(u.clone());
        let obj = objective(model, &mut tape, &vars, observed, prior, uv)?;
        let totals = tape.value(obj.total).values().to_vec();
        if totals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("fit objective at iteration {iterations}; loss trace so far {loss_trace:?}")));
        }
        let (k, &current) = totals
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("at least one restart");
        if current < best.0 {
            let col: Vec<f64> = (0..THETA_DIM).map(|j| u.get(j, k)).collect();
            best = (current, k, col, tape.value(obj.data).values()[k], tape.value(obj.prior).values()[k]);
        }
        loss_trace.push(current);
        best_trace.push(best.0);

        let n = best_trace.len();
        let stalled = n > config.patience && best_trace[n - 1 - config.patience] - best_trace[n - 1] < config.tolerance;
        if iterations >= config.max_iters || stalled {
            break;
        }
        let loss = tape.sum(obj.total);
        let grads = tape.backward(loss)?;
        opt.step(std::slice::from_mut(&mut u), &[grads.get(uv)])?;
        for j in 0..THETA_DIM {
            for c in 0..r {
                let v = &mut u.values_mut()[j * r + c];
                *v = v.clamp(lo[j], hi[j]);
            }
        }
        iterations += 1;
    }

    let (loss, best_restart, u_best, data_term, prior_term) = best;
    Ok(FitResult {
        theta_names: ThetaSeir::component_names(),
        theta_star: model.unscale_theta(&u_best)?.to_vec(),
        loss_trace,
        best_trace,
        loss,
        data_term,
        prior_term,
        iterations,
        best_restart,
        lambda: prior.lambda,
        config: config.clone(),
    })
}
