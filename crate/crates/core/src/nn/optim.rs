use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    Adagrad { lr: f64, eps: f64 },
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn adagrad(lr: f64) -> Self {
        OptimizerConfig::Adagrad { lr, eps: 1e-10 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::Sgd { lr, momentum } => lr > 0.0 && (0.0..1.0).contains(&momentum),
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
            OptimizerConfig::Adagrad { lr, eps } => lr > 0.0 && eps > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Optimizer state for a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &[Tensor]) -> Result<Self> {
        config.validate()?;
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect::<Vec<_>>();
        Ok(Optimizer {
            config,
            first: zeros(),
            second: zeros(),
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape("Optimizer::step", &[params.len()], &[grads.len()]));
        }
        self.steps += 1;
        let t = self.steps as f64;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape("Optimizer::step", p.shape(), g.shape()));
            }
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            let pv = p.values_mut();
            match self.config {
                OptimizerConfig::Sgd { lr, momentum } => {
                    for ((w, &gi), mi) in pv.iter_mut().zip(g.values()).zip(m.iter_mut()) {
                        *mi = momentum * *mi + gi;
                        *w -= lr * *mi;
                    }
                }
                OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                    let (c1, c2) = (1.0 - beta1.powf(t), 1.0 - beta2.powf(t));
                    for (i, (w, &gi)) in pv.iter_mut().zip(g.values()).enumerate() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
                OptimizerConfig::Adagrad { lr, eps } => {
                    for ((w, &gi), acc) in pv.iter_mut().zip(g.values()).zip(v.iter_mut()) {
                        *acc += gi * gi;
                        *w -= lr * gi / (acc.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale_assign(s));
    }
    norm
}
