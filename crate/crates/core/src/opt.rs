//! AdamW with decoupled weight decay and a linear-warmup / cosine-decay
//! learning-rate schedule, plus global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Update hyperparameters. The cosine horizon (total step budget) is
/// supplied when the state is created since it belongs to the run, not the
/// rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_peak_lr")]
    pub peak_lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Fraction of the total budget spent in linear warmup.
    #[serde(default = "default_warmup_frac")]
    pub warmup_frac: f64,
    /// Global gradient-norm cap applied before the update.
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
}

fn default_peak_lr() -> f64 {
    1e-4
}
fn default_weight_decay() -> f64 {
    0.05
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_warmup_frac() -> f64 {
    0.05
}
fn default_clip_norm() -> f64 {
    1.0
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            peak_lr: default_peak_lr(),
            weight_decay: default_weight_decay(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            warmup_frac: default_warmup_frac(),
            clip_norm: default_clip_norm(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::ConfigError("peak_lr must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::ConfigError("weight_decay must be >= 0".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::ConfigError(format!("{name} must be in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::ConfigError("eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::ConfigError("warmup_frac must be in [0, 1)".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::ConfigError("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Per-parameter moment accumulators plus the schedule position. Moments
/// are indexed in `ParamStore` registration order.
pub struct OptimizerState {
    cfg: OptimizerConfig,
    total_steps: usize,
    warmup_steps: usize,
    step: usize,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(cfg: OptimizerConfig, total_steps: usize, store: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        if total_steps == 0 {
            return Err(Error::ConfigError("total_steps must be >= 1".into()));
        }
        let warmup_steps = (cfg.warmup_frac * total_steps as f64).round() as usize;
        let zeros: Vec<Tensor> = store
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Ok(Self {
            cfg,
            total_steps,
            warmup_steps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// Schedule value for the update with 0-based index `step`: linear from
    /// 0 to the peak over the warmup, then cosine to 0 at the horizon.
    pub fn learning_rate(&self, step: usize) -> f64 {
        if step >= self.total_steps {
            return 0.0;
        }
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.cfg.peak_lr * step as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - self.warmup_steps).max(1);
        let frac = (step - self.warmup_steps) as f64 / span as f64;
        self.cfg.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    }

    /// Learning rate the next `optimizer_step` call will use.
    pub fn next_lr(&self) -> f64 {
        self.learning_rate(self.step)
    }
}

/// Scales all gradients by `cap / norm` when the global L2 norm exceeds
/// `cap`; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], cap: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum();
    let norm = sq.sqrt();
    if norm > cap && norm > 0.0 {
        let s = cap / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// One bias-corrected AdamW update over every parameter. `grads` must be
/// in store order with matching shapes. Weight decay is decoupled: it
/// scales parameters directly by `lr * weight_decay` outside the moment
/// path. Returns the learning rate that was applied.
pub fn optimizer_step(
    state: &mut OptimizerState,
    store: &mut ParamStore,
    grads: &[Tensor],
) -> Result<f64> {
    if grads.len() != store.len() {
        return Err(Error::ShapeMismatch {
            op: "optimizer_step",
            detail: format!("{} gradients for {} parameters", grads.len(), store.len()),
        });
    }
    for (i, g) in grads.iter().enumerate() {
        let p = &store.tensors()[i];
        if !p.same_shape(g) {
            return Err(Error::ShapeMismatch {
                op: "optimizer_step",
                detail: format!(
                    "gradient {} is {}x{}, parameter is {}x{}",
                    store.name(crate::nn::ParamId(i)),
                    g.rows(),
                    g.cols(),
                    p.rows(),
                    p.cols()
                ),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                name: store.name(crate::nn::ParamId(i)).to_string(),
                step: state.step,
            });
        }
    }

    let lr = state.next_lr();
    let k = (state.step + 1) as i32;
    let c1 = 1.0 - state.cfg.beta1.powi(k);
    let c2 = 1.0 - state.cfg.beta2.powi(k);
    let (b1, b2, eps, wd) = (
        state.cfg.beta1,
        state.cfg.beta2,
        state.cfg.eps,
        state.cfg.weight_decay,
    );
    for (i, g) in grads.iter().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = store.tensors_mut()[i].data_mut();
        for (j, &gj) in g.data().iter().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * p[j]);
        }
    }
    for (i, p) in store.tensors().iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::NonFiniteGradient {
                name: store.name(crate::nn::ParamId(i)).to_string(),
                step: state.step,
            });
        }
    }
    state.step += 1;
    Ok(lr)
}
