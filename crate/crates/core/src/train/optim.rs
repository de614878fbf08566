use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::ParamStore;
use crate::tensor::{Scalar, Tensor};

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimSpec {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Skip weight decay on LayerNorm parameters and the CLS/positional
    /// embeddings.
    #[serde(default = "default_true")]
    pub decay_exempt_norm_and_embeddings: bool,
}

impl OptimSpec {
    pub fn cifar() -> Self {
        Self {
            learning_rate: 0.002,
            weight_decay: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_epochs: 5,
            max_epochs: 600,
            batch_size: 128,
            patience: 20,
            decay_exempt_norm_and_embeddings: true,
        }
    }

    pub fn tiny_imagenet() -> Self {
        Self {
            learning_rate: 0.001,
            weight_decay: 1e-4,
            warmup_epochs: 10,
            max_epochs: 400,
            batch_size: 64,
            patience: 30,
            ..Self::cifar()
        }
    }

    /// Short schedule for desk-scale runs.
    pub fn desk() -> Self {
        Self {
            learning_rate: 0.002,
            warmup_epochs: 2,
            max_epochs: 30,
            batch_size: 32,
            patience: 30,
            ..Self::cifar()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be >= 0", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("betas must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) {
            return bad("eps must be > 0".into());
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("max_epochs and batch_size must be >= 1".into());
        }
        if self.warmup_epochs > self.max_epochs {
            return bad("warmup_epochs exceeds max_epochs".into());
        }
        Ok(())
    }
}

/// Learning rate for 0-based epoch `e`: `η·(e+1)/W` during warmup, then
/// cosine from η down to 0 at `e = T`.
pub fn lr_at_epoch(e: usize, spec: &OptimSpec) -> f64 {
    let (eta, w, t) = (spec.learning_rate, spec.warmup_epochs, spec.max_epochs);
    if e < w {
        return eta * (e + 1) as f64 / w as f64;
    }
    if t <= w {
        return eta;
    }
    let progress = (e - w) as f64 / (t - w) as f64;
    eta * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Adam moments, one pair per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.entries.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `p ← p − lr·(m̂/(√v̂ + eps) + λ·p)`. Every gradient is checked for
/// finiteness before anything is modified.
pub fn adamw_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[&[T]],
    state: &mut OptimizerState<T>,
    spec: &OptimSpec,
    lr: f64,
) -> Result<(), TrainError> {
    if !(lr >= 0.0) {
        return Err(TrainError::Config(format!("learning rate {lr} must be >= 0")));
    }
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::Config(format!(
            "{} gradients / {} moment buffers for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for (p, g) in params.entries.iter().zip(grads) {
        if g.len() != p.value.len() {
            return Err(TrainError::Config(format!("gradient length mismatch for {}", p.name)));
        }
        if let Some(bad) = g.iter().position(|x| !x.is_finite()) {
            return Err(TrainError::Numeric(format!("non-finite gradient in {} at {bad}", p.name)));
        }
    }
    state.t += 1;
    let t = state.t as f64;
    let (b1, b2) = (spec.beta1, spec.beta2);
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    for (k, (p, g)) in params.entries.iter_mut().zip(grads).enumerate() {
        let decay = if p.decay || !spec.decay_exempt_norm_and_embeddings {
            spec.weight_decay
        } else {
            0.0
        };
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (i, w) in p.value.data_mut().iter_mut().enumerate() {
            let gi = g[i].as_f64();
            let mi = b1 * m[i].as_f64() + (1.0 - b1) * gi;
            let vi = b2 * v[i].as_f64() + (1.0 - b2) * gi * gi;
            m[i] = T::from_f64(mi);
            v[i] = T::from_f64(vi);
            let mhat = mi / c1;
            let vhat = vi / c2;
            let wi = w.as_f64();
            *w = T::from_f64(wi - lr * (mhat / (vhat.sqrt() + spec.eps) + decay * wi));
        }
    }
    Ok(())
}

/// Validation-accuracy early stopping with strict improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best: Option<f64>,
    /// 0-based epoch of the best accuracy.
    pub best_epoch: Option<usize>,
    pub since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_acc: f64) -> Observation {
        let improved = self.best.is_none_or(|b| val_acc > b);
        if improved {
            self.best = Some(val_acc);
            self.best_epoch = Some(epoch);
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Observation {
            improved,
            stop: self.since_best >= self.patience && self.patience > 0,
        }
    }
}
