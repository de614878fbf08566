//! Soft-target cross-entropy, AdamW, warmup + cosine schedule, early
//! stopping and the training loop with resumable checkpoints.

mod checkpoint;
mod optim;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{apply_protocol, ProtocolConfig};
use crate::data::{batch_iter, normalize_in_place, DataError, Dataset};
use crate::model::{argmax_rows, ModelError, Vit};
use crate::seed;
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use optim::{adamw_step, lr_at_epoch, EarlyStopper, Observation, OptimSpec, OptimizerState};

/// Target rows must sum to 1 within this tolerance.
pub const TARGET_ROW_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Diverged {
        epoch: usize,
        batch: usize,
        reason: String,
        /// Completed epochs before the failure.
        history: Vec<EpochRecord>,
    },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// `−(1/B)·Σ_b Σ_c target·log_softmax(logits)`. Targets are constants and
/// every row must sum to 1.
pub fn cross_entropy_soft<T: Scalar>(tape: &mut Tape<T>, logits: Var, targets: &Tensor<T>) -> Result<Var, TensorError> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || targets.shape() != shape.as_slice() {
        return Err(TensorError::Shape {
            op: "cross_entropy_soft",
            lhs: shape,
            rhs: targets.shape().to_vec(),
        });
    }
    let (b, c) = (shape[0], shape[1]);
    for (i, row) in targets.data().chunks(c.max(1)).enumerate() {
        let s: f64 = row.iter().map(|v| v.as_f64()).sum();
        if (s - 1.0).abs() > TARGET_ROW_TOLERANCE {
            return Err(TensorError::Contract(format!("target row {i} sums to {s}, expected 1")));
        }
    }
    let t = tape.constant(targets.clone());
    let logp = tape.log_softmax_rows(logits)?;
    let prod = tape.mul(logp, t)?;
    let total = tape.sum(prod);
    Ok(tape.scale(total, -1.0 / b as f64))
}

/// One row of the training history; `epoch` is 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub best_val_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub protocol: ProtocolConfig,
    pub optim: OptimSpec,
    pub seed: u64,
    pub eval_batch_size: usize,
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions<T> {
    /// If set, `best.ckpt` and `last.ckpt` are written here after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from a `last` checkpoint.
    pub resume: Option<Checkpoint<T>>,
    /// Stop after this many total epochs (for interrupted-run tests and
    /// staged runs); the schedule still uses `max_epochs`.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    /// Model holding the best-validation parameters.
    pub model: Vit<T>,
    pub best: Checkpoint<T>,
    pub last: Checkpoint<T>,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Fraction of `ds` classified correctly, evaluated in order without
/// augmentation.
pub fn evaluate_accuracy<T: Scalar>(model: &Vit<T>, ds: &Dataset, batch_size: usize) -> Result<f64, TrainError> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let mut batch = ds.unit_batch(chunk);
        normalize_in_place(&mut batch, &ds.norm);
        let pred = model.predict(&batch.to_tensor::<T>())?;
        correct += pred.iter().zip(chunk).filter(|(p, &i)| **p == usize::from(ds.labels[i])).count();
    }
    Ok(correct as f64 / ds.len() as f64)
}

struct Step {
    loss: f64,
}

/// Forward, loss, backward and one AdamW update on a prepared batch.
fn train_step<T: Scalar>(
    model: &mut Vit<T>,
    state: &mut OptimizerState<T>,
    spec: &OptimSpec,
    images: &Tensor<T>,
    targets: &Tensor<T>,
    lr: f64,
) -> Result<Step, TrainError> {
    let mut pass = model.forward(images, false)?;
    let loss = cross_entropy_soft(&mut pass.tape, pass.logits, targets)?;
    let value = pass.tape.value(loss).item().as_f64();
    if !value.is_finite() {
        return Err(TrainError::Numeric(format!("loss is {value}")));
    }
    pass.tape.backward(loss)?;
    let grads: Vec<&[T]> = pass
        .params
        .iter()
        .map(|&v| pass.tape.grad(v).expect("parameters require grad"))
        .collect();
    adamw_step(model.params_mut(), &grads, state, spec, lr)?;
    Ok(Step { loss: value })
}

fn make_checkpoint<T: Scalar>(
    model: &Vit<T>,
    state: &OptimizerState<T>,
    cfg: &FitConfig,
    stopper: &EarlyStopper,
    history: &[EpochRecord],
    best_params: Option<&crate::model::ParamStore<T>>,
) -> Checkpoint<T> {
    Checkpoint {
        meta: CheckpointMeta {
            tool_version: crate::TOOL_VERSION.to_string(),
            model: model.config().clone(),
            protocol: cfg.protocol.clone(),
            optim: cfg.optim.clone(),
            seed: cfg.seed,
            epochs_completed: history.len(),
            best_val_acc: stopper.best,
            best_epoch: stopper.best_epoch,
            stopper: stopper.clone(),
            history: history.to_vec(),
            decay: model.params().entries.iter().map(|p| p.decay).collect(),
            adam_t: state.t,
        },
        params: model.params().clone(),
        optimizer: state.clone(),
        best_params: best_params.cloned(),
    }
}

/// Trains `model` on `train` under `cfg.protocol`, tracking validation
/// accuracy on `val`. Each batch draws its augmentation from the stream
/// `(seed, "augment", [epoch, batch])` and the batch order from
/// `(seed, "batch", [epoch])`, so a run is a pure function of its inputs and
/// resuming reproduces the uninterrupted trajectory.
pub fn fit<T: Scalar>(
    train: &Dataset,
    val: &Dataset,
    mut model: Vit<T>,
    cfg: &FitConfig,
    opts: FitOptions<T>,
) -> Result<FitOutcome<T>, TrainError> {
    cfg.optim.validate()?;
    cfg.protocol.validate().map_err(|e| TrainError::Config(e.to_string()))?;
    let mc = model.config().clone();
    for ds in [train, val] {
        if ds.size != mc.image_size || ds.channels != mc.channels || ds.n_classes != mc.n_classes {
            return Err(TrainError::Config(format!(
                "dataset {} ({}x{}x{}, {} classes) does not fit the model ({}x{}x{}, {} classes)",
                ds.name, ds.channels, ds.size, ds.size, ds.n_classes, mc.channels, mc.image_size, mc.image_size, mc.n_classes
            )));
        }
    }
    if train.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }

    let mut state = OptimizerState::new(model.params());
    let mut stopper = EarlyStopper::new(cfg.optim.patience);
    let mut history = Vec::new();
    let mut best_params = model.params().clone();
    if let Some(ck) = opts.resume {
        model = Vit::from_params(ck.meta.model.clone(), ck.params)?;
        state = ck.optimizer;
        stopper = ck.meta.stopper;
        history = ck.meta.history;
        best_params = ck.best_params.unwrap_or_else(|| model.params().clone());
    }
    let start = history.len();
    let end = opts.stop_after.unwrap_or(cfg.optim.max_epochs).min(cfg.optim.max_epochs);
    let mut best_ckpt = make_checkpoint(&model, &state, cfg, &stopper, &history, None);
    best_ckpt.params = best_params.clone();
    let mut stopped_early = stopper.patience > 0 && stopper.since_best >= stopper.patience && start > 0;

    let mut epoch = start;
    while epoch < end && !stopped_early {
        let lr = lr_at_epoch(epoch, &cfg.optim);
        let mut loss_sum = 0.0;
        for (bi, idx) in batch_iter(train.len(), cfg.optim.batch_size, cfg.seed, epoch).iter().enumerate() {
            let mut rng = seed::stream(cfg.seed, "augment", &[epoch as u64, bi as u64]);
            let labels: Vec<u16> = idx.iter().map(|&i| train.labels[i]).collect();
            let mut sb = apply_protocol(train.unit_batch(idx), &labels, train.n_classes, &cfg.protocol, &mut rng);
            normalize_in_place(&mut sb.images, &train.norm);
            let step = train_step(
                &mut model,
                &mut state,
                &cfg.optim,
                &sb.images.to_tensor(),
                &sb.targets_tensor(),
                lr,
            )
            .map_err(|e| match e {
                TrainError::Numeric(reason) => TrainError::Diverged {
                    epoch,
                    batch: bi,
                    reason,
                    history: history.clone(),
                },
                other => other,
            })?;
            loss_sum += step.loss * idx.len() as f64;
        }
        let val_acc = evaluate_accuracy(&model, val, cfg.eval_batch_size)?;
        let obs = stopper.observe(epoch, val_acc);
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_acc,
            best_val_acc: stopper.best.unwrap_or(val_acc),
            lr,
        });
        if obs.improved {
            best_params = model.params().clone();
            best_ckpt = make_checkpoint(&model, &state, cfg, &stopper, &history, None);
        }
        if let Some(dir) = &opts.checkpoint_dir {
            let last = make_checkpoint(&model, &state, cfg, &stopper, &history, Some(&best_params));
            save_checkpoint(&best_ckpt, &dir.join("best.ckpt"))?;
            save_checkpoint(&last, &dir.join("last.ckpt"))?;
        }
        log::info!(
            "epoch {epoch}: loss {:.4} val_acc {:.4} lr {:.2e}",
            history.last().map_or(0.0, |r| r.train_loss),
            val_acc,
            lr
        );
        stopped_early = obs.stop;
        epoch += 1;
    }

    let last = make_checkpoint(&model, &state, cfg, &stopper, &history, Some(&best_params));
    let best_model = Vit::from_params(mc, best_params)?;
    Ok(FitOutcome {
        model: best_model,
        best: best_ckpt,
        last,
        history,
        stopped_early,
    })
}

/// Accuracy of precomputed logits against integer labels.
pub fn accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[u16]) -> f64 {
    let pred = argmax_rows(logits);
    let ok = pred.iter().zip(labels).filter(|(p, &l)| **p == usize::from(l)).count();
    ok as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests;
