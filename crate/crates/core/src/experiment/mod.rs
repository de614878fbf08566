//! Experiment configuration and the train / analyze / ablate / report /
//! convert drivers behind the command-line tool.

mod commands;
mod report;
mod table;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::augment::{Condition, ProtocolConfig};
use crate::data::{
    load_cifar, load_tiny_imagenet, stratified_split, stratified_subset, synthetic_dataset, CifarVariant, Dataset,
    SplitSpec,
};
use crate::model::ModelConfig;
use crate::seed;
use crate::train::OptimSpec;

pub use commands::{
    analyze, analyze_model, condition_slug, convert_tiny_imagenet, run_ablation, train, AblationOutcome,
    AnalysisSummary, TrainRun,
};
pub use report::{read_ablation_summary, read_head_metrics, write_report, AblationRow, HeadRow, ReportFiles};
pub use table::{fmt_float, write_csv};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Run(String),
    #[error("analysis error: {0}")]
    Analysis(String),
}

impl ExperimentError {
    /// 2 config, 3 run failure, 4 analysis.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Run(_) => 3,
            ExperimentError::Analysis(_) => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Cifar10 {
        path: PathBuf,
        #[serde(default)]
        train_subset: Option<usize>,
    },
    Cifar100 {
        path: PathBuf,
        #[serde(default)]
        train_subset: Option<usize>,
    },
    TinyImagenet {
        path: PathBuf,
        #[serde(default)]
        train_subset: Option<usize>,
    },
    Synthetic {
        n_per_class: usize,
        n_classes: usize,
        size: usize,
        test_per_class: usize,
    },
}

impl DatasetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::Cifar10 { .. } => "cifar10",
            DatasetSpec::Cifar100 { .. } => "cifar100",
            DatasetSpec::TinyImagenet { .. } => "tiny-imagenet",
            DatasetSpec::Synthetic { .. } => "synthetic",
        }
    }

    /// `(image_size, n_classes)`.
    pub fn geometry(&self) -> (usize, usize) {
        match self {
            DatasetSpec::Cifar10 { .. } => (32, 10),
            DatasetSpec::Cifar100 { .. } => (32, 100),
            DatasetSpec::TinyImagenet { .. } => (64, 200),
            DatasetSpec::Synthetic { n_classes, size, .. } => (*size, *n_classes),
        }
    }
}

/// Train, validation and test splits of one dataset.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl DatasetSpec {
    /// Loads the training pool (optionally subsampled), splits it
    /// stratified into train/val and loads the held-out test split.
    pub fn load(&self, train_fraction: f64, seed_value: u64) -> Result<Splits, ExperimentError> {
        let run = |e: crate::data::DataError| ExperimentError::Run(e.to_string());
        let (pool, test, subset) = match self {
            DatasetSpec::Cifar10 { path, train_subset } | DatasetSpec::Cifar100 { path, train_subset } => {
                let v = if matches!(self, DatasetSpec::Cifar10 { .. }) {
                    CifarVariant::Cifar10
                } else {
                    CifarVariant::Cifar100
                };
                (load_cifar(path, v, true).map_err(run)?, load_cifar(path, v, false).map_err(run)?, *train_subset)
            }
            DatasetSpec::TinyImagenet { path, train_subset } => (
                load_tiny_imagenet(path, true).map_err(run)?,
                load_tiny_imagenet(path, false).map_err(run)?,
                *train_subset,
            ),
            DatasetSpec::Synthetic {
                n_per_class,
                n_classes,
                size,
                test_per_class,
            } => (
                synthetic_dataset(*n_per_class, *n_classes, *size, seed::derive_seed(seed_value, "synthetic-train", &[])),
                synthetic_dataset(*test_per_class, *n_classes, *size, seed::derive_seed(seed_value, "synthetic-test", &[])),
                None,
            ),
        };
        let pool = match subset {
            Some(n) => stratified_subset(&pool, n, seed_value),
            None => pool,
        };
        let (train, val) = stratified_split(
            &pool,
            &SplitSpec {
                train_fraction,
                seed: seed_value,
            },
        )
        .map_err(run)?;
        Ok(Splits { train, val, test })
    }
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_eval_samples() -> usize {
    5000
}

fn default_eval_batch() -> usize {
    256
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub protocol: ProtocolConfig,
    pub optim: OptimSpec,
    pub seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Images sampled from the test split for attention analysis; clipped
    /// to the split size.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Desk-scale setup: L=4, D=64, H=4 on 16×16 synthetic images with a
    /// 4×4 patch grid and 10 classes, 30 epochs.
    pub fn desk() -> Self {
        Self {
            dataset: DatasetSpec::Synthetic {
                n_per_class: 50,
                n_classes: 10,
                size: 16,
                test_per_class: 20,
            },
            model: ModelConfig::desk(16, 4, 10),
            protocol: Condition::Modern.protocol(16),
            optim: OptimSpec::desk(),
            seed: seed::DEFAULT_SEED,
            train_fraction: 0.8,
            eval_samples: 200,
            eval_batch_size: 100,
            out_dir: PathBuf::from("runs/desk"),
        }
    }

    /// Full-scale CIFAR-10 setup: L=8, D=192, H=8, 8×8 grid.
    pub fn paper() -> Self {
        Self {
            dataset: DatasetSpec::Cifar10 {
                path: PathBuf::from("data/cifar-10-batches-bin"),
                train_subset: None,
            },
            model: ModelConfig::paper(32, 10),
            protocol: Condition::Modern.protocol(32),
            optim: OptimSpec::cifar(),
            seed: seed::DEFAULT_SEED,
            train_fraction: 0.8,
            eval_samples: 5000,
            eval_batch_size: 256,
            out_dir: PathBuf::from("runs/paper"),
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    /// Preset values overlaid with a (possibly partial) JSON document.
    /// Objects merge recursively; everything else replaces.
    pub fn from_overrides(base: &ExperimentConfig, overrides: &Value) -> Result<Self, ExperimentError> {
        let mut v = serde_json::to_value(base).map_err(|e| ExperimentError::Config(e.to_string()))?;
        merge(&mut v, overrides);
        serde_json::from_value(v).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(base: &ExperimentConfig, path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let overrides: Value =
            serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_overrides(base, &overrides)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg = |e: String| ExperimentError::Config(e);
        self.model.validate().map_err(|e| cfg(e.to_string()))?;
        self.protocol.validate().map_err(|e| cfg(e.to_string()))?;
        self.optim.validate().map_err(|e| cfg(e.to_string()))?;
        let (size, classes) = self.dataset.geometry();
        if size != self.model.image_size || classes != self.model.n_classes {
            return Err(cfg(format!(
                "dataset {} is {size}x{size} with {classes} classes but the model expects {}x{} with {}",
                self.dataset.name(),
                self.model.image_size,
                self.model.image_size,
                self.model.n_classes
            )));
        }
        if self.model.grid_side() < 2 {
            return Err(cfg("patch grid must be at least 2x2 for attention metrics".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(cfg(format!("train_fraction {} outside (0, 1)", self.train_fraction)));
        }
        if self.eval_samples == 0 || self.eval_batch_size == 0 {
            return Err(cfg("eval_samples and eval_batch_size must be >= 1".into()));
        }
        Condition::from_name(&self.protocol.name).map_err(|e| cfg(e.to_string()))?;
        Ok(())
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    // Variant tags change the meaning of sibling fields, so a
                    // tagged object is replaced wholesale.
                    Some(slot) if v.get("kind").is_none() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}
