use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::report::{write_ablation_summary, write_head_metrics, write_report, AblationRow, HeadRow, ReportFiles};
use super::table::{fmt_float, write_csv};
use super::{ExperimentConfig, ExperimentError};
use crate::augment::Condition;
use crate::data::{load_tiny_imagenet, sample_indices, write_packed, Dataset};
use crate::metrics::{aggregate_over_images, summarize, GridGeometry, HeadPos};
use crate::model::Vit;
use crate::train::{
    decode_checkpoint, evaluate_accuracy, fit, load_checkpoint, EpochRecord, FitConfig, FitOptions, TrainError,
};
use crate::TOOL_VERSION;

fn run_err(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Run(e.to_string())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Run(format!("{}: {e}", path.display()))
}

/// Directory-safe condition name.
pub fn condition_slug(c: Condition) -> &'static str {
    match c {
        Condition::Baseline => "baseline",
        Condition::PlusAutoaugment => "plus_autoaugment",
        Condition::PlusCutmix => "plus_cutmix",
        Condition::PlusLabelsmoothing => "plus_labelsmoothing",
        Condition::MinusLabelsmoothing => "minus_labelsmoothing",
        Condition::MinusCutmix => "minus_cutmix",
        Condition::MinusAutoaugment => "minus_autoaugment",
        Condition::Modern => "modern",
    }
}

#[derive(Serialize)]
struct Resolved<'a> {
    tool_version: &'a str,
    /// Epochs in history, checkpoints and the schedule count from 0.
    epoch_convention: &'a str,
    config: &'a ExperimentConfig,
}

fn write_resolved(cfg: &ExperimentConfig, dir: &Path) -> Result<(), ExperimentError> {
    let doc = Resolved {
        tool_version: TOOL_VERSION,
        epoch_convention: "0-based",
        config: cfg,
    };
    let path = dir.join("config.json");
    let text = serde_json::to_string_pretty(&doc).map_err(run_err)?;
    std::fs::write(&path, text + "\n").map_err(io_err(&path))
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<(), ExperimentError> {
    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|r| {
            vec![
                r.epoch.to_string(),
                fmt_float(r.train_loss),
                fmt_float(r.val_acc),
                fmt_float(r.best_val_acc),
                fmt_float(r.lr),
            ]
        })
        .collect();
    write_csv(path, &["epoch", "train_loss", "val_acc", "best_val_acc", "lr"], &rows)
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub out_dir: PathBuf,
    pub history: Vec<EpochRecord>,
    pub best_checkpoint: PathBuf,
    pub model: Vit<f32>,
    pub stopped_early: bool,
}

/// Trains one condition and writes `config.json`, `history.csv`,
/// `best.ckpt` and `last.ckpt` into `cfg.out_dir`. With `resume`, an
/// existing `last.ckpt` there is continued.
pub fn train(cfg: &ExperimentConfig, resume: bool) -> Result<TrainRun, ExperimentError> {
    cfg.validate()?;
    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_resolved(cfg, &dir)?;
    let splits = cfg.dataset.load(cfg.train_fraction, cfg.seed)?;
    let model = Vit::<f32>::new(cfg.model.clone(), cfg.seed).map_err(|e| ExperimentError::Config(e.to_string()))?;
    let last = dir.join("last.ckpt");
    let resume_from = if resume && last.is_file() {
        log::info!("resuming from {}", last.display());
        Some(load_checkpoint::<f32>(&last).map_err(run_err)?)
    } else {
        None
    };
    let fit_cfg = FitConfig {
        protocol: cfg.protocol.clone(),
        optim: cfg.optim.clone(),
        seed: cfg.seed,
        eval_batch_size: cfg.eval_batch_size,
    };
    let opts = FitOptions {
        checkpoint_dir: Some(dir.clone()),
        resume: resume_from,
        stop_after: None,
    };
    let history_path = dir.join("history.csv");
    match fit(&splits.train, &splits.val, model, &fit_cfg, opts) {
        Ok(out) => {
            write_history(&history_path, &out.history)?;
            Ok(TrainRun {
                out_dir: dir.clone(),
                history: out.history,
                best_checkpoint: dir.join("best.ckpt"),
                model: out.model,
                stopped_early: out.stopped_early,
            })
        }
        Err(TrainError::Diverged {
            history,
            epoch,
            batch,
            reason,
        }) => {
            write_history(&history_path, &history)?;
            Err(ExperimentError::Run(format!("diverged at epoch {epoch}, batch {batch}: {reason}")))
        }
        Err(TrainError::Config(m)) => Err(ExperimentError::Config(m)),
        Err(e) => Err(run_err(e)),
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub tool_version: String,
    pub dataset: String,
    pub condition: String,
    pub n_images: usize,
    pub seed: u64,
    pub test_acc: f64,
    pub mad_min: f64,
    pub mad_max: f64,
    pub entropy_min: f64,
    pub entropy_max: f64,
    pub mad_argmin: HeadPos,
    pub entropy_argmin: HeadPos,
}

/// Per-head metrics of `model` on a seeded sample of `n` images from `test`
/// (clipped to its size), plus the summary with full-test accuracy.
pub fn analyze_model(
    model: &Vit<f64>,
    test: &Dataset,
    n: usize,
    seed_value: u64,
    batch_size: usize,
    condition: &str,
) -> Result<(Vec<HeadRow>, AnalysisSummary), ExperimentError> {
    let an = |e: String| ExperimentError::Analysis(e);
    let mc = model.config();
    if test.size != mc.image_size || test.channels != mc.channels {
        return Err(an(format!(
            "checkpoint expects {}x{}x{} images (grid {}x{}) but {} has {}x{}x{}",
            mc.channels,
            mc.image_size,
            mc.image_size,
            mc.grid_side(),
            mc.grid_side(),
            test.name,
            test.channels,
            test.size,
            test.size
        )));
    }
    let n_used = if n > test.len() {
        log::warn!("requested {n} analysis images but the test split has {}; using all", test.len());
        test.len()
    } else {
        n
    };
    let idx = sample_indices(test.len(), n_used, seed_value, "eval");
    let images = test.subset(&idx).normalize::<f64>();
    let geom = GridGeometry::new(mc.grid_side()).map_err(|e| an(e.to_string()))?;
    let metrics = aggregate_over_images(model, &images, &geom, batch_size).map_err(|e| an(e.to_string()))?;
    let s = summarize(&metrics).map_err(|e| an(e.to_string()))?;
    let test_acc = evaluate_accuracy(model, test, batch_size).map_err(|e| an(e.to_string()))?;
    let rows = metrics
        .into_iter()
        .map(|m| HeadRow {
            dataset: test.name.clone(),
            condition: condition.to_string(),
            metrics: m,
        })
        .collect();
    Ok((
        rows,
        AnalysisSummary {
            tool_version: TOOL_VERSION.to_string(),
            dataset: test.name.clone(),
            condition: condition.to_string(),
            n_images: n_used,
            seed: seed_value,
            test_acc,
            mad_min: s.mad_min,
            mad_max: s.mad_max,
            entropy_min: s.entropy_min,
            entropy_max: s.entropy_max,
            mad_argmin: s.mad_argmin,
            entropy_argmin: s.entropy_argmin,
        },
    ))
}

/// Loads `checkpoint`, analyzes it on the configured dataset's test split
/// and writes `head_metrics.csv`, `summary.json` and the resolved config
/// into `out_dir`.
pub fn analyze(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    n: Option<usize>,
    out_dir: &Path,
) -> Result<(Vec<HeadRow>, AnalysisSummary), ExperimentError> {
    let an = |e: String| ExperimentError::Analysis(e);
    let bytes = std::fs::read(checkpoint).map_err(|e| an(format!("{}: {e}", checkpoint.display())))?;
    let ck = decode_checkpoint::<f64>(&bytes).map_err(|e| an(format!("{}: {e}", checkpoint.display())))?;
    let model = Vit::<f64>::from_params(ck.meta.model.clone(), ck.params).map_err(|e| an(e.to_string()))?;
    let splits = cfg
        .dataset
        .load(cfg.train_fraction, cfg.seed)
        .map_err(|e| an(e.to_string()))?;
    let (rows, summary) = analyze_model(
        &model,
        &splits.test,
        n.unwrap_or(cfg.eval_samples),
        cfg.seed,
        cfg.eval_batch_size,
        &ck.meta.protocol.name,
    )?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_resolved(cfg, out_dir)?;
    write_head_metrics(&out_dir.join("head_metrics.csv"), &rows)?;
    let path = out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(run_err)?;
    std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok((rows, summary))
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub rows: Vec<AblationRow>,
    pub failures: Vec<(Condition, String)>,
    pub summary_csv: PathBuf,
    pub report: Option<ReportFiles>,
}

/// Trains and analyzes all eight conditions under `cfg.out_dir/<slug>/`,
/// then writes `ablation_summary.csv` and the report files under
/// `cfg.out_dir/report/`. A failing condition is recorded and the rest
/// still run.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<AblationOutcome, ExperimentError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    write_resolved(cfg, &cfg.out_dir)?;
    let mut rows = Vec::new();
    let mut heads = Vec::new();
    let mut failures = Vec::new();
    for c in Condition::ALL {
        let sub = ExperimentConfig {
            protocol: cfg.protocol.with_condition(c),
            out_dir: cfg.out_dir.join(condition_slug(c)),
            ..cfg.clone()
        };
        log::info!("condition {c}");
        let result = train(&sub, false).and_then(|run| analyze(&sub, &run.best_checkpoint, None, &sub.out_dir));
        match result {
            Ok((h, s)) => {
                rows.push(AblationRow {
                    condition: c.name().to_string(),
                    test_acc: s.test_acc,
                    mad_min: s.mad_min,
                    mad_max: s.mad_max,
                    entropy_min: s.entropy_min,
                    entropy_max: s.entropy_max,
                });
                heads.extend(h);
            }
            Err(e) => {
                log::error!("condition {c} failed: {e}");
                failures.push((c, e.to_string()));
            }
        }
    }
    let summary_csv = cfg.out_dir.join("ablation_summary.csv");
    write_ablation_summary(&summary_csv, &rows)?;
    let report = if heads.is_empty() {
        None
    } else {
        Some(write_report(&heads, &cfg.out_dir.join("report"))?)
    };
    if !failures.is_empty() {
        let path = cfg.out_dir.join("failures.json");
        let list: Vec<(String, String)> = failures.iter().map(|(c, e)| (c.name().to_string(), e.clone())).collect();
        std::fs::write(&path, serde_json::to_string_pretty(&list).map_err(run_err)? + "\n").map_err(io_err(&path))?;
    }
    Ok(AblationOutcome {
        rows,
        failures,
        summary_csv,
        report,
    })
}

/// Packs a Tiny-ImageNet directory into `train.vlpk` and `val.vlpk`.
/// Returns the image counts.
pub fn convert_tiny_imagenet(src: &Path, out_dir: &Path) -> Result<(usize, usize), ExperimentError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut counts = [0; 2];
    for (k, (train, name)) in [(true, "train.vlpk"), (false, "val.vlpk")].into_iter().enumerate() {
        let ds = load_tiny_imagenet(src, train).map_err(run_err)?;
        let path = out_dir.join(name);
        let file = std::fs::File::create(&path).map_err(io_err(&path))?;
        write_packed(std::io::BufWriter::new(file), &ds).map_err(io_err(&path))?;
        counts[k] = ds.len();
    }
    Ok((counts[0], counts[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn quick(dir: &Path) -> ExperimentConfig {
        let base = ExperimentConfig::desk();
        let mut c = ExperimentConfig::from_overrides(
            &base,
            &json!({
                "dataset": {"kind": "synthetic", "n_per_class": 10, "n_classes": 10, "size": 16, "test_per_class": 3},
                "optim": {"max_epochs": 1, "warmup_epochs": 1},
                "model": {"depth": 1},
                "eval_samples": 12
            }),
        )
        .unwrap();
        c.out_dir = dir.to_path_buf();
        c
    }

    #[test]
    fn train_then_analyze() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick(dir.path());
        let run = train(&cfg, false).unwrap();
        assert_eq!(run.history.len(), 1);
        let hist = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
        assert!(hist.starts_with("epoch,train_loss,val_acc,best_val_acc,lr\n0,"));
        assert!(dir.path().join("config.json").is_file());

        let (rows, summary) = analyze(&cfg, &run.best_checkpoint, Some(1000), dir.path()).unwrap();
        assert_eq!(rows.len(), 4); // depth 1 × 4 heads
        assert_eq!(summary.n_images, 30); // clipped to the test split
        let first = std::fs::read(dir.path().join("head_metrics.csv")).unwrap();
        analyze(&cfg, &run.best_checkpoint, Some(1000), dir.path()).unwrap();
        assert_eq!(first, std::fs::read(dir.path().join("head_metrics.csv")).unwrap());
    }

    #[test]
    fn analyze_rejects_grid_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick(dir.path());
        let run = train(&cfg, false).unwrap();
        let other = ExperimentConfig::from_overrides(
            &cfg,
            &json!({"dataset": {"kind": "synthetic", "n_per_class": 10, "n_classes": 10, "size": 24, "test_per_class": 3}}),
        )
        .unwrap();
        let e = analyze(&other, &run.best_checkpoint, None, dir.path()).unwrap_err();
        assert_eq!(e.exit_code(), 4, "{e}");
    }

    #[test]
    fn invalid_config_fails_before_io() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = quick(&dir.path().join("never"));
        cfg.model.heads = 5;
        let e = train(&cfg, false).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(!dir.path().join("never").exists());
    }
}
