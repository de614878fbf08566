use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vitlab::augment::Condition;
use vitlab::experiment::{
    analyze, convert_tiny_imagenet, read_head_metrics, run_ablation, train, write_report, ExperimentConfig,
    ExperimentError, Preset,
};

#[derive(Parser)]
#[command(name = "vitlab", version, about = "Train ViTs and measure attention locality")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON file overriding fields of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
}

#[derive(Subcommand)]
enum Command {
    /// Train one condition.
    Train {
        #[command(flatten)]
        common: Common,
        /// Condition name, e.g. baseline, +cutmix, -labelsmoothing.
        #[arg(long)]
        condition: Option<String>,
        /// Continue from last.ckpt in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Per-head attention metrics of a checkpoint.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of test images to sample.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train and analyze all eight conditions.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Figure data from head_metrics.csv files or directories holding them.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Pack a Tiny-ImageNet directory into train.vlpk and val.vlpk.
    Convert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        src: PathBuf,
    },
}

fn resolve(c: &Common) -> Result<ExperimentConfig, ExperimentError> {
    let base = ExperimentConfig::preset(c.preset);
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(&base, p)?,
        None => base,
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn collect_metric_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_file() {
            out.push(p.clone());
        } else if p.is_dir() {
            let direct = p.join("head_metrics.csv");
            if direct.is_file() {
                out.push(direct);
                continue;
            }
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| ExperimentError::Analysis(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path().join("head_metrics.csv")))
                .filter(|f| f.is_file())
                .collect();
            found.sort();
            if found.is_empty() {
                return Err(ExperimentError::Analysis(format!("no head_metrics.csv under {}", p.display())));
            }
            out.extend(found);
        } else {
            return Err(ExperimentError::Analysis(format!("{}: no such file or directory", p.display())));
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Train {
            common,
            condition,
            resume,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(name) = condition {
                let c = Condition::from_name(&name).map_err(|e| ExperimentError::Config(e.to_string()))?;
                cfg.protocol = cfg.protocol.with_condition(c);
            }
            let r = train(&cfg, resume)?;
            let last = r.history.last().expect("at least one epoch");
            println!(
                "{} epochs, best val acc {:.4}, checkpoint {}",
                r.history.len(),
                last.best_val_acc,
                r.best_checkpoint.display()
            );
        }
        Command::Analyze { common, checkpoint, n } => {
            let cfg = resolve(&common)?;
            let (_, s) = analyze(&cfg, &checkpoint, n, &cfg.out_dir)?;
            println!(
                "{} images, test acc {:.4}, MAD [{:.4}, {:.4}], entropy [{:.4}, {:.4}]",
                s.n_images, s.test_acc, s.mad_min, s.mad_max, s.entropy_min, s.entropy_max
            );
        }
        Command::Ablate { common } => {
            let cfg = resolve(&common)?;
            let out = run_ablation(&cfg)?;
            for r in &out.rows {
                println!("{:>22}  acc {:.4}  min MAD {:.4}", r.condition, r.test_acc, r.mad_min);
            }
            println!("summary: {}", out.summary_csv.display());
            if !out.failures.is_empty() {
                let names: Vec<&str> = out.failures.iter().map(|(c, _)| c.name()).collect();
                return Err(ExperimentError::Run(format!("conditions failed: {}", names.join(", "))));
            }
        }
        Command::Report { common, inputs } => {
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("report"));
            let mut rows = Vec::new();
            let files_in = collect_metric_files(&inputs)?;
            for f in &files_in {
                rows.extend(read_head_metrics(f)?);
            }
            let files = write_report(&rows, &out)?;
            let manifest = serde_json::json!({
                "tool_version": vitlab::TOOL_VERSION,
                "inputs": files_in,
            });
            let path = out.join("manifest.json");
            std::fs::write(&path, format!("{manifest:#}\n"))
                .map_err(|e| ExperimentError::Run(format!("{}: {e}", path.display())))?;
            println!("wrote {}", files.rank_profiles.parent().unwrap_or(Path::new(".")).display());
        }
        Command::Convert { common, src } => {
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("data/tiny-imagenet-packed"));
            let (tr, va) = convert_tiny_imagenet(&src, &out)?;
            println!("packed {tr} train and {va} val images into {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
