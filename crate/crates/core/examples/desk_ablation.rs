//! The eight-condition ablation at desk scale, written under
//! `runs/desk-ablation/`.
//!
//!     cargo run --release --example desk_ablation -- [epochs]

use vitlab::experiment::{run_ablation, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = ExperimentConfig::desk();
    if let Some(e) = std::env::args().nth(1) {
        cfg.optim.max_epochs = e.parse()?;
    }
    cfg.out_dir = "runs/desk-ablation".into();
    let out = run_ablation(&cfg)?;
    println!("{:>22} {:>8} {:>8} {:>8}", "condition", "test acc", "min MAD", "max MAD");
    for r in &out.rows {
        println!("{:>22} {:>8.3} {:>8.4} {:>8.4}", r.condition, r.test_acc, r.mad_min, r.mad_max);
    }
    for (c, e) in &out.failures {
        println!("{c} failed: {e}");
    }
    println!("summary written to {}", out.summary_csv.display());
    Ok(())
}
