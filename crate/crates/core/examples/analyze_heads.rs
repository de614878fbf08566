//! Trains a desk ViT for a few epochs, then prints per-head MAD and entropy
//! on the test split, sorted within each layer.
//!
//!     cargo run --release --example analyze_heads -- [epochs]

use vitlab::experiment::{analyze_model, ExperimentConfig};
use vitlab::model::Vit;
use vitlab::train::{fit, FitConfig, FitOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(8);
    let mut cfg = ExperimentConfig::desk();
    cfg.optim.max_epochs = epochs;
    let splits = cfg.dataset.load(cfg.train_fraction, cfg.seed)?;
    let fit_cfg = FitConfig {
        protocol: cfg.protocol.clone(),
        optim: cfg.optim.clone(),
        seed: cfg.seed,
        eval_batch_size: cfg.eval_batch_size,
    };
    let out = fit(&splits.train, &splits.val, Vit::<f32>::new(cfg.model.clone(), cfg.seed)?, &fit_cfg, FitOptions::default())?;
    let model = Vit::<f64>::from_params(cfg.model.clone(), out.model.params().cast())?;

    let (rows, s) = analyze_model(&model, &splits.test, cfg.eval_samples, cfg.seed, cfg.eval_batch_size, &cfg.protocol.name)?;
    println!("test acc {:.3} over {} analysis images", s.test_acc, s.n_images);
    println!("{:>5} {:>4} {:>8} {:>8}", "layer", "head", "MAD", "entropy");
    for r in &rows {
        let m = &r.metrics;
        println!("{:>5} {:>4} {:>8.4} {:>8.4}", m.layer, m.head, m.mad_mean, m.entropy_mean);
    }
    println!(
        "MAD range [{:.4}, {:.4}] (most local: layer {} head {})",
        s.mad_min, s.mad_max, s.mad_argmin.layer, s.mad_argmin.head
    );
    Ok(())
}
