//! Train the desk-size ViT on the synthetic dataset and print the history.
//!
//!     cargo run --release --example train_synthetic -- [epochs]

use std::time::Instant;

use vitlab::augment::Condition;
use vitlab::data::{stratified_split, synthetic_dataset, SplitSpec};
use vitlab::model::{count_params, ModelConfig, Vit};
use vitlab::train::{evaluate_accuracy, fit, FitConfig, FitOptions, OptimSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let n_classes = 10;
    let data = synthetic_dataset(50, n_classes, 16, 42);
    let (train, val) = stratified_split(&data, &SplitSpec::default())?;
    let test = synthetic_dataset(20, n_classes, 16, 7);

    let model = Vit::<f32>::new(ModelConfig::desk(16, 4, n_classes), 42)?;
    println!("parameters: {}", count_params(model.params()));
    let cfg = FitConfig {
        protocol: Condition::Baseline.protocol(16),
        optim: OptimSpec {
            max_epochs: epochs,
            ..OptimSpec::desk()
        },
        seed: 42,
        eval_batch_size: 128,
    };
    let t0 = Instant::now();
    let out = fit(&train, &val, model, &cfg, FitOptions::default())?;
    for r in &out.history {
        println!("epoch {:>3}  loss {:.4}  val {:.3}  best {:.3}  lr {:.2e}", r.epoch, r.train_loss, r.val_acc, r.best_val_acc, r.lr);
    }
    println!("test accuracy {:.3} (chance {:.3})", evaluate_accuracy(&out.model, &test, 128)?, 1.0 / n_classes as f64);
    println!("elapsed {:.1?}", t0.elapsed());
    Ok(())
}
