//! Prints the resolved desk and paper configurations and their model sizes.
//!
//!     cargo run --example presets

use vitlab::experiment::{ExperimentConfig, Preset};
use vitlab::model::{count_params, ModelConfig, Vit};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for p in [Preset::Desk, Preset::Paper] {
        let cfg = ExperimentConfig::preset(p);
        let n = count_params(Vit::<f32>::new(cfg.model.clone(), 0)?.params());
        println!("--- {p:?}: {n} parameters");
        println!("{}", serde_json::to_string_pretty(&cfg)?);
    }
    for (name, size, classes) in [("cifar100", 32, 100), ("tiny-imagenet", 64, 200)] {
        let n = count_params(Vit::<f32>::new(ModelConfig::paper(size, classes), 0)?.params());
        println!("paper model on {name}: {n} parameters");
    }
    Ok(())
}
