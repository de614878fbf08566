//! Verifies reverse-mode gradients of the tiny ViT against central
//! finite differences in f64.
//!
//!     cargo run --release --example gradient_check

use vitlab::augment::one_hot;
use vitlab::model::{count_params, random_images, ModelConfig, Vit};
use vitlab::seed;
use vitlab::tensor::{finite_diff_check, Tensor, TensorError};
use vitlab::train::cross_entropy_soft;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig::tiny();
    let model = Vit::<f64>::new(cfg.clone(), 1)?;
    let mut rng = seed::stream(1, "gradcheck", &[]);
    let images = random_images::<f64>(&mut rng, 2, &cfg);
    let targets = Tensor::new(vec![2, cfg.n_classes], one_hot(&[0, 2], cfg.n_classes))?;
    let params: Vec<Tensor<f64>> = model.params().entries.iter().map(|p| p.value.clone()).collect();

    let report = finite_diff_check(
        |tape, vars| {
            let (logits, _) = model
                .forward_with(tape, vars, &images, false)
                .map_err(|e| TensorError::Contract(e.to_string()))?;
            cross_entropy_soft(tape, logits, &targets)
        },
        &params,
        1e-5,
    )?;
    println!("parameters checked: {}", count_params(model.params()));
    println!("max relative error: {:.3e}", report.max_relative_error);
    if let Some((p, e)) = report.worst {
        println!("worst entry: {}[{e}]", model.params().entries[p].name);
    }
    Ok(())
}
