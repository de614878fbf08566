use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vitlab::augment::one_hot;
use vitlab::model::{ModelConfig, Vit};
use vitlab::tensor::{finite_diff_check, Tensor, TensorError};
use vitlab::train::cross_entropy_soft;

/// Every parameter of the tiny ViT against central differences in f64.
#[test]
fn tiny_vit_matches_finite_differences() {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = Vit::<f64>::new(cfg.clone(), 3).unwrap().params().clone();
    for p in &mut store.entries {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let model = Vit::from_params(cfg.clone(), store).unwrap();
    let n: usize = 3 * cfg.channels * cfg.image_size * cfg.image_size;
    let images = Tensor::new(
        vec![3, cfg.channels, cfg.image_size, cfg.image_size],
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap();
    let targets = Tensor::new(vec![3, cfg.n_classes], one_hot(&[2, 0, 1], cfg.n_classes)).unwrap();
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
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-6, "{:.3e} at {:?}", report.max_relative_error, report.worst);
}
