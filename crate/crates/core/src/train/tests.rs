use super::*;
use crate::augment::Condition;
use crate::data::{stratified_split, synthetic_dataset, SplitSpec};
use crate::model::ModelConfig;
use crate::tensor::finite_diff_check;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t64(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[test]
fn uniform_logits_give_ln_c() {
    let mut tape = Tape::new();
    let logits = tape.param(Tensor::full(vec![2, 10], 0.3));
    let mut targets = vec![0.0; 20];
    targets[4] = 0.5;
    targets[7] = 0.5;
    targets[10 + 9] = 1.0;
    let loss = cross_entropy_soft(&mut tape, logits, &t64(&[2, 10], targets)).unwrap();
    assert!((tape.value(loss).item() - 10f64.ln()).abs() < 1e-12);
}

#[test]
fn one_hot_matches_standard_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (b, c) = (5, 6);
    let raw: Vec<f64> = (0..b * c).map(|_| rng.random_range(-3.0..3.0)).collect();
    let labels: Vec<usize> = (0..b).map(|i| (i * 7) % c).collect();
    let mut onehot = vec![0.0; b * c];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * c + l] = 1.0;
    }
    let mut tape = Tape::new();
    let logits = tape.param(t64(&[b, c], raw.clone()));
    let loss = cross_entropy_soft(&mut tape, logits, &t64(&[b, c], onehot)).unwrap();
    // naive oracle
    let mut expect = 0.0;
    for i in 0..b {
        let row = &raw[i * c..(i + 1) * c];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        expect += lse - row[labels[i]];
    }
    expect /= b as f64;
    assert!((tape.value(loss).item() - expect).abs() < 1e-12);
}

#[test]
fn confident_logits_stay_finite() {
    let mut tape = Tape::new();
    let logits = tape.param(t64(&[1, 3], vec![1000.0, -1000.0, 0.0]));
    let loss = cross_entropy_soft(&mut tape, logits, &t64(&[1, 3], vec![1.0, 0.0, 0.0])).unwrap();
    assert!(tape.value(loss).item().abs() < 1e-12);
    let wrong = tape.param(t64(&[1, 3], vec![1000.0, -1000.0, 0.0]));
    let loss = cross_entropy_soft(&mut tape, wrong, &t64(&[1, 3], vec![0.0, 1.0, 0.0])).unwrap();
    assert!((tape.value(loss).item() - 2000.0).abs() < 1e-9);
}

#[test]
fn unnormalized_targets_rejected() {
    let mut tape = Tape::new();
    let logits = tape.param(Tensor::<f64>::zeros(vec![1, 2]));
    let err = cross_entropy_soft(&mut tape, logits, &t64(&[1, 2], vec![0.5, 0.5 + 2e-6]));
    assert!(matches!(err, Err(TensorError::Contract(_))));
}

#[test]
fn soft_cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (b, c) = (4, 7);
    let logits = t64(&[b, c], (0..b * c).map(|_| rng.random_range(-2.0..2.0)).collect());
    let mut targets: Vec<f64> = (0..b * c).map(|_| rng.random_range(0.0..1.0)).collect();
    for row in targets.chunks_mut(c) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    let targets = t64(&[b, c], targets);
    let report = finite_diff_check(|tape, v| cross_entropy_soft(tape, v[0], &targets), &[logits], 1e-6).unwrap();
    assert!(report.max_relative_error < 1e-6, "{}", report.max_relative_error);
}

fn tiny_data(seed: u64) -> (Dataset, Dataset) {
    let ds = synthetic_dataset(30, 3, 6, seed);
    stratified_split(&ds, &SplitSpec { train_fraction: 0.8, seed }).unwrap()
}

fn tiny_fit_config(epochs: usize) -> FitConfig {
    FitConfig {
        protocol: Condition::Modern.protocol(6),
        optim: OptimSpec {
            max_epochs: epochs,
            warmup_epochs: 1,
            batch_size: 16,
            patience: 100,
            learning_rate: 3e-3,
            ..OptimSpec::desk()
        },
        seed: 5,
        eval_batch_size: 64,
    }
}

#[test]
fn loss_descends_on_fixed_batch() {
    let (train, _) = tiny_data(1);
    let mut model = Vit::<f64>::new(ModelConfig::tiny(), 2).unwrap();
    let mut state = OptimizerState::new(model.params());
    let spec = OptimSpec {
        weight_decay: 0.0,
        ..OptimSpec::desk()
    };
    let idx: Vec<usize> = (0..16).collect();
    let mut b = train.unit_batch(&idx);
    normalize_in_place(&mut b, &train.norm);
    let labels: Vec<u16> = idx.iter().map(|&i| train.labels[i]).collect();
    let x = b.to_tensor::<f64>();
    let y = Tensor::new(vec![16, 3], crate::augment::one_hot(&labels, 3)).unwrap();
    let mut prev = f64::INFINITY;
    for _ in 0..10 {
        let step = train_step(&mut model, &mut state, &spec, &x, &y, 1e-3).unwrap();
        assert!(step.loss < prev, "{} !< {prev}", step.loss);
        prev = step.loss;
    }
}

#[test]
fn fit_is_reproducible_and_learns() {
    let (train, val) = tiny_data(3);
    let cfg = tiny_fit_config(12);
    let run = || fit(&train, &val, Vit::<f32>::new(ModelConfig::tiny(), 4).unwrap(), &cfg, FitOptions::default()).unwrap();
    let a = run();
    let b = run();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.history.len(), 12);
    let best = a.history.iter().map(|r| r.val_acc).fold(0.0, f64::max);
    assert!(best > 1.0 / 3.0, "best val acc {best}");
    // best track is monotone
    assert!(a.history.windows(2).all(|w| w[1].best_val_acc >= w[0].best_val_acc));
    let acc = evaluate_accuracy(&a.model, &val, 7).unwrap();
    assert_eq!(acc, a.best.meta.best_val_acc.unwrap());
}

#[test]
fn single_epoch_history() {
    let (train, val) = tiny_data(3);
    let out = fit(&train, &val, Vit::<f32>::new(ModelConfig::tiny(), 4).unwrap(), &tiny_fit_config(1), FitOptions::default()).unwrap();
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.history[0].epoch, 0);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (train, val) = tiny_data(4);
    let cfg = tiny_fit_config(6);
    let model = || Vit::<f32>::new(ModelConfig::tiny(), 9).unwrap();
    let full = fit(&train, &val, model(), &cfg, FitOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let part = fit(
        &train,
        &val,
        model(),
        &cfg,
        FitOptions {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            stop_after: Some(3),
            ..FitOptions::default()
        },
    )
    .unwrap();
    assert_eq!(part.history.len(), 3);
    let last = load_checkpoint::<f32>(&dir.path().join("last.ckpt")).unwrap();
    assert_eq!(last, part.last);
    let resumed = fit(
        &train,
        &val,
        model(),
        &cfg,
        FitOptions {
            resume: Some(last),
            ..FitOptions::default()
        },
    )
    .unwrap();
    assert_eq!(resumed.history, full.history);
    assert_eq!(resumed.last.params, full.last.params);
    assert_eq!(resumed.model.params(), full.model.params());
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let (train, val) = tiny_data(2);
    let out = fit(&train, &val, Vit::<f32>::new(ModelConfig::tiny(), 1).unwrap(), &tiny_fit_config(2), FitOptions::default()).unwrap();
    let bytes = encode_checkpoint(&out.last).unwrap();
    assert_eq!(&bytes[..4], b"VITL");
    let back = decode_checkpoint::<f32>(&bytes).unwrap();
    assert_eq!(back, out.last);
    // bit-identical buffers
    for (a, b) in back.params.entries.iter().zip(&out.last.params.entries) {
        let ab: Vec<u32> = a.value.data().iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u32> = b.value.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb);
    }
    // widening to f64 is allowed
    let wide = decode_checkpoint::<f64>(&bytes).unwrap();
    assert_eq!(wide.params.entries[0].value.data()[0], f64::from(out.last.params.entries[0].value.data()[0]));

    for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(decode_checkpoint::<f32>(&bytes[..cut]), Err(TrainError::Checkpoint(_))), "cut {cut}");
    }
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(decode_checkpoint::<f32>(&bad), Err(TrainError::Checkpoint(m)) if m.contains("version")));
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint::<f32>(&bad), Err(TrainError::Checkpoint(m)) if m.contains("magic")));
}

#[test]
fn patience_longer_than_run_uses_all_epochs() {
    let (train, val) = tiny_data(6);
    let mut cfg = tiny_fit_config(4);
    cfg.optim.patience = 50;
    let out = fit(&train, &val, Vit::<f32>::new(ModelConfig::tiny(), 1).unwrap(), &cfg, FitOptions::default()).unwrap();
    assert_eq!(out.history.len(), 4);
    assert!(!out.stopped_early);
}

#[test]
fn geometry_mismatch_is_config_error() {
    let ds = synthetic_dataset(10, 3, 8, 1);
    let (tr, va) = stratified_split(&ds, &SplitSpec::default()).unwrap();
    let err = fit(&tr, &va, Vit::<f32>::new(ModelConfig::tiny(), 1).unwrap(), &tiny_fit_config(1), FitOptions::default());
    assert!(matches!(err, Err(TrainError::Config(_))));
}
