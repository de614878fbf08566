//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any hard criterion fails.
//!
//! Set `VITLAB_CIFAR10_DIR` to run the directional locality check on a
//! CIFAR-10 subset; otherwise it runs on synthetic data.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vitlab::augment::{apply_protocol, cutmix_batch, one_hot, sample_lambda, Condition, CutMixBox};
use vitlab::data::{synthetic_dataset, ImageBatch};
use vitlab::experiment::{analyze, train, DatasetSpec, ExperimentConfig};
use vitlab::metrics::{entropy, exclude_cls_renormalize, mad, GridGeometry, HeadRef, RenormalizedAttention, ENTROPY_EPS};
use vitlab::model::{count_params, ModelConfig, Vit};
use vitlab::tensor::{finite_diff_check, Tape, Tensor, TensorError, Var};
use vitlab::train::cross_entropy_soft;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_rows(rng: &mut impl Rng, n: usize, m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        // softmax of wide logits gives both peaked and flat rows
        let scale = rng.random_range(0.1..8.0);
        let logits: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

fn naive_delta(side: usize, i: usize, j: usize) -> f64 {
    let (ri, ci) = ((i / side) as f64, (i % side) as f64);
    let (rj, cj) = ((j / side) as f64, (j % side) as f64);
    ((ri - rj).powi(2) + (ci - cj).powi(2)).sqrt() / (2.0f64.sqrt() * (side - 1) as f64)
}

fn naive_mad(a: &[f64], side: usize) -> f64 {
    let n = side * side;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += a[i * n + j] * naive_delta(side, i, j);
        }
    }
    total / n as f64
}

fn naive_entropy(a: &[f64], n: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        let mut h = 0.0;
        for j in 0..n {
            let p = a[i * n + j];
            h -= p * (p + ENTROPY_EPS).ln();
        }
        total += h;
    }
    total / n as f64 / (n as f64).ln()
}

fn metric_oracles() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_mad, mut worst_ent) = (0.0f64, 0.0f64);
    for k in 0..100 {
        let side = [2, 4, 8][k % 3];
        let n = side * side;
        let geom = GridGeometry::new(side).map_err(|e| e.to_string())?;
        let data = random_rows(&mut rng, n, n);
        let ra = RenormalizedAttention::new(n, data.clone()).map_err(|e| e.to_string())?;
        worst_mad = worst_mad.max((mad(&ra, &geom) - naive_mad(&data, side)).abs());
        worst_ent = worst_ent.max((entropy(&ra) - naive_entropy(&data, n)).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(worst_mad <= 1e-12 && worst_ent <= 1e-12, format!("max diff mad {worst_mad:.2e}, entropy {worst_ent:.2e}"))?;
    ensure(secs < 10.0, format!("took {secs:.1} s"))?;
    Ok(format!("100 matrices, max diff mad {worst_mad:.1e} entropy {worst_ent:.1e}, {secs:.2} s"))
}

fn metric_anchors() -> Check {
    let side = 8;
    let n = side * side;
    let geom = GridGeometry::new(side).map_err(|e| e.to_string())?;
    let mut eye = vec![0.0; n * n];
    for i in 0..n {
        eye[i * n + i] = 1.0;
    }
    let m0 = mad(&RenormalizedAttention::new(n, eye).map_err(|e| e.to_string())?, &geom);
    ensure(m0 == 0.0, format!("identity MAD {m0}"))?;

    let uniform = RenormalizedAttention::new(n, vec![1.0 / n as f64; n * n]).map_err(|e| e.to_string())?;
    let h = entropy(&uniform);
    ensure((h - 1.0).abs() <= 1e-9, format!("uniform entropy {h}"))?;
    let mut pair_mean = 0.0;
    for i in 0..n {
        for j in 0..n {
            pair_mean += naive_delta(side, i, j);
        }
    }
    pair_mean /= (n * n) as f64;
    let mu = mad(&uniform, &geom);
    ensure((mu - pair_mean).abs() <= 1e-12, format!("uniform MAD {mu} vs mean pairwise {pair_mean}"))?;

    for (i, j) in [(0, n - 1), (n - 1, 0), (side - 1, n - side), (n - side, side - 1)] {
        let d = geom.distance(i, j);
        ensure(d == 1.0, format!("corner distance ({i},{j}) = {d:?}"))?;
    }
    Ok(format!("identity MAD 0, uniform entropy 1{:+.1e}, uniform MAD {mu:.6}, corners 1", h - 1.0))
}

fn renormalization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_row, mut worst_val, mut worst_inv) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..100 {
        let side = [2, 3, 4, 8][k % 4];
        let geom = GridGeometry::new(side).map_err(|e| e.to_string())?;
        let np = side * side;
        let n = np + 1;
        let a = random_rows(&mut rng, n, n);
        let ra = exclude_cls_renormalize(&a, &geom, HeadRef::default()).map_err(|e| e.to_string())?;
        for (q, row) in ra.data().chunks(np).enumerate() {
            worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
            let keep = 1.0 - a[(q + 1) * n];
            for (j, &v) in row.iter().enumerate() {
                let expect = a[(q + 1) * n + j + 1] / keep;
                worst_val = worst_val.max((v - expect).abs());
            }
        }
        // moving mass between CLS and the patches leaves the result unchanged
        let mut b = a.clone();
        for q in 0..n {
            let new_cls = rng.random_range(0.0..0.9);
            let scale = (1.0 - new_cls) / (1.0 - a[q * n]);
            b[q * n] = new_cls;
            for j in 1..n {
                b[q * n + j] = a[q * n + j] * scale;
            }
        }
        let rb = exclude_cls_renormalize(&b, &geom, HeadRef::default()).map_err(|e| e.to_string())?;
        for (x, y) in ra.data().iter().zip(rb.data()) {
            worst_inv = worst_inv.max((x - y).abs());
        }
    }
    ensure(worst_row <= 1e-12, format!("row sum deviation {worst_row:.2e}"))?;
    ensure(worst_val <= 1e-12, format!("value deviation {worst_val:.2e}"))?;
    ensure(worst_inv <= 1e-12, format!("CLS-mass invariance deviation {worst_inv:.2e}"))?;
    Ok(format!("100 matrices, row sums 1±{worst_row:.1e}, CLS-mass invariance {worst_inv:.1e}"))
}

fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).expect("shape")
}

/// Contracts an op's output against fixed pseudo-random weights so every
/// output element contributes to the loss.
fn weighted(tp: &mut Tape<f64>, v: Var) -> Result<Var, TensorError> {
    let shape = tp.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| ((i * 7919) % 13) as f64 / 6.0 - 1.0).collect())?;
    let w = tp.constant(w);
    let p = tp.mul(v, w)?;
    Ok(tp.sum(p))
}

fn gradient_checks() -> Check {
    type OpFn = fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>;
    let ops: Vec<(&str, Vec<Vec<usize>>, OpFn)> = vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| { let c = t.matmul(v[0], v[1])?; weighted(t, c) }),
        ("bmm", vec![vec![2, 3, 4], vec![2, 4, 5]], |t, v| { let c = t.bmm(v[0], v[1], false)?; weighted(t, c) }),
        ("bmm_t", vec![vec![2, 3, 4], vec![2, 5, 4]], |t, v| { let c = t.bmm(v[0], v[1], true)?; weighted(t, c) }),
        ("add", vec![vec![2, 3, 4], vec![4]], |t, v| { let c = t.add(v[0], v[1])?; weighted(t, c) }),
        ("sub", vec![vec![3, 2], vec![3, 2]], |t, v| { let c = t.sub(v[0], v[1])?; weighted(t, c) }),
        ("mul", vec![vec![3, 2], vec![3, 2]], |t, v| { let c = t.mul(v[0], v[1])?; weighted(t, c) }),
        ("scale", vec![vec![5]], |t, v| { let c = t.scale(v[0], -1.7); weighted(t, c) }),
        ("transpose", vec![vec![2, 3, 4]], |t, v| { let c = t.transpose(v[0])?; weighted(t, c) }),
        ("permute", vec![vec![2, 3, 2, 4]], |t, v| { let c = t.permute(v[0], &[2, 0, 3, 1])?; weighted(t, c) }),
        ("reshape", vec![vec![2, 6]], |t, v| { let c = t.reshape(v[0], &[4, 3])?; weighted(t, c) }),
        ("slice", vec![vec![2, 4, 3]], |t, v| { let c = t.slice(v[0], 1, 1, 2)?; weighted(t, c) }),
        ("concat", vec![vec![2, 1, 3], vec![2, 4, 3]], |t, v| { let c = t.concat(&[v[0], v[1]], 1)?; weighted(t, c) }),
        ("broadcast_to", vec![vec![2, 1]], |t, v| { let c = t.broadcast_to(v[0], &[3, 2, 4])?; weighted(t, c) }),
        ("sum", vec![vec![5]], |t, v| { let c = t.mul(v[0], v[0])?; Ok(t.sum(c)) }),
        ("mean", vec![vec![2, 3]], |t, v| { let c = t.mul(v[0], v[0])?; Ok(t.mean(c)) }),
        ("softmax", vec![vec![3, 5]], |t, v| { let c = t.softmax_rows(v[0])?; weighted(t, c) }),
        ("log_softmax", vec![vec![3, 5]], |t, v| { let c = t.log_softmax_rows(v[0])?; weighted(t, c) }),
        ("layer_norm", vec![vec![3, 8], vec![8], vec![8]], |t, v| { let c = t.layer_norm(v[0], v[1], v[2], 1e-6)?; weighted(t, c) }),
        ("gelu", vec![vec![7]], |t, v| { let c = t.gelu(v[0]); weighted(t, c) }),
    ];
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_op = ("", 0.0f64);
    for (name, shapes, f) in &ops {
        for _ in 0..10 {
            let params: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
            let r = finite_diff_check(f, &params, 1e-5).map_err(|e| format!("{name}: {e}"))?;
            if r.max_relative_error > worst_op.1 {
                worst_op = (name, r.max_relative_error);
            }
        }
    }

    let cfg = ModelConfig::tiny();
    let init = Vit::<f64>::new(cfg.clone(), 5).map_err(|e| e.to_string())?;
    // larger-than-init weights keep gradients well above round-off
    let mut store = init.params().clone();
    for p in &mut store.entries {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let model = Vit::from_params(cfg.clone(), store).map_err(|e| e.to_string())?;
    let batch = 2;
    let images = random_tensor(&mut rng, &[batch, cfg.channels, cfg.image_size, cfg.image_size]);
    let mut targets = one_hot(&[0, 2], cfg.n_classes);
    targets.iter_mut().for_each(|t| *t = 0.9 * *t + 0.1 / cfg.n_classes as f64);
    let targets = Tensor::new(vec![batch, cfg.n_classes], targets).map_err(|e| e.to_string())?;
    let params: Vec<Tensor<f64>> = model.params().entries.iter().map(|p| p.value.clone()).collect();
    let n_params: usize = params.iter().map(Tensor::len).sum();
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
    .map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    ensure(worst_op.1 <= 1e-6, format!("op {} rel err {:.2e}", worst_op.0, worst_op.1))?;
    ensure(
        report.max_relative_error <= 1e-6,
        format!("tiny ViT rel err {:.2e} at {:?}", report.max_relative_error, report.worst),
    )?;
    ensure(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "{} ops worst {:.1e} ({}), tiny ViT {} params worst {:.1e}, {secs:.1} s",
        ops.len(),
        worst_op.1,
        worst_op.0,
        n_params,
        report.max_relative_error
    ))
}

fn cutmix_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut draws: Vec<f64> = (0..10_000).map(|_| sample_lambda(1.0, &mut rng)).collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    let ks = draws
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n - x).abs().max((x - i as f64 / n).abs()))
        .fold(0.0, f64::max);
    ensure((mean - 0.5).abs() <= 0.02, format!("lambda mean {mean}"))?;
    ensure(ks < 0.02, format!("KS distance {ks}"))?;

    // pasted-pixel count against the reported area-corrected lambda
    for _ in 0..1000 {
        let size = rng.random_range(4..40);
        let imgs = 2;
        let plane = size * size;
        let mut data = vec![0.0f32; imgs * plane];
        data[plane..].iter_mut().for_each(|v| *v = 1.0);
        let mut batch = ImageBatch {
            n: imgs,
            channels: 1,
            size,
            data,
        };
        let mut targets = one_hot(&[0, 1], 2);
        let out = cutmix_batch(&mut batch, &mut targets, 2, 1.0, 1.0, &mut rng);
        let own = usize::from(out.partner[0] != 0);
        let pasted = if own == 1 {
            batch.data[..plane].iter().filter(|&&v| v == 1.0).count()
        } else {
            0
        };
        let bbox = out.bbox.ok_or("cutmix not applied at p=1")?;
        let expect = 1.0 - bbox.area() as f64 / (size * size) as f64;
        ensure(out.lambda == expect, format!("lambda' {} vs {expect}", out.lambda))?;
        if own == 1 {
            ensure(pasted == bbox.area(), format!("pasted {pasted} px, box area {}", bbox.area()))?;
        }
        let side = (size as f64 * (1.0 - out.lambda_draw).sqrt()).round() as usize;
        ensure(bbox.x2 - bbox.x1 <= side && bbox.y2 - bbox.y1 <= side, "box larger than its side")?;
    }
    for _ in 0..1000 {
        let size = rng.random_range(1..64);
        let lambda = rng.random::<f64>();
        let b = CutMixBox::from_lambda(size, lambda, rng.random_range(0..size), rng.random_range(0..size));
        let clipped = b.area() as f64;
        ensure(b.x2 <= size && b.y2 <= size, "box outside image")?;
        ensure(b.lambda_prime(size) == 1.0 - clipped / (size * size) as f64, "lambda' identity")?;
    }

    let ds = synthetic_dataset(4, 10, 16, 9);
    let mut worst = 0.0f64;
    for c in Condition::ALL {
        let cfg = c.protocol(16);
        for _ in 0..50 {
            let idx: Vec<usize> = (0..8).map(|_| rng.random_range(0..ds.len())).collect();
            let labels: Vec<u16> = idx.iter().map(|&i| ds.labels[i]).collect();
            let out = apply_protocol(ds.unit_batch(&idx), &labels, 10, &cfg, &mut rng);
            for i in 0..idx.len() {
                worst = worst.max((out.target_row(i).iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    ensure(worst <= 1e-9, format!("target row deviation {worst:.2e}"))?;
    Ok(format!("lambda mean {mean:.4}, KS {ks:.4}, 2000 boxes exact, rows 1±{worst:.1e} over 8 conditions"))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_vitlab")
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin())
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "vitlab {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn training_sanity(root: &Path) -> Check {
    let t0 = Instant::now();
    let (a, b) = (root.join("train_a"), root.join("train_b"));
    for d in [&a, &b] {
        run_cli(&["train", "--preset", "desk", "--out", d.to_str().unwrap()])?;
    }
    let secs = t0.elapsed().as_secs_f64() / 2.0;
    let ha = read(&a.join("history.csv"))?;
    ensure(ha == read(&b.join("history.csv"))?, "history.csv differs between identical runs")?;
    let text = String::from_utf8(ha).map_err(|e| e.to_string())?;
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let mut best = 0.0f64;
    let mut epochs = 0;
    for r in rows.records() {
        let r = r.map_err(|e| e.to_string())?;
        best = best.max(r[2].parse::<f64>().map_err(|e| e.to_string())?);
        epochs += 1;
    }
    let chance = 0.1;
    ensure(epochs <= 30, format!("{epochs} epochs"))?;
    ensure(best > 2.0 * chance, format!("best val acc {best} not above {}", 2.0 * chance))?;
    ensure(secs < 300.0, format!("took {secs:.0} s per run"))?;
    Ok(format!("best val acc {best:.3} in {epochs} epochs (chance {chance}), {secs:.1} s per run, histories identical"))
}

fn csv_files(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            csv_files(&p, base, out);
        } else if p.extension().is_some_and(|e| e == "csv") {
            out.push(p.strip_prefix(base).expect("under base").to_path_buf());
        }
    }
}

fn ablation(root: &Path) -> Check {
    let t0 = Instant::now();
    let (a, b) = (root.join("ablate_a"), root.join("ablate_b"));
    for d in [&a, &b] {
        run_cli(&["ablate", "--preset", "desk", "--out", d.to_str().unwrap()])?;
    }
    let secs = t0.elapsed().as_secs_f64() / 2.0;
    let summary = String::from_utf8(read(&a.join("ablation_summary.csv"))?).map_err(|e| e.to_string())?;
    let mut lines = summary.lines();
    let header = lines.next().unwrap_or_default();
    ensure(
        header == "condition,test_acc,mad_min,mad_max,entropy_min,entropy_max",
        format!("summary header {header:?}"),
    )?;
    let conditions: Vec<&str> = lines.map(|l| l.split(',').next().unwrap_or_default()).collect();
    ensure(conditions.len() == 8, format!("{} summary rows", conditions.len()))?;
    for c in Condition::ALL {
        ensure(conditions.contains(&c.name()), format!("condition {c} missing"))?;
    }
    let dots = String::from_utf8(read(&a.join("report/ablation_dotchart.csv"))?).map_err(|e| e.to_string())?;
    let flagged = dots.lines().skip(1).filter(|l| l.ends_with(",true")).count();
    ensure(flagged == 4, format!("{flagged} CutMix-flagged conditions"))?;

    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    csv_files(&a, &a, &mut fa);
    csv_files(&b, &b, &mut fb);
    ensure(fa == fb, "runs produced different file sets")?;
    for f in &fa {
        ensure(read(&a.join(f))? == read(&b.join(f))?, format!("{} differs between reruns", f.display()))?;
    }
    ensure(secs < 45.0 * 60.0, format!("took {secs:.0} s"))?;
    Ok(format!("8 rows, 4 CutMix, {} CSV files byte-identical across reruns, {secs:.0} s per run", fa.len()))
}

fn directional(root: &Path) -> Check {
    let base = ExperimentConfig::desk();
    let mut cfg = match std::env::var_os("VITLAB_CIFAR10_DIR") {
        Some(dir) => ExperimentConfig {
            dataset: DatasetSpec::Cifar10 {
                path: dir.into(),
                train_subset: Some(5000),
            },
            model: ModelConfig::desk(32, 4, 10),
            protocol: Condition::Modern.protocol(32),
            eval_samples: 1000,
            ..base
        },
        None => base,
    };
    cfg.optim.max_epochs = 40;
    cfg.optim.patience = 40;
    let source = cfg.dataset.name();
    let mut mins = Vec::new();
    for c in [Condition::Baseline, Condition::PlusCutmix] {
        let sub = ExperimentConfig {
            protocol: cfg.protocol.with_condition(c),
            out_dir: root.join(format!("directional_{}", vitlab::experiment::condition_slug(c))),
            ..cfg.clone()
        };
        let run = train(&sub, false).map_err(|e| e.to_string())?;
        let (_, s) = analyze(&sub, &run.best_checkpoint, None, &sub.out_dir).map_err(|e| e.to_string())?;
        mins.push((s.mad_min, s.test_acc));
    }
    let gap = mins[0].0 - mins[1].0;
    let expected = if gap > 0.0 { "as expected" } else { "opposite of expected" };
    Ok(format!(
        "reported: {source}, min MAD baseline {:.4} (acc {:.3}) vs +cutmix {:.4} (acc {:.3}), gap {gap:+.4}, {expected}",
        mins[0].0, mins[0].1, mins[1].0, mins[1].1
    ))
}

fn parameter_count() -> Check {
    let model = Vit::<f32>::new(ModelConfig::paper(32, 100), 0).map_err(|e| e.to_string())?;
    let n = count_params(model.params());
    let rel = (n as f64 - 2.4e6).abs() / 2.4e6;
    ensure(rel <= 0.05, format!("{n} params, {:.1}% off", rel * 100.0))?;
    Ok(format!("{n} params ({:.2}% from 2.4M)", rel * 100.0))
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let r = root.path();
    let checks: Vec<(&str, bool, Box<dyn Fn() -> Check + '_>)> = vec![
        ("metric oracle suite", true, Box::new(metric_oracles)),
        ("analytic metric anchors", true, Box::new(metric_anchors)),
        ("renormalization suite", true, Box::new(renormalization)),
        ("gradient checks", true, Box::new(gradient_checks)),
        ("cutmix suite", true, Box::new(cutmix_suite)),
        ("training sanity", true, Box::new(|| training_sanity(r))),
        ("ablation pipeline", true, Box::new(|| ablation(r))),
        ("directional locality check", false, Box::new(|| directional(r))),
        ("parameter count", true, Box::new(parameter_count)),
    ];
    let mut failed = 0;
    for (name, hard, check) in &checks {
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match result {
            Ok(msg) => println!("PASS {name}: {msg}"),
            Err(msg) => {
                println!("FAIL {name}: {msg}");
                if *hard {
                    failed += 1;
                }
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
