//! One CutMix draw on a synthetic batch, then every ablation condition's
//! soft targets for the same batch.
//!
//!     cargo run --example cutmix

use vitlab::augment::{apply_protocol, cutmix_batch, one_hot, Condition};
use vitlab::data::synthetic_dataset;
use vitlab::seed;

fn main() {
    let ds = synthetic_dataset(2, 4, 16, 3);
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut batch = ds.unit_batch(&idx);
    let mut targets = one_hot(&ds.labels, 4);
    let mut rng = seed::stream(3, "example", &[]);

    let out = cutmix_batch(&mut batch, &mut targets, 4, 1.0, 1.0, &mut rng);
    let bbox = out.bbox.expect("p = 1");
    println!(
        "lambda drawn {:.4}, box x[{}..{}) y[{}..{}), area-corrected lambda {:.4}",
        out.lambda_draw, bbox.x1, bbox.x2, bbox.y1, bbox.y2, out.lambda
    );
    for i in 0..ds.len() {
        let row: Vec<String> = targets[i * 4..(i + 1) * 4].iter().map(|t| format!("{t:.3}")).collect();
        println!("  image {i} (label {}, partner {}): [{}]", ds.labels[i], out.partner[i], row.join(", "));
    }

    println!();
    for c in Condition::ALL {
        let mut rng = seed::stream(3, "example", &[1]);
        let b = apply_protocol(ds.unit_batch(&idx), &ds.labels, 4, &c.protocol(16), &mut rng);
        let row: Vec<String> = b.target_row(0).iter().map(|t| format!("{t:.3}")).collect();
        println!("{:>22}: image 0 target [{}]", c.name(), row.join(", "));
    }
}
