//! MAD and normalized entropy on hand-built attention patterns over an 8×8
//! patch grid, including the CLS-drop renormalization step.
//!
//!     cargo run --example metric_anchors

use vitlab::metrics::{entropy, exclude_cls_renormalize, mad, GridGeometry, HeadRef, RenormalizedAttention};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let side = 8;
    let geom = GridGeometry::new(side)?;
    let n = geom.num_patches();

    let mut eye = vec![0.0; n * n];
    (0..n).for_each(|i| eye[i * n + i] = 1.0);
    let uniform = vec![1.0 / n as f64; n * n];

    // each query attends to its 4-neighborhood
    let mut local = vec![0.0; n * n];
    for i in 0..n {
        let (r, c) = geom.coord(i);
        let nbrs: Vec<usize> = (0..n)
            .filter(|&j| {
                let (rj, cj) = geom.coord(j);
                r.abs_diff(rj) + c.abs_diff(cj) == 1
            })
            .collect();
        for &j in &nbrs {
            local[i * n + j] = 1.0 / nbrs.len() as f64;
        }
    }

    println!("{:<12} {:>8} {:>8}", "pattern", "MAD", "entropy");
    for (name, a) in [("identity", eye), ("neighbors", local), ("uniform", uniform)] {
        let ra = RenormalizedAttention::new(n, a)?;
        println!("{name:<12} {:>8.4} {:>8.4}", mad(&ra, &geom), entropy(&ra));
    }
    println!("corner distance: {}", geom.distance(0, n - 1));

    // Half of every row on CLS: dropping it and renormalizing restores uniform.
    let full = n + 1;
    let mut with_cls = vec![0.5 / n as f64; full * full];
    (0..full).for_each(|q| with_cls[q * full] = 0.5);
    let ra = exclude_cls_renormalize(&with_cls, &geom, HeadRef::default())?;
    println!("after CLS drop: MAD {:.4}, entropy {:.4}", mad(&ra, &geom), entropy(&ra));
    Ok(())
}
