use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, NormStats};
use crate::seed;

const CHANNELS: usize = 3;

/// Class-conditional RGB images: an oriented sinusoidal grating whose angle
/// depends on the class, a faint class tint, a random phase per image and
/// Gaussian pixel noise. Labels are laid out class-major.
pub fn synthetic_dataset(n_per_class: usize, n_classes: usize, size: usize, seed_value: u64) -> Dataset {
    assert!(n_classes >= 1 && n_classes <= usize::from(u16::MAX));
    let mut rng = seed::stream(seed_value, "synthetic", &[]);
    let noise = Normal::new(0.0, 0.12).expect("valid normal");
    let plane = size * size;
    let mut images = Vec::with_capacity(n_classes * n_per_class * CHANNELS * plane);
    let mut labels = Vec::with_capacity(n_classes * n_per_class);
    let freq = 2.0 * std::f64::consts::PI * 1.5 / size as f64;
    for class in 0..n_classes {
        let theta = std::f64::consts::PI * class as f64 / n_classes as f64;
        let (dx, dy) = (theta.cos(), theta.sin());
        let tint: Vec<f64> = (0..CHANNELS)
            .map(|c| {
                let t = class as f64 / n_classes as f64 + c as f64 / CHANNELS as f64;
                0.03 * (2.0 * std::f64::consts::PI * t).cos()
            })
            .collect();
        for _ in 0..n_per_class {
            let phase = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
            let amp = 0.22 + 0.1 * rng.random::<f64>();
            for &t in &tint {
                for y in 0..size {
                    for x in 0..size {
                        let proj = x as f64 * dx + y as f64 * dy;
                        let v = 0.5 + t + amp * (freq * proj + phase).sin() + noise.sample(&mut rng);
                        images.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                    }
                }
            }
            labels.push(class as u16);
        }
    }
    Dataset::new(
        "synthetic",
        CHANNELS,
        size,
        images,
        labels,
        n_classes,
        NormStats::synthetic(CHANNELS),
    )
    .expect("synthetic dataset is well formed")
}
