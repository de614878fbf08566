//! Training-time augmentation: crop, flip, color jitter, CutMix with
//! area-corrected targets, and label smoothing.
//!
//! Everything works on `[0, 1]` images before normalization, in place, and
//! draws from an explicit rng so a batch is reproducible from its stream.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ImageBatch;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid protocol: {0}")]
    Config(String),
    #[error("unknown condition {0:?}")]
    UnknownCondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterStrengths {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl Default for JitterStrengths {
    fn default() -> Self {
        Self {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
        }
    }
}

impl JitterStrengths {
    pub fn none() -> Self {
        Self {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
        }
    }
}

/// Whether label smoothing is applied to the endpoint labels before CutMix
/// interpolation or to the mixed targets afterwards. By linearity both give
/// the same targets; the switch exists so that can be checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingOrder {
    #[default]
    BeforeMix,
    AfterMix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub name: String,
    pub random_crop: bool,
    pub crop_pad: usize,
    pub hflip: bool,
    pub hflip_p: f64,
    pub color_jitter: bool,
    pub jitter: JitterStrengths,
    pub cutmix: bool,
    pub cutmix_alpha: f64,
    pub cutmix_p: f64,
    pub label_smoothing: bool,
    pub smoothing_eps: f64,
    #[serde(default)]
    pub smoothing_order: SmoothingOrder,
}

impl ProtocolConfig {
    /// Every stage off, padding 0: an exact identity.
    pub fn identity() -> Self {
        Self {
            name: "identity".into(),
            random_crop: false,
            crop_pad: 0,
            hflip: false,
            hflip_p: 0.5,
            color_jitter: false,
            jitter: JitterStrengths::none(),
            cutmix: false,
            cutmix_alpha: 1.0,
            cutmix_p: 0.0,
            label_smoothing: false,
            smoothing_eps: 0.0,
            smoothing_order: SmoothingOrder::BeforeMix,
        }
    }

    pub fn baseline(image_size: usize) -> Self {
        Condition::Baseline.protocol(image_size)
    }

    pub fn modern(image_size: usize) -> Self {
        Condition::Modern.protocol(image_size)
    }

    /// Same strengths with the three lattice flags set from `condition`.
    pub fn with_condition(&self, condition: Condition) -> Self {
        let (aug, cutmix, smoothing) = condition.flags();
        Self {
            name: condition.name().to_string(),
            color_jitter: aug,
            cutmix,
            label_smoothing: smoothing,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::Config(m));
        if !(0.0..=1.0).contains(&self.hflip_p) {
            return bad(format!("hflip_p {} outside [0, 1]", self.hflip_p));
        }
        let j = &self.jitter;
        for (n, s) in [("brightness", j.brightness), ("contrast", j.contrast), ("saturation", j.saturation)] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("{n} strength {s} must be >= 0"));
            }
        }
        if !(self.cutmix_alpha > 0.0 && self.cutmix_alpha.is_finite()) {
            return bad(format!("cutmix_alpha {} must be > 0", self.cutmix_alpha));
        }
        if !(0.0..=1.0).contains(&self.cutmix_p) {
            return bad(format!("cutmix_p {} outside [0, 1]", self.cutmix_p));
        }
        if !(0.0..1.0).contains(&self.smoothing_eps) {
            return bad(format!("smoothing_eps {} outside [0, 1)", self.smoothing_eps));
        }
        Ok(())
    }
}

/// The eight presence/absence combinations of {color augmentation, CutMix,
/// label smoothing}. Crop and flip are always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "+autoaugment")]
    PlusAutoaugment,
    #[serde(rename = "+cutmix")]
    PlusCutmix,
    #[serde(rename = "+labelsmoothing")]
    PlusLabelsmoothing,
    #[serde(rename = "-labelsmoothing")]
    MinusLabelsmoothing,
    #[serde(rename = "-cutmix")]
    MinusCutmix,
    #[serde(rename = "-autoaugment")]
    MinusAutoaugment,
    #[serde(rename = "modern")]
    Modern,
}

impl Condition {
    pub const ALL: [Condition; 8] = [
        Condition::Baseline,
        Condition::PlusAutoaugment,
        Condition::PlusCutmix,
        Condition::PlusLabelsmoothing,
        Condition::MinusLabelsmoothing,
        Condition::MinusCutmix,
        Condition::MinusAutoaugment,
        Condition::Modern,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::PlusAutoaugment => "+autoaugment",
            Condition::PlusCutmix => "+cutmix",
            Condition::PlusLabelsmoothing => "+labelsmoothing",
            Condition::MinusLabelsmoothing => "-labelsmoothing",
            Condition::MinusCutmix => "-cutmix",
            Condition::MinusAutoaugment => "-autoaugment",
            Condition::Modern => "modern",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, AugmentError> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| AugmentError::UnknownCondition(name.to_string()))
    }

    /// `(aug, cutmix, smoothing)`.
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            Condition::Baseline => (false, false, false),
            Condition::PlusAutoaugment => (true, false, false),
            Condition::PlusCutmix => (false, true, false),
            Condition::PlusLabelsmoothing => (false, false, true),
            Condition::MinusLabelsmoothing => (true, true, false),
            Condition::MinusCutmix => (true, false, true),
            Condition::MinusAutoaugment => (false, true, true),
            Condition::Modern => (true, true, true),
        }
    }

    pub fn from_flags(aug: bool, cutmix: bool, smoothing: bool) -> Self {
        Self::ALL
            .into_iter()
            .find(|c| c.flags() == (aug, cutmix, smoothing))
            .expect("lattice is complete")
    }

    pub fn has_cutmix(self) -> bool {
        self.flags().1
    }

    /// Protocol with the standard strengths: jitter 0.4, CutMix α=1.0 and
    /// p=0.6, smoothing ε=0.05, zero padding of `image_size / 8`.
    pub fn protocol(self, image_size: usize) -> ProtocolConfig {
        let (aug, cutmix, smoothing) = self.flags();
        ProtocolConfig {
            name: self.name().to_string(),
            random_crop: true,
            crop_pad: image_size / 8,
            hflip: true,
            hflip_p: 0.5,
            color_jitter: aug,
            jitter: JitterStrengths::default(),
            cutmix,
            cutmix_alpha: 1.0,
            cutmix_p: 0.6,
            label_smoothing: smoothing,
            smoothing_eps: 0.05,
            smoothing_order: SmoothingOrder::BeforeMix,
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Augmented images and soft targets `[n, n_classes]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelBatch {
    pub images: ImageBatch,
    pub targets: Vec<f64>,
    pub n_classes: usize,
    /// Present when CutMix was enabled for this batch.
    pub cutmix: Option<CutMixOutcome>,
}

impl SoftLabelBatch {
    pub fn target_row(&self, i: usize) -> &[f64] {
        &self.targets[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn targets_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            vec![self.images.n, self.n_classes],
            self.targets.iter().map(|&v| T::from_f64(v)).collect(),
        )
        .expect("target shape")
    }
}

pub fn one_hot(labels: &[u16], n_classes: usize) -> Vec<f64> {
    let mut t = vec![0.0; labels.len() * n_classes];
    for (i, &l) in labels.iter().enumerate() {
        t[i * n_classes + usize::from(l)] = 1.0;
    }
    t
}

/// Zero-pads by `pad` and crops back at an offset uniform over
/// `{0..2·pad}²`, independently per image.
pub fn random_crop<R: Rng + ?Sized>(batch: &mut ImageBatch, pad: usize, rng: &mut R) {
    if pad == 0 {
        return;
    }
    let s = batch.size;
    let c = batch.channels;
    let mut scratch = vec![0.0f32; batch.image_len()];
    for i in 0..batch.n {
        let oy = rng.random_range(0..=2 * pad);
        let ox = rng.random_range(0..=2 * pad);
        let img = batch.image_mut(i);
        scratch.fill(0.0);
        for ch in 0..c {
            for y in 0..s {
                let sy = (y + oy) as isize - pad as isize;
                if sy < 0 || sy >= s as isize {
                    continue;
                }
                for x in 0..s {
                    let sx = (x + ox) as isize - pad as isize;
                    if sx >= 0 && sx < s as isize {
                        scratch[(ch * s + y) * s + x] = img[(ch * s + sy as usize) * s + sx as usize];
                    }
                }
            }
        }
        img.copy_from_slice(&scratch);
    }
}

/// Mirrors each image about its vertical axis with probability `p`.
pub fn hflip<R: Rng + ?Sized>(batch: &mut ImageBatch, p: f64, rng: &mut R) -> Vec<bool> {
    let s = batch.size;
    (0..batch.n)
        .map(|i| {
            let flip = rng.random_bool(p);
            if flip {
                for row in batch.image_mut(i).chunks_mut(s) {
                    row.reverse();
                }
            }
            flip
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum JitterOp {
    Brightness,
    Contrast,
    Saturation,
}

fn luma(img: &[f32], plane: usize, p: usize) -> f32 {
    0.299 * img[p] + 0.587 * img[plane + p] + 0.114 * img[2 * plane + p]
}

fn brightness(img: &mut [f32], f: f32) {
    img.iter_mut().for_each(|v| *v = (*v * f).clamp(0.0, 1.0));
}

fn contrast(img: &mut [f32], channels: usize, plane: usize, f: f32) {
    let mean = if channels == 3 {
        (0..plane).map(|p| f64::from(luma(img, plane, p))).sum::<f64>() / plane as f64
    } else {
        img.iter().map(|&v| f64::from(v)).sum::<f64>() / img.len() as f64
    } as f32;
    img.iter_mut().for_each(|v| *v = ((*v - mean) * f + mean).clamp(0.0, 1.0));
}

fn saturation(img: &mut [f32], channels: usize, plane: usize, f: f32) {
    if channels != 3 {
        return;
    }
    for p in 0..plane {
        let g = luma(img, plane, p);
        for c in 0..3 {
            let v = &mut img[c * plane + p];
            *v = ((*v - g) * f + g).clamp(0.0, 1.0);
        }
    }
}

/// Per image: factors uniform in `[1−s, 1+s]` (floored at 0) for brightness,
/// contrast and saturation, applied in a random order, clamped to `[0, 1]`.
/// Brightness scales pixels; contrast blends with the mean luma; saturation
/// blends each pixel with its own luma, so gray images are fixed points.
pub fn color_jitter<R: Rng + ?Sized>(batch: &mut ImageBatch, s: &JitterStrengths, rng: &mut R) {
    let plane = batch.size * batch.size;
    let channels = batch.channels;
    let factor = |rng: &mut R, strength: f64| -> f32 {
        let u: f64 = rng.random();
        (1.0 - strength + 2.0 * strength * u).max(0.0) as f32
    };
    for i in 0..batch.n {
        let fb = factor(rng, s.brightness);
        let fc = factor(rng, s.contrast);
        let fs = factor(rng, s.saturation);
        let mut ops = [JitterOp::Brightness, JitterOp::Contrast, JitterOp::Saturation];
        ops.shuffle(rng);
        let img = batch.image_mut(i);
        for op in ops {
            match op {
                JitterOp::Brightness if fb != 1.0 => brightness(img, fb),
                JitterOp::Contrast if fc != 1.0 => contrast(img, channels, plane, fc),
                JitterOp::Saturation if fs != 1.0 => saturation(img, channels, plane, fs),
                _ => {}
            }
        }
    }
}

/// Half-open pixel box `[x1, x2) × [y1, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutMixBox {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
}

impl CutMixBox {
    pub fn area(&self) -> usize {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    /// Square box of side `round(size · √(1−λ))` whose top-left corner is
    /// `center − ⌊side/2⌋`, clipped to the image.
    pub fn from_lambda(size: usize, lambda: f64, cx: usize, cy: usize) -> Self {
        let side = (size as f64 * (1.0 - lambda).max(0.0).sqrt()).round() as isize;
        let clip = |v: isize| v.clamp(0, size as isize) as usize;
        let x1 = cx as isize - side / 2;
        let y1 = cy as isize - side / 2;
        Self {
            x1: clip(x1),
            y1: clip(y1),
            x2: clip(x1 + side),
            y2: clip(y1 + side),
        }
    }

    /// `1 − area / size²`.
    pub fn lambda_prime(&self, size: usize) -> f64 {
        1.0 - self.area() as f64 / (size * size) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutMixOutcome {
    pub applied: bool,
    /// Raw Beta draw (1.0 when not applied).
    pub lambda_draw: f64,
    /// Area-corrected weight of each image's own label.
    pub lambda: f64,
    pub bbox: Option<CutMixBox>,
    /// Partner index of each image (identity when not applied).
    pub partner: Vec<usize>,
}

impl CutMixOutcome {
    fn pass_through(n: usize) -> Self {
        Self {
            applied: false,
            lambda_draw: 1.0,
            lambda: 1.0,
            bbox: None,
            partner: (0..n).collect(),
        }
    }
}

pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    Beta::new(alpha, alpha).expect("alpha > 0").sample(rng)
}

/// Batch-level CutMix. With probability `p` draws `λ ~ Beta(α, α)`, a box
/// via [`CutMixBox::from_lambda`] with a uniform center, and a random
/// partner permutation; the box region of each image is replaced by its
/// partner's and targets become `λ'·own + (1−λ')·partner`. Batches of fewer
/// than two images pass through.
pub fn cutmix_batch<R: Rng + ?Sized>(
    batch: &mut ImageBatch,
    targets: &mut [f64],
    n_classes: usize,
    alpha: f64,
    p: f64,
    rng: &mut R,
) -> CutMixOutcome {
    let n = batch.n;
    if n < 2 || !rng.random_bool(p) {
        return CutMixOutcome::pass_through(n);
    }
    let lambda_draw = sample_lambda(alpha, rng);
    let s = batch.size;
    let cx = rng.random_range(0..s);
    let cy = rng.random_range(0..s);
    let bbox = CutMixBox::from_lambda(s, lambda_draw, cx, cy);
    let mut partner: Vec<usize> = (0..n).collect();
    partner.shuffle(rng);
    let lambda = bbox.lambda_prime(s);

    if bbox.area() > 0 {
        let source = batch.data.clone();
        let len = batch.image_len();
        let channels = batch.channels;
        for (i, &j) in partner.iter().enumerate() {
            let src = &source[j * len..(j + 1) * len];
            let dst = batch.image_mut(i);
            for ch in 0..channels {
                for y in bbox.y1..bbox.y2 {
                    let row = (ch * s + y) * s;
                    dst[row + bbox.x1..row + bbox.x2].copy_from_slice(&src[row + bbox.x1..row + bbox.x2]);
                }
            }
        }
        let orig = targets.to_vec();
        for (i, &j) in partner.iter().enumerate() {
            for k in 0..n_classes {
                targets[i * n_classes + k] = lambda * orig[i * n_classes + k] + (1.0 - lambda) * orig[j * n_classes + k];
            }
        }
    }
    CutMixOutcome {
        applied: true,
        lambda_draw,
        lambda,
        bbox: Some(bbox),
        partner,
    }
}

/// `(1−ε)·t + ε/n_classes` elementwise.
pub fn smooth_labels(targets: &mut [f64], eps: f64, n_classes: usize) {
    if eps == 0.0 {
        return;
    }
    let u = eps / n_classes as f64;
    targets.iter_mut().for_each(|t| *t = (1.0 - eps) * *t + u);
}

/// Runs the enabled stages in order: crop, flip, color jitter, CutMix,
/// label smoothing (or smoothing before CutMix, per `smoothing_order`).
pub fn apply_protocol<R: Rng + ?Sized>(
    mut images: ImageBatch,
    labels: &[u16],
    n_classes: usize,
    cfg: &ProtocolConfig,
    rng: &mut R,
) -> SoftLabelBatch {
    debug_assert_eq!(images.n, labels.len());
    if cfg.random_crop {
        random_crop(&mut images, cfg.crop_pad, rng);
    }
    if cfg.hflip {
        hflip(&mut images, cfg.hflip_p, rng);
    }
    if cfg.color_jitter {
        color_jitter(&mut images, &cfg.jitter, rng);
    }
    let mut targets = one_hot(labels, n_classes);
    let smooth_first = cfg.smoothing_order == SmoothingOrder::BeforeMix;
    if cfg.label_smoothing && smooth_first {
        smooth_labels(&mut targets, cfg.smoothing_eps, n_classes);
    }
    let cutmix = cfg
        .cutmix
        .then(|| cutmix_batch(&mut images, &mut targets, n_classes, cfg.cutmix_alpha, cfg.cutmix_p, rng));
    if cfg.label_smoothing && !smooth_first {
        smooth_labels(&mut targets, cfg.smoothing_eps, n_classes);
    }
    SoftLabelBatch {
        images,
        targets,
        n_classes,
        cutmix,
    }
}
