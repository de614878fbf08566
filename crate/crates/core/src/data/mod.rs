//! Datasets, splits, normalization and seeded batching.
//!
//! Images are stored as raw `u8` in `[B, C, S, S]` channel-major order and
//! only turned into floats per batch.

mod cifar;
mod split;
mod synthetic;
mod tiny_imagenet;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

pub use cifar::{load_cifar, CifarVariant, CIFAR100_RECORD, CIFAR10_RECORD};
pub use split::{
    batch_iter, sample_indices, stratified_split, stratified_split_indices, stratified_subset, SplitIndices,
    SplitSpec, MIN_CLASS_SIZE,
};
pub use synthetic::synthetic_dataset;
pub use tiny_imagenet::{
    load_packed, load_tiny_imagenet, read_packed, write_packed, Packed, PACKED_MAGIC, PACKED_VERSION,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: truncated record at byte offset {offset} (record size {record})")]
    Truncated {
        path: PathBuf,
        offset: usize,
        record: usize,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("{path}: unknown class id {class}")]
    UnknownClass { path: PathBuf, class: String },
    #[error("{path}: image decode failed: {detail}")]
    Decode { path: PathBuf, detail: String },
    #[error("split error: {0}")]
    Split(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DataError {
    let path = path.into();
    move |source| DataError::Io { path, source }
}

/// Per-channel mean and standard deviation of pixel/255.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn cifar10() -> Self {
        Self {
            mean: vec![0.4914, 0.4822, 0.4465],
            std: vec![0.2470, 0.2435, 0.2616],
        }
    }

    pub fn cifar100() -> Self {
        Self {
            mean: vec![0.5071, 0.4865, 0.4409],
            std: vec![0.2673, 0.2564, 0.2762],
        }
    }

    pub fn tiny_imagenet() -> Self {
        Self {
            mean: vec![0.4802, 0.4481, 0.3975],
            std: vec![0.2770, 0.2691, 0.2821],
        }
    }

    pub fn synthetic(channels: usize) -> Self {
        Self {
            mean: vec![0.5; channels],
            std: vec![0.25; channels],
        }
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub channels: usize,
    pub size: usize,
    /// `[len, channels, size, size]` raw pixels.
    pub images: Vec<u8>,
    pub labels: Vec<u16>,
    pub n_classes: usize,
    pub norm: NormStats,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        channels: usize,
        size: usize,
        images: Vec<u8>,
        labels: Vec<u16>,
        n_classes: usize,
        norm: NormStats,
    ) -> Result<Self, DataError> {
        let ds = Self {
            name: name.into(),
            channels,
            size,
            images,
            labels,
            n_classes,
            norm,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.images.len() != self.labels.len() * self.image_len() {
            return Err(DataError::Invalid(format!(
                "{} pixel bytes for {} images of {} bytes",
                self.images.len(),
                self.labels.len(),
                self.image_len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| usize::from(l) >= self.n_classes) {
            return Err(DataError::Invalid(format!("label {bad} outside [0, {})", self.n_classes)));
        }
        if self.norm.mean.len() != self.channels || self.norm.std.len() != self.channels {
            return Err(DataError::Invalid("normalization stats do not match channel count".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.size * self.size
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[usize::from(l)] += 1;
        }
        counts
    }

    /// New dataset holding `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            name: self.name.clone(),
            channels: self.channels,
            size: self.size,
            images,
            labels,
            n_classes: self.n_classes,
            norm: self.norm.clone(),
        }
    }

    /// Pixels of `indices` scaled to `[0, 1]`.
    pub fn unit_batch(&self, indices: &[usize]) -> ImageBatch {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend(self.image(i).iter().map(|&p| f32::from(p) / 255.0));
        }
        ImageBatch {
            n: indices.len(),
            channels: self.channels,
            size: self.size,
            data,
        }
    }

    /// Normalized float tensor of the whole dataset.
    pub fn normalize<T: Scalar>(&self) -> Tensor<T> {
        let all: Vec<usize> = (0..self.len()).collect();
        let mut batch = self.unit_batch(&all);
        normalize_in_place(&mut batch, &self.norm);
        batch.to_tensor()
    }
}

/// Float images `[n, channels, size, size]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub n: usize,
    pub channels: usize,
    pub size: usize,
    pub data: Vec<f32>,
}

impl ImageBatch {
    pub fn image_len(&self) -> usize {
        self.channels * self.size * self.size
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn image_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.image_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            vec![self.n, self.channels, self.size, self.size],
            self.data.iter().map(|&v| T::from_f64(f64::from(v))).collect(),
        )
        .expect("batch shape")
    }
}

/// `(x − mean) / std` per channel on `[0, 1]` pixels.
pub fn normalize_in_place(batch: &mut ImageBatch, stats: &NormStats) {
    let plane = batch.size * batch.size;
    let c = batch.channels;
    for (k, chunk) in batch.data.chunks_mut(plane).enumerate() {
        let ch = k % c;
        let (m, s) = (stats.mean[ch] as f32, stats.std[ch] as f32);
        chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
    }
}

pub fn denormalize_in_place(batch: &mut ImageBatch, stats: &NormStats) {
    let plane = batch.size * batch.size;
    let c = batch.channels;
    for (k, chunk) in batch.data.chunks_mut(plane).enumerate() {
        let ch = k % c;
        let (m, s) = (stats.mean[ch] as f32, stats.std[ch] as f32);
        chunk.iter_mut().for_each(|v| *v = *v * s + m);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new("t", 3, 2, (0..24).map(|v| (v * 10) as u8).collect(), vec![0, 1], 2, NormStats::cifar10()).unwrap()
    }

    #[test]
    fn labels_must_fit_classes() {
        let e = Dataset::new("t", 1, 1, vec![0, 0], vec![0, 3], 2, NormStats::identity(1));
        assert!(matches!(e, Err(DataError::Invalid(_))));
    }

    #[test]
    fn normalize_examples() {
        // pixel/255 == mean -> 0
        let stats = NormStats {
            mean: vec![51.0 / 255.0],
            std: vec![0.5],
        };
        let mut b = ImageBatch {
            n: 1,
            channels: 1,
            size: 1,
            data: vec![51.0 / 255.0],
        };
        normalize_in_place(&mut b, &stats);
        assert!(b.data[0].abs() < 1e-7);

        let ds = Dataset::new("t", 1, 2, vec![0, 51, 102, 255], vec![0], 1, NormStats::identity(1)).unwrap();
        let t = ds.normalize::<f64>();
        let expect: Vec<f64> = [0u8, 51, 102, 255].iter().map(|&p| f64::from(f32::from(p) / 255.0)).collect();
        assert_eq!(t.data(), expect.as_slice());
    }

    #[test]
    fn normalization_is_invertible() {
        let ds = tiny();
        let all = [0, 1];
        let orig = ds.unit_batch(&all);
        let mut b = orig.clone();
        normalize_in_place(&mut b, &ds.norm);
        denormalize_in_place(&mut b, &ds.norm);
        for (x, y) in b.data.iter().zip(&orig.data) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn subset_keeps_order() {
        let ds = tiny();
        let s = ds.subset(&[1, 0]);
        assert_eq!(s.labels, vec![1, 0]);
        assert_eq!(s.image(0), ds.image(1));
    }
}
