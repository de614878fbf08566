use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::seed;

/// Smallest class size accepted by [`stratified_split`].
pub const MIN_CLASS_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: seed::DEFAULT_SEED,
        }
    }
}

/// Indices into the source dataset, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

fn per_class(ds: &Dataset) -> Vec<Vec<usize>> {
    let mut classes = vec![Vec::new(); ds.n_classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        classes[usize::from(l)].push(i);
    }
    classes
}

/// Index-level stratified split: per class, indices are sorted, shuffled
/// with a stream derived from `(seed, class)`, and the first
/// `round(train_fraction · n_class)` go to training.
pub fn stratified_split_indices(ds: &Dataset, spec: &SplitSpec) -> Result<SplitIndices, DataError> {
    if !(0.0..=1.0).contains(&spec.train_fraction) {
        return Err(DataError::Split(format!("train_fraction {} outside [0, 1]", spec.train_fraction)));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (class, mut idx) in per_class(ds).into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < MIN_CLASS_SIZE {
            return Err(DataError::Split(format!(
                "class {class} has {} samples, need at least {MIN_CLASS_SIZE}",
                idx.len()
            )));
        }
        let mut rng = seed::stream(spec.seed, "split", &[class as u64]);
        idx.shuffle(&mut rng);
        let n_train = (spec.train_fraction * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(SplitIndices { train, val })
}

/// Splits `ds` into `(train, val)` datasets.
pub fn stratified_split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset), DataError> {
    let idx = stratified_split_indices(ds, spec)?;
    Ok((ds.subset(&idx.train), ds.subset(&idx.val)))
}

/// Stratified subset of roughly `n` samples keeping class proportions;
/// per-class quota is `round(n · n_class / len)`.
pub fn stratified_subset(ds: &Dataset, n: usize, seed_value: u64) -> Dataset {
    if n >= ds.len() {
        return ds.clone();
    }
    let mut keep = Vec::with_capacity(n);
    for (class, mut idx) in per_class(ds).into_iter().enumerate() {
        let quota = (n as f64 * idx.len() as f64 / ds.len() as f64).round() as usize;
        let mut rng = seed::stream(seed_value, "subset", &[class as u64]);
        idx.shuffle(&mut rng);
        keep.extend_from_slice(&idx[..quota.min(idx.len())]);
    }
    keep.sort_unstable();
    ds.subset(&keep)
}

/// Seeded sample of `k` distinct indices from `0..n`, ascending.
pub fn sample_indices(n: usize, k: usize, seed_value: u64, label: &str) -> Vec<usize> {
    let mut rng = seed::stream(seed_value, label, &[]);
    let mut idx = rand::seq::index::sample(&mut rng, n, k.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

/// Shuffled mini-batches of `0..n` for one epoch. The order depends only on
/// `(seed, epoch)`; the final partial batch is kept.
pub fn batch_iter(n: usize, batch_size: usize, seed_value: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::stream(seed_value, "batch", &[epoch as u64]);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NormStats;

    fn labelled(counts: &[usize]) -> Dataset {
        let labels: Vec<u16> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c as u16, n))
            .collect();
        Dataset::new("l", 1, 1, vec![0; labels.len()], labels, counts.len(), NormStats::identity(1)).unwrap()
    }

    #[test]
    fn cifar_sized_split_is_exact() {
        let ds = labelled(&[5000; 10]);
        let (tr, va) = stratified_split(&ds, &SplitSpec::default()).unwrap();
        assert_eq!((tr.len(), va.len()), (40_000, 10_000));
        assert!(tr.class_counts().iter().all(|&c| c == 4000));
        assert!(va.class_counts().iter().all(|&c| c == 1000));
    }

    #[test]
    fn split_partitions_and_is_deterministic() {
        let ds = labelled(&[7, 13, 22]);
        let spec = SplitSpec { train_fraction: 0.8, seed: 3 };
        let a = stratified_split_indices(&ds, &spec).unwrap();
        let b = stratified_split_indices(&ds, &spec).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..42).collect::<Vec<_>>());

        let c = stratified_split_indices(&ds, &SplitSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(a.train, c.train);
        let count = |idx: &[usize]| ds.subset(idx).class_counts();
        assert_eq!(count(&a.train), count(&c.train));
        // round(0.8 * n)
        assert_eq!(count(&a.train), vec![6, 10, 18]);
    }

    #[test]
    fn tiny_class_is_rejected() {
        let ds = labelled(&[10, 4]);
        assert!(matches!(stratified_split(&ds, &SplitSpec::default()), Err(DataError::Split(_))));
    }

    #[test]
    fn batches_keep_partial_tail() {
        let b = batch_iter(10, 4, 1, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(b, batch_iter(10, 4, 1, 0));
        let e1 = batch_iter(10, 4, 1, 1);
        assert_ne!(b, e1);
        let mut x: Vec<usize> = b.concat();
        let mut y: Vec<usize> = e1.concat();
        x.sort_unstable();
        y.sort_unstable();
        assert_eq!(x, y);
    }

    #[test]
    fn subset_preserves_proportions() {
        let ds = labelled(&[100, 50]);
        let s = stratified_subset(&ds, 30, 9);
        assert_eq!(s.class_counts(), vec![20, 10]);
    }

    #[test]
    fn sample_is_distinct_and_seeded() {
        let s = sample_indices(100, 10, 5, "eval");
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s, sample_indices(100, 10, 5, "eval"));
    }
}
