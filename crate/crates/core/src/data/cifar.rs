use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, DataError, Dataset, NormStats};

const PIXELS: usize = 3 * 32 * 32;
/// 1 label byte + 3072 pixel bytes.
pub const CIFAR10_RECORD: usize = 1 + PIXELS;
/// Coarse label byte, fine label byte, then 3072 pixel bytes.
pub const CIFAR100_RECORD: usize = 2 + PIXELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CifarVariant {
    #[serde(rename = "cifar10")]
    Cifar10,
    #[serde(rename = "cifar100")]
    Cifar100,
}

impl CifarVariant {
    pub fn record_size(self) -> usize {
        match self {
            CifarVariant::Cifar10 => CIFAR10_RECORD,
            CifarVariant::Cifar100 => CIFAR100_RECORD,
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    fn files(self, train: bool) -> Vec<&'static str> {
        match (self, train) {
            (CifarVariant::Cifar10, true) => vec![
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
            (CifarVariant::Cifar10, false) => vec!["test_batch.bin"],
            (CifarVariant::Cifar100, true) => vec!["train.bin"],
            (CifarVariant::Cifar100, false) => vec!["test.bin"],
        }
    }

    fn subdir(self) -> &'static str {
        match self {
            CifarVariant::Cifar10 => "cifar-10-batches-bin",
            CifarVariant::Cifar100 => "cifar-100-binary",
        }
    }
}

fn resolve_dir(dir: &Path, variant: CifarVariant, first: &str) -> PathBuf {
    let nested = dir.join(variant.subdir());
    if !dir.join(first).exists() && nested.join(first).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Parses the official CIFAR binary batches in `dir` (or its standard
/// extracted subdirectory). `train` selects the training files, otherwise the
/// test file. Files are read in canonical name order.
pub fn load_cifar(dir: &Path, variant: CifarVariant, train: bool) -> Result<Dataset, DataError> {
    let files = variant.files(train);
    let dir = resolve_dir(dir, variant, files[0]);
    let record = variant.record_size();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for name in files {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        if bytes.len() % record != 0 {
            return Err(DataError::Truncated {
                path,
                offset: bytes.len() / record * record,
                record,
            });
        }
        for (k, rec) in bytes.chunks_exact(record).enumerate() {
            let label = match variant {
                CifarVariant::Cifar10 => rec[0],
                CifarVariant::Cifar100 => rec[1],
            };
            if usize::from(label) >= variant.n_classes() {
                return Err(DataError::Format {
                    path,
                    detail: format!("label {label} at byte offset {}", k * record),
                });
            }
            labels.push(u16::from(label));
            images.extend_from_slice(&rec[record - PIXELS..]);
        }
    }
    let (name, norm) = match variant {
        CifarVariant::Cifar10 => ("cifar10", NormStats::cifar10()),
        CifarVariant::Cifar100 => ("cifar100", NormStats::cifar100()),
    };
    Dataset::new(name, 3, 32, images, labels, variant.n_classes(), norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_strides() {
        assert_eq!(CIFAR10_RECORD, 3073);
        assert_eq!(CIFAR100_RECORD, 3074);
    }

    #[test]
    fn parses_cifar100_fine_label_and_reports_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![7u8, 42];
        rec.extend((0..PIXELS).map(|i| (i % 251) as u8));
        std::fs::write(dir.path().join("test.bin"), &rec).unwrap();
        let ds = load_cifar(dir.path(), CifarVariant::Cifar100, false).unwrap();
        assert_eq!(ds.labels, vec![42]);
        assert_eq!(ds.image(0)[..3], [0, 1, 2]);

        rec.extend_from_slice(&[1, 2, 3]);
        std::fs::write(dir.path().join("test.bin"), &rec).unwrap();
        match load_cifar(dir.path(), CifarVariant::Cifar100, false) {
            Err(DataError::Truncated { offset, record, path }) => {
                assert_eq!((offset, record), (3074, 3074));
                assert!(path.ends_with("test.bin"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_cifar(dir.path(), CifarVariant::Cifar10, true).unwrap_err();
        assert!(err.to_string().contains("data_batch_1.bin"));
    }
}
