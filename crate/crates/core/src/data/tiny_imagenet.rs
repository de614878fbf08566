use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{io_err, DataError, Dataset, NormStats};

pub const PACKED_MAGIC: &[u8; 4] = b"VLPK";
pub const PACKED_VERSION: u32 = 1;

const SIZE: usize = 64;
const CHANNELS: usize = 3;
const N_CLASSES: usize = 200;

/// Raw contents of a packed file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packed {
    pub channels: usize,
    pub size: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u16>,
}

/// Writes `ds` in the packed layout: magic, version u32, n u32, C u8, S u16,
/// then per image a u16 label followed by C·S·S pixel bytes. Little-endian.
pub fn write_packed<W: Write>(mut w: W, ds: &Dataset) -> std::io::Result<()> {
    let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidInput, m.to_string());
    let n = u32::try_from(ds.len()).map_err(|_| bad("too many images"))?;
    let c = u8::try_from(ds.channels).map_err(|_| bad("too many channels"))?;
    let s = u16::try_from(ds.size).map_err(|_| bad("image too large"))?;
    w.write_all(PACKED_MAGIC)?;
    w.write_all(&PACKED_VERSION.to_le_bytes())?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&[c])?;
    w.write_all(&s.to_le_bytes())?;
    for i in 0..ds.len() {
        w.write_all(&ds.labels[i].to_le_bytes())?;
        w.write_all(ds.image(i))?;
    }
    w.flush()
}

pub fn read_packed(bytes: &[u8], path: &Path) -> Result<Packed, DataError> {
    let fmt = |detail: String| DataError::Format {
        path: path.to_path_buf(),
        detail,
    };
    const HEADER: usize = 4 + 4 + 4 + 1 + 2;
    if bytes.len() < HEADER {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            offset: 0,
            record: HEADER,
        });
    }
    if &bytes[..4] != PACKED_MAGIC {
        return Err(fmt("bad magic, expected VLPK".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != PACKED_VERSION {
        return Err(fmt(format!("unsupported packed version {version}")));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let channels = usize::from(bytes[12]);
    let size = usize::from(u16::from_le_bytes(bytes[13..15].try_into().expect("2 bytes")));
    let pixels = channels * size * size;
    let record = 2 + pixels;
    let body = &bytes[HEADER..];
    if body.len() != n * record {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            offset: HEADER + body.len().min(n * record) / record * record,
            record,
        });
    }
    let mut images = Vec::with_capacity(n * pixels);
    let mut labels = Vec::with_capacity(n);
    for rec in body.chunks_exact(record) {
        labels.push(u16::from_le_bytes([rec[0], rec[1]]));
        images.extend_from_slice(&rec[2..]);
    }
    Ok(Packed {
        channels,
        size,
        images,
        labels,
    })
}

/// Reads a packed file into a dataset with the given class count and stats.
pub fn load_packed(path: &Path, name: &str, n_classes: usize, norm: NormStats) -> Result<Dataset, DataError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let p = read_packed(&bytes, path)?;
    Dataset::new(name, p.channels, p.size, p.images, p.labels, n_classes, norm)
}

fn decode(path: &Path) -> Result<Vec<u8>, DataError> {
    let img = image::open(path).map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    if rgb.width() as usize != SIZE || rgb.height() as usize != SIZE {
        return Err(DataError::Decode {
            path: path.to_path_buf(),
            detail: format!("expected {SIZE}x{SIZE}, got {}x{}", rgb.width(), rgb.height()),
        });
    }
    // HWC -> CHW
    let hwc = rgb.into_raw();
    let mut chw = vec![0u8; CHANNELS * SIZE * SIZE];
    for (p, px) in hwc.chunks_exact(CHANNELS).enumerate() {
        for c in 0..CHANNELS {
            chw[c * SIZE * SIZE + p] = px[c];
        }
    }
    Ok(chw)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<_, _>>()?;
    out.sort();
    Ok(out)
}

fn class_ids(root: &Path) -> Result<Vec<String>, DataError> {
    let wnids = root.join("wnids.txt");
    let mut ids: Vec<String> = if wnids.exists() {
        std::fs::read_to_string(&wnids)
            .map_err(io_err(&wnids))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()
    } else {
        sorted_entries(&root.join("train"))?
            .into_iter()
            .filter(|p| p.is_dir())
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect()
    };
    ids.sort();
    ids.dedup();
    Ok(ids)
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .map(|e| matches!(e.to_ascii_lowercase().to_str(), Some("jpeg" | "jpg" | "png")))
        .unwrap_or(false)
}

/// Loads Tiny-ImageNet. `path` may be a packed file, a directory holding
/// `train.vlpk` / `val.vlpk`, or the standard extracted directory layout.
/// `train = false` selects the official validation split (used as test set).
/// Class indices follow the sorted class ids; files are read in sorted order.
pub fn load_tiny_imagenet(path: &Path, train: bool) -> Result<Dataset, DataError> {
    let norm = NormStats::tiny_imagenet();
    if path.is_file() {
        return load_packed(path, "tiny-imagenet", N_CLASSES, norm);
    }
    let packed = path.join(if train { "train.vlpk" } else { "val.vlpk" });
    if packed.is_file() {
        return load_packed(&packed, "tiny-imagenet", N_CLASSES, norm);
    }

    let ids = class_ids(path)?;
    let index: BTreeMap<&str, u16> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i as u16)).collect();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    if train {
        for (k, id) in ids.iter().enumerate() {
            let dir = path.join("train").join(id).join("images");
            for file in sorted_entries(&dir)?.into_iter().filter(|p| is_image(p)) {
                images.extend(decode(&file)?);
                labels.push(k as u16);
            }
        }
    } else {
        let ann = path.join("val").join("val_annotations.txt");
        let text = std::fs::read_to_string(&ann).map_err(io_err(&ann))?;
        let mut rows: Vec<(String, u16)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut cols = line.split('\t');
            let (Some(file), Some(id)) = (cols.next(), cols.next()) else {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(DataError::Format {
                    path: ann,
                    detail: format!("line {}: expected tab-separated file and class id", lineno + 1),
                });
            };
            let &label = index.get(id).ok_or_else(|| DataError::UnknownClass {
                path: ann.clone(),
                class: id.to_string(),
            })?;
            rows.push((file.to_string(), label));
        }
        rows.sort();
        for (file, label) in rows {
            images.extend(decode(&path.join("val").join("images").join(file))?);
            labels.push(label);
        }
    }
    Dataset::new("tiny-imagenet", CHANNELS, SIZE, images, labels, ids.len().max(1), norm)
}
