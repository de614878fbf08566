//! Per-head locality metrics on captured attention.
//!
//! The CLS token (sequence position 0) is dropped from both rows and columns
//! and every remaining row is renormalized over the patches. On the result:
//!
//! * mean attention distance: `(1/N_p) Σ_i Σ_j Ã_ij · δ(i,j)`, where
//!   `δ(i,j) = ‖p_i − p_j‖ / (√2·(G−1))` on the row-major `G×G` grid;
//! * normalized entropy: `(1/N_p) Σ_i −Σ_j Ã_ij ln(Ã_ij + 1e-12)`, divided by
//!   `ln N_p`.
//!
//! Everything here is computed in `f64` regardless of the model dtype.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, Vit};
use crate::tensor::{Scalar, Tensor};

/// Stabilizer inside the entropy logarithm.
pub const ENTROPY_EPS: f64 = 1e-12;
/// Allowed deviation of an input attention row sum from 1.
pub const INPUT_ROW_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("grid side must be at least 2, got {0}")]
    Geometry(usize),
    #[error("attention has {got} entries, expected {expected}")]
    Shape { got: usize, expected: usize },
    #[error("attention row {row} sums to {sum}, not 1")]
    NotNormalized { row: usize, sum: f64 },
    #[error("zero patch mass at image {image:?}, layer {layer}, head {head}, query {query}")]
    DegenerateRow {
        image: Option<usize>,
        layer: usize,
        head: usize,
        query: usize,
    },
    #[error("model grid is {model}×{model} but geometry is {geometry}×{geometry}")]
    GridMismatch { model: usize, geometry: usize },
    #[error("incomplete head table: {0}")]
    Incomplete(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Patch coordinates and the normalized distance matrix of a `G×G` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    side: usize,
    coords: Vec<(usize, usize)>,
    delta: Vec<f64>,
}

impl GridGeometry {
    pub fn new(side: usize) -> Result<Self, MetricsError> {
        let delta = distance_matrix(side)?;
        let coords = (0..side * side).map(|i| (i / side, i % side)).collect();
        Ok(Self { side, coords, delta })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn num_patches(&self) -> usize {
        self.side * self.side
    }

    /// `(row, col)` of patch `i`.
    pub fn coord(&self, i: usize) -> (usize, usize) {
        self.coords[i]
    }

    pub fn max_distance(&self) -> f64 {
        std::f64::consts::SQRT_2 * (self.side - 1) as f64
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.delta[i * self.num_patches() + j]
    }

    /// Row-major `N_p×N_p` matrix δ.
    pub fn distances(&self) -> &[f64] {
        &self.delta
    }
}

/// `δ(i,j)` for all patch pairs of a `G×G` grid, row-major.
pub fn distance_matrix(side: usize) -> Result<Vec<f64>, MetricsError> {
    if side < 2 {
        return Err(MetricsError::Geometry(side));
    }
    let np = side * side;
    let diag = std::f64::consts::SQRT_2 * (side - 1) as f64;
    let mut out = Vec::with_capacity(np * np);
    for i in 0..np {
        let (ri, ci) = ((i / side) as f64, (i % side) as f64);
        for j in 0..np {
            let (rj, cj) = ((j / side) as f64, (j % side) as f64);
            let d = (ri - rj).hypot(ci - cj) / diag;
            out.push(d);
        }
    }
    // Opposite corners are exactly one; hypot/diag can land one ulp off.
    out[np - 1] = 1.0;
    out[(np - 1) * np] = 1.0;
    out[side - 1 + (np - side) * np] = 1.0;
    out[np - side + (side - 1) * np] = 1.0;
    Ok(out)
}

/// Patch-to-patch attention of one head whose rows are distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct RenormalizedAttention {
    n: usize,
    data: Vec<f64>,
}

impl RenormalizedAttention {
    /// Wraps an `n×n` row-stochastic matrix (rows within 1e-9 of 1).
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self, MetricsError> {
        if n < 2 || data.len() != n * n {
            return Err(MetricsError::Shape {
                got: data.len(),
                expected: n * n,
            });
        }
        for (row, r) in data.chunks(n).enumerate() {
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || r.iter().any(|&v| v < 0.0) {
                return Err(MetricsError::NotNormalized { row, sum });
            }
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Which head a matrix came from, for diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HeadRef {
    pub image: Option<usize>,
    pub layer: usize,
    pub head: usize,
}

/// Drops the CLS row and column (sequence position 0) of an `N×N` attention
/// matrix and renormalizes each patch row over the patches.
pub fn exclude_cls_renormalize<T: Scalar>(
    attention: &[T],
    geometry: &GridGeometry,
    at: HeadRef,
) -> Result<RenormalizedAttention, MetricsError> {
    let np = geometry.num_patches();
    let n = np + 1;
    if attention.len() != n * n {
        return Err(MetricsError::Shape {
            got: attention.len(),
            expected: n * n,
        });
    }
    let mut data = Vec::with_capacity(np * np);
    for q in 1..n {
        let row = &attention[q * n..(q + 1) * n];
        let total: f64 = row.iter().map(|v| v.as_f64()).sum();
        if (total - 1.0).abs() > INPUT_ROW_TOLERANCE {
            return Err(MetricsError::NotNormalized { row: q, sum: total });
        }
        let mass: f64 = row[1..].iter().map(|v| v.as_f64()).sum();
        if mass <= 0.0 {
            return Err(MetricsError::DegenerateRow {
                image: at.image,
                layer: at.layer,
                head: at.head,
                query: q,
            });
        }
        data.extend(row[1..].iter().map(|v| v.as_f64() / mass));
    }
    Ok(RenormalizedAttention { n: np, data })
}

/// Mean attention distance of one head on one image.
pub fn mad(attention: &RenormalizedAttention, geometry: &GridGeometry) -> f64 {
    let n = attention.n();
    debug_assert_eq!(n, geometry.num_patches());
    let total: f64 = attention
        .data()
        .chunks(n)
        .zip(geometry.distances().chunks(n))
        .map(|(a, d)| a.iter().zip(d).map(|(x, y)| x * y).sum::<f64>())
        .sum();
    total / n as f64
}

/// Normalized attention entropy of one head on one image.
pub fn entropy(attention: &RenormalizedAttention) -> f64 {
    let n = attention.n();
    let total: f64 = attention
        .data()
        .chunks(n)
        .map(|row| -row.iter().map(|&a| a * (a + ENTROPY_EPS).ln()).sum::<f64>())
        .sum();
    total / n as f64 / (n as f64).ln()
}

/// Image-averaged metrics of one head. `layer` and `head` are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMetrics {
    pub layer: usize,
    pub head: usize,
    pub mad_mean: f64,
    pub mad_std: f64,
    pub entropy_mean: f64,
    pub entropy_std: f64,
    pub n_images: usize,
}

/// Mean and population standard deviation, accumulated in slice order.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs the model with attention capture over `images` (already normalized,
/// `[n, C, S, S]`, in evaluation order) and averages MAD and entropy per head.
///
/// Rows come back ordered by layer, then head.
pub fn aggregate_over_images<T: Scalar>(
    model: &Vit<T>,
    images: &Tensor<T>,
    geometry: &GridGeometry,
    batch_size: usize,
) -> Result<Vec<HeadMetrics>, MetricsError> {
    let cfg = model.config();
    if cfg.grid_side() != geometry.side() {
        return Err(MetricsError::GridMismatch {
            model: cfg.grid_side(),
            geometry: geometry.side(),
        });
    }
    let shape = images.shape().to_vec();
    let n_images = shape.first().copied().unwrap_or(0);
    if n_images == 0 {
        return Err(MetricsError::Incomplete("no evaluation images".into()));
    }
    let (layers, heads) = (cfg.depth, cfg.heads);
    let per_image: usize = shape[1..].iter().product();
    let mut mads = vec![Vec::with_capacity(n_images); layers * heads];
    let mut ents = vec![Vec::with_capacity(n_images); layers * heads];
    let batch_size = batch_size.max(1);
    let mut start = 0;
    while start < n_images {
        let end = (start + batch_size).min(n_images);
        let mut bshape = shape.clone();
        bshape[0] = end - start;
        let batch = Tensor::new(bshape, images.data()[start * per_image..end * per_image].to_vec())
            .map_err(ModelError::from)?;
        let pass = model.forward(&batch, true)?;
        let capture = pass.capture.expect("capture requested");
        for b in 0..end - start {
            for l in 0..layers {
                for h in 0..heads {
                    let at = HeadRef {
                        image: Some(start + b),
                        layer: l + 1,
                        head: h + 1,
                    };
                    let ra = exclude_cls_renormalize(capture.head(b, l, h), geometry, at)?;
                    mads[l * heads + h].push(mad(&ra, geometry));
                    ents[l * heads + h].push(entropy(&ra));
                }
            }
        }
        start = end;
    }
    let mut out = Vec::with_capacity(layers * heads);
    for l in 0..layers {
        for h in 0..heads {
            let (mad_mean, mad_std) = mean_std(&mads[l * heads + h]);
            let (entropy_mean, entropy_std) = mean_std(&ents[l * heads + h]);
            out.push(HeadMetrics {
                layer: l + 1,
                head: h + 1,
                mad_mean,
                mad_std,
                entropy_mean,
                entropy_std,
                n_images,
            });
        }
    }
    Ok(out)
}

/// 1-based `(layer, head)` position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadPos {
    pub layer: usize,
    pub head: usize,
}

/// Head-table summary: global ranges, per-layer rank profiles and L×H grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub layers: usize,
    pub heads: usize,
    pub mad_min: f64,
    pub mad_max: f64,
    pub entropy_min: f64,
    pub entropy_max: f64,
    pub mad_argmin: HeadPos,
    pub mad_argmax: HeadPos,
    pub entropy_argmin: HeadPos,
    pub entropy_argmax: HeadPos,
    /// Per layer, head MADs sorted ascending (rank 1 first).
    pub rank_profiles: Vec<Vec<f64>>,
    pub heatmap_mad: Vec<Vec<f64>>,
    pub heatmap_entropy: Vec<Vec<f64>>,
}

pub fn summarize(metrics: &[HeadMetrics]) -> Result<Summary, MetricsError> {
    let layers = metrics.iter().map(|m| m.layer).max().unwrap_or(0);
    let heads = metrics.iter().map(|m| m.head).max().unwrap_or(0);
    if layers == 0 || heads == 0 {
        return Err(MetricsError::Incomplete("empty table".into()));
    }
    let mut mad_grid = vec![vec![f64::NAN; heads]; layers];
    let mut ent_grid = vec![vec![f64::NAN; heads]; layers];
    let mut seen = vec![vec![false; heads]; layers];
    for m in metrics {
        if m.layer == 0 || m.head == 0 {
            return Err(MetricsError::Incomplete("layer and head indices are 1-based".into()));
        }
        let (l, h) = (m.layer - 1, m.head - 1);
        if std::mem::replace(&mut seen[l][h], true) {
            return Err(MetricsError::Incomplete(format!("duplicate head ({}, {})", m.layer, m.head)));
        }
        mad_grid[l][h] = m.mad_mean;
        ent_grid[l][h] = m.entropy_mean;
    }
    for (l, row) in seen.iter().enumerate() {
        if let Some(h) = row.iter().position(|s| !s) {
            return Err(MetricsError::Incomplete(format!("missing head ({}, {})", l + 1, h + 1)));
        }
    }
    let extremes = |grid: &[Vec<f64>]| {
        let mut lo = (f64::INFINITY, HeadPos { layer: 1, head: 1 });
        let mut hi = (f64::NEG_INFINITY, HeadPos { layer: 1, head: 1 });
        for (l, row) in grid.iter().enumerate() {
            for (h, &v) in row.iter().enumerate() {
                let pos = HeadPos { layer: l + 1, head: h + 1 };
                if v < lo.0 {
                    lo = (v, pos);
                }
                if v > hi.0 {
                    hi = (v, pos);
                }
            }
        }
        (lo, hi)
    };
    let ((mad_min, mad_argmin), (mad_max, mad_argmax)) = extremes(&mad_grid);
    let ((entropy_min, entropy_argmin), (entropy_max, entropy_argmax)) = extremes(&ent_grid);
    let rank_profiles = mad_grid
        .iter()
        .map(|row| {
            let mut r = row.clone();
            r.sort_by(f64::total_cmp);
            r
        })
        .collect();
    Ok(Summary {
        layers,
        heads,
        mad_min,
        mad_max,
        entropy_min,
        entropy_max,
        mad_argmin,
        mad_argmax,
        entropy_argmin,
        entropy_argmax,
        rank_profiles,
        heatmap_mad: mad_grid,
        heatmap_entropy: ent_grid,
    })
}
