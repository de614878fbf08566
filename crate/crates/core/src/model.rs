//! Compact Pre-LN Vision Transformer with optional attention capture.
//!
//! Pipeline: non-overlapping patch projection, row-major token order over the
//! `G×G` grid, a learnable CLS token at sequence position 0, learnable
//! positional embeddings, `depth` Pre-LN blocks, final LayerNorm, and a linear
//! classifier that reads only the CLS embedding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

pub const INIT_STD: f64 = 0.02;
pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("model/parameter mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn default_true() -> bool {
    true
}

fn default_ln_eps() -> f64 {
    LAYER_NORM_EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub depth: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub n_classes: usize,
    /// Must be 0.0; the network carries no stochastic regularization.
    pub dropout: f64,
    /// Positional embeddings cover all `N = N_p + 1` tokens when set, the
    /// patches only otherwise.
    #[serde(default = "default_true")]
    pub pos_embed_includes_cls: bool,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// L=8, D=192, H=8, MLP 2D; patch size chosen for an 8×8 grid.
    pub fn paper(image_size: usize, n_classes: usize) -> Self {
        Self {
            image_size,
            channels: 3,
            patch_size: image_size / 8,
            depth: 8,
            embed_dim: 192,
            heads: 8,
            mlp_hidden: 384,
            n_classes,
            dropout: 0.0,
            pos_embed_includes_cls: true,
            layer_norm_eps: LAYER_NORM_EPS,
        }
    }

    /// L=4, D=64, H=4.
    pub fn desk(image_size: usize, patch_size: usize, n_classes: usize) -> Self {
        Self {
            image_size,
            channels: 3,
            patch_size,
            depth: 4,
            embed_dim: 64,
            heads: 4,
            mlp_hidden: 128,
            n_classes,
            dropout: 0.0,
            pos_embed_includes_cls: true,
            layer_norm_eps: LAYER_NORM_EPS,
        }
    }

    /// L=2, D=16, H=2 on a 3×3 grid; small enough for exhaustive gradient checks.
    pub fn tiny() -> Self {
        Self {
            image_size: 6,
            channels: 3,
            patch_size: 2,
            depth: 2,
            embed_dim: 16,
            heads: 2,
            mlp_hidden: 32,
            n_classes: 3,
            dropout: 0.0,
            pos_embed_includes_cls: true,
            layer_norm_eps: LAYER_NORM_EPS,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.patch_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return fail(format!(
                "image_size {} is not a multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return fail(format!("embed_dim {} not divisible by heads {}", self.embed_dim, self.heads));
        }
        if self.depth == 0 || self.channels == 0 || self.n_classes == 0 || self.mlp_hidden == 0 {
            return fail("depth, channels, n_classes and mlp_hidden must be positive".into());
        }
        if self.dropout != 0.0 {
            return fail(format!("dropout must be 0.0, got {}", self.dropout));
        }
        if self.layer_norm_eps <= 0.0 {
            return fail("layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }
}

/// One named parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Whether decoupled weight decay applies to this parameter by default.
    pub decay: bool,
}

/// Ordered parameter set; the order is part of the model layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    pub entries: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.entries.iter_mut().find(|p| p.name == name)
    }

    fn push(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) -> usize {
        self.entries.push(Param {
            name: name.into(),
            value,
            decay,
        });
        self.entries.len() - 1
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    decay: p.decay,
                })
                .collect(),
        }
    }

    /// Registers every parameter as a trainable leaf, in store order.
    pub fn register(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.entries.iter().map(|p| tape.param(p.value.clone())).collect()
    }
}

/// Total number of scalar entries across the set.
pub fn count_params<T: Scalar>(params: &ParamStore<T>) -> usize {
    params.entries.iter().map(|p| p.value.len()).sum()
}

#[derive(Debug, Clone, PartialEq)]
struct BlockLayout {
    ln1_gain: usize,
    ln1_bias: usize,
    qkv_weight: usize,
    qkv_bias: usize,
    proj_weight: usize,
    proj_bias: usize,
    ln2_gain: usize,
    ln2_bias: usize,
    fc1_weight: usize,
    fc1_bias: usize,
    fc2_weight: usize,
    fc2_bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    patch_weight: usize,
    patch_bias: usize,
    cls: usize,
    pos: usize,
    blocks: Vec<BlockLayout>,
    norm_gain: usize,
    norm_bias: usize,
    head_weight: usize,
    head_bias: usize,
}

/// Post-softmax attention of one forward pass: per layer a `[B, H, N, N]`
/// tensor whose rows are distributions over keys.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCapture<T> {
    pub layers: Vec<Tensor<T>>,
}

impl<T: Scalar> AttentionCapture<T> {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn batch(&self) -> usize {
        self.layers.first().map_or(0, |t| t.shape()[0])
    }

    pub fn heads(&self) -> usize {
        self.layers.first().map_or(0, |t| t.shape()[1])
    }

    pub fn seq_len(&self) -> usize {
        self.layers.first().map_or(0, |t| t.shape()[2])
    }

    /// Row-major `N×N` attention of `(image, layer, head)`.
    pub fn head(&self, image: usize, layer: usize, head: usize) -> &[T] {
        let t = &self.layers[layer];
        let (h, n) = (t.shape()[1], t.shape()[2]);
        let start = (image * h + head) * n * n;
        &t.data()[start..start + n * n]
    }
}

/// Outputs of [`Vit::forward`]; the tape stays alive for backward.
pub struct ForwardPass<T> {
    pub tape: Tape<T>,
    pub logits: Var,
    pub params: Vec<Var>,
    pub capture: Option<AttentionCapture<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vit<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
}

fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let normal = Normal::new(0.0, std).expect("finite std");
    loop {
        let x: f64 = normal.sample(rng);
        if x.abs() <= 2.0 * std {
            return x;
        }
    }
}

impl<T: Scalar> Vit<T> {
    /// Builds a model with truncated-normal weights (std 0.02), zero biases
    /// and unit LayerNorm gains, from the `init` stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = seed::stream(seed, "init", &[]);
        let mut init = |shape: Vec<usize>| -> Tensor<T> {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| T::from_f64(trunc_normal(&mut rng, INIT_STD))).collect();
            Tensor::new(shape, data).expect("shape")
        };
        let d = config.embed_dim;
        let mut ps = ParamStore::default();
        let patch_weight = ps.push("patch.weight", init(vec![config.patch_dim(), d]), true);
        let patch_bias = ps.push("patch.bias", Tensor::zeros(vec![d]), true);
        let cls = ps.push("cls", init(vec![1, d]), false);
        let pos_rows = if config.pos_embed_includes_cls {
            config.seq_len()
        } else {
            config.num_patches()
        };
        let pos = ps.push("pos", init(vec![pos_rows, d]), false);
        let mut blocks = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let p = |s: &str| format!("blocks.{l}.{s}");
            blocks.push(BlockLayout {
                ln1_gain: ps.push(p("ln1.gain"), Tensor::full(vec![d], T::one()), false),
                ln1_bias: ps.push(p("ln1.bias"), Tensor::zeros(vec![d]), false),
                qkv_weight: ps.push(p("attn.qkv.weight"), init(vec![d, 3 * d]), true),
                qkv_bias: ps.push(p("attn.qkv.bias"), Tensor::zeros(vec![3 * d]), true),
                proj_weight: ps.push(p("attn.proj.weight"), init(vec![d, d]), true),
                proj_bias: ps.push(p("attn.proj.bias"), Tensor::zeros(vec![d]), true),
                ln2_gain: ps.push(p("ln2.gain"), Tensor::full(vec![d], T::one()), false),
                ln2_bias: ps.push(p("ln2.bias"), Tensor::zeros(vec![d]), false),
                fc1_weight: ps.push(p("mlp.fc1.weight"), init(vec![d, config.mlp_hidden]), true),
                fc1_bias: ps.push(p("mlp.fc1.bias"), Tensor::zeros(vec![config.mlp_hidden]), true),
                fc2_weight: ps.push(p("mlp.fc2.weight"), init(vec![config.mlp_hidden, d]), true),
                fc2_bias: ps.push(p("mlp.fc2.bias"), Tensor::zeros(vec![d]), true),
            });
        }
        let norm_gain = ps.push("norm.gain", Tensor::full(vec![d], T::one()), false);
        let norm_bias = ps.push("norm.bias", Tensor::zeros(vec![d]), false);
        let head_weight = ps.push("head.weight", init(vec![d, config.n_classes]), true);
        let head_bias = ps.push("head.bias", Tensor::zeros(vec![config.n_classes]), true);
        let layout = Layout {
            patch_weight,
            patch_bias,
            cls,
            pos,
            blocks,
            norm_gain,
            norm_bias,
            head_weight,
            head_bias,
        };
        Ok(Self {
            config,
            params: ps,
            layout,
        })
    }

    /// Rebuilds a model around existing parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self, ModelError> {
        let mut model = Self::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(ModelError::Mismatch(format!(
                "expected {} parameters, got {}",
                model.params.len(),
                params.len()
            )));
        }
        for (want, got) in model.params.entries.iter().zip(&params.entries) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(ModelError::Mismatch(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    fn check_images(&self, images: &Tensor<T>) -> Result<usize, ModelError> {
        let c = &self.config;
        let s = images.shape();
        if s.len() != 4 || s[1] != c.channels || s[2] != c.image_size || s[3] != c.image_size {
            return Err(TensorError::Shape {
                op: "patchify",
                lhs: s.to_vec(),
                rhs: vec![0, c.channels, c.image_size, c.image_size],
            }
            .into());
        }
        Ok(s[0])
    }

    /// Patch embeddings `[B, N_p, D]` of a batch `[B, C, S, S]`.
    pub fn patchify(&self, images: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.entries.iter().map(|p| tape.constant(p.value.clone())).collect();
        let tokens = self.embed_patches(&mut tape, &vars, images)?;
        Ok(tape.value(tokens).clone())
    }

    fn embed_patches(&self, tape: &mut Tape<T>, vars: &[Var], images: &Tensor<T>) -> Result<Var, ModelError> {
        let b = self.check_images(images)?;
        let patches = tape.constant(extract_patches(images, self.config.patch_size)?);
        let proj = tape.matmul(patches, vars[self.layout.patch_weight])?;
        let tokens = tape.add(proj, vars[self.layout.patch_bias])?;
        debug_assert_eq!(tape.shape(tokens), [b, self.config.num_patches(), self.config.embed_dim]);
        Ok(tokens)
    }

    /// Forward pass on normalized images `[B, C, S, S]`. With `capture` the
    /// post-softmax attention of every layer and head is recorded.
    pub fn forward(&self, images: &Tensor<T>, capture: bool) -> Result<ForwardPass<T>, ModelError> {
        let mut tape = Tape::new();
        let params = self.params.register(&mut tape);
        let (logits, capture) = self.forward_with(&mut tape, &params, images, capture)?;
        Ok(ForwardPass {
            tape,
            logits,
            params,
            capture,
        })
    }

    /// Forward pass against caller-registered parameter vars (store order).
    pub fn forward_with(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        images: &Tensor<T>,
        capture: bool,
    ) -> Result<(Var, Option<AttentionCapture<T>>), ModelError> {
        if vars.len() != self.params.len() {
            return Err(ModelError::Mismatch(format!(
                "{} parameter vars for a model with {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        let cfg = &self.config;
        let lay = &self.layout;
        let (d, n) = (cfg.embed_dim, cfg.seq_len());
        let tokens = self.embed_patches(tape, vars, images)?;
        let b = tape.shape(tokens)[0];

        let cls = tape.reshape(vars[lay.cls], &[1, 1, d])?;
        let cls = tape.broadcast_to(cls, &[b, 1, d])?;
        let mut x;
        if cfg.pos_embed_includes_cls {
            x = tape.concat(&[cls, tokens], 1)?;
            x = tape.add(x, vars[lay.pos])?;
        } else {
            let with_pos = tape.add(tokens, vars[lay.pos])?;
            x = tape.concat(&[cls, with_pos], 1)?;
        }

        let mut captured = capture.then(Vec::new);
        for blk in &lay.blocks {
            let h = tape.layer_norm(x, vars[blk.ln1_gain], vars[blk.ln1_bias], cfg.layer_norm_eps)?;
            let (attn_out, probs) = self.attention(tape, vars, blk, h, b)?;
            if let Some(c) = captured.as_mut() {
                c.push(tape.value(probs).clone());
            }
            x = tape.add(x, attn_out)?;
            let h = tape.layer_norm(x, vars[blk.ln2_gain], vars[blk.ln2_bias], cfg.layer_norm_eps)?;
            let h = tape.matmul(h, vars[blk.fc1_weight])?;
            let h = tape.add(h, vars[blk.fc1_bias])?;
            let h = tape.gelu(h);
            let h = tape.matmul(h, vars[blk.fc2_weight])?;
            let h = tape.add(h, vars[blk.fc2_bias])?;
            x = tape.add(x, h)?;
        }
        let x = tape.layer_norm(x, vars[lay.norm_gain], vars[lay.norm_bias], cfg.layer_norm_eps)?;
        let cls_out = tape.slice(x, 1, 0, 1)?;
        let cls_out = tape.reshape(cls_out, &[b, d])?;
        let logits = tape.matmul(cls_out, vars[lay.head_weight])?;
        let logits = tape.add(logits, vars[lay.head_bias])?;
        debug_assert_eq!(tape.shape(logits), [b, cfg.n_classes]);
        let _ = n;
        Ok((logits, captured.map(|layers| AttentionCapture { layers })))
    }

    /// Multi-head self-attention; returns the projected output and the
    /// `[B, H, N, N]` attention probabilities.
    fn attention(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        blk: &BlockLayout,
        h: Var,
        b: usize,
    ) -> Result<(Var, Var), ModelError> {
        let cfg = &self.config;
        let (d, n, heads, dk) = (cfg.embed_dim, cfg.seq_len(), cfg.heads, cfg.head_dim());
        let qkv = tape.matmul(h, vars[blk.qkv_weight])?;
        let qkv = tape.add(qkv, vars[blk.qkv_bias])?;
        let qkv = tape.reshape(qkv, &[b, n, 3, heads, dk])?;
        // [3, B, H, N, dk]
        let qkv = tape.permute(qkv, &[2, 0, 3, 1, 4])?;
        let split = |tape: &mut Tape<T>, i: usize| -> Result<Var, TensorError> {
            let s = tape.slice(qkv, 0, i, 1)?;
            tape.reshape(s, &[b, heads, n, dk])
        };
        let q = split(tape, 0)?;
        let k = split(tape, 1)?;
        let v = split(tape, 2)?;
        let scores = tape.bmm(q, k, true)?;
        let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
        let probs = tape.softmax_rows(scores)?;
        let ctx = tape.bmm(probs, v, false)?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[b, n, d])?;
        let out = tape.matmul(ctx, vars[blk.proj_weight])?;
        let out = tape.add(out, vars[blk.proj_bias])?;
        Ok((out, probs))
    }

    /// Predicted class per image, evaluated without a gradient pass.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Vec<usize>, ModelError> {
        let pass = self.forward(images, false)?;
        Ok(argmax_rows(pass.tape.value(pass.logits)))
    }
}

/// Gathers `[B, C, S, S]` into `[B, N_p, C·P·P]`, tokens in row-major grid
/// order and each patch flattened as (channel, row, col).
pub fn extract_patches<T: Scalar>(images: &Tensor<T>, patch: usize) -> Result<Tensor<T>, TensorError> {
    let s = images.shape();
    if s.len() != 4 || s[2] != s[3] || patch == 0 || !s[2].is_multiple_of(patch) {
        return Err(TensorError::Shape {
            op: "extract_patches",
            lhs: s.to_vec(),
            rhs: vec![patch],
        });
    }
    let (b, c, size) = (s[0], s[1], s[2]);
    let g = size / patch;
    let src = images.data();
    let mut out = Vec::with_capacity(src.len());
    for img in 0..b {
        for gy in 0..g {
            for gx in 0..g {
                for ch in 0..c {
                    for py in 0..patch {
                        let row = ((img * c + ch) * size + gy * patch + py) * size + gx * patch;
                        out.extend_from_slice(&src[row..row + patch]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, g * g, c * patch * patch], out)
}

pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let n = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks(n)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Uniform random batch for tests and smoke runs.
pub fn random_images<T: Scalar>(rng: &mut impl Rng, batch: usize, cfg: &ModelConfig) -> Tensor<T> {
    let n = batch * cfg.channels * cfg.image_size * cfg.image_size;
    let data = (0..n).map(|_| T::from_f64(rng.random_range(-1.0..1.0))).collect();
    Tensor::new(vec![batch, cfg.channels, cfg.image_size, cfg.image_size], data).expect("shape")
}
