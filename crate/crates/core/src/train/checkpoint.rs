//! Binary checkpoint: magic `VITL`, version u32, a u32-length-prefixed JSON
//! metadata blob, then named tensors until end of file. Each tensor is
//! name length u32, name bytes, dtype u8, rank u8, dims u32 each and the
//! little-endian element buffer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EarlyStopper, EpochRecord, OptimSpec, OptimizerState, TrainError};
use crate::augment::ProtocolConfig;
use crate::model::{ModelConfig, Param, ParamStore};
use crate::tensor::{DType, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VITL";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub tool_version: String,
    pub model: ModelConfig,
    pub protocol: ProtocolConfig,
    pub optim: OptimSpec,
    pub seed: u64,
    /// Number of completed epochs; training resumes at this 0-based epoch.
    pub epochs_completed: usize,
    pub best_val_acc: Option<f64>,
    /// 0-based epoch whose parameters are stored under `best/`.
    pub best_epoch: Option<usize>,
    pub stopper: EarlyStopper,
    pub history: Vec<EpochRecord>,
    /// Per-parameter decay flags, store order.
    pub decay: Vec<bool>,
    pub adam_t: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub params: ParamStore<T>,
    pub optimizer: OptimizerState<T>,
    /// Parameters of the best validation epoch, when they differ from
    /// `params` (i.e. in a resumable "last" checkpoint).
    pub best_params: Option<ParamStore<T>>,
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(T::DTYPE.code());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

pub fn encode_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<Vec<u8>, TrainError> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(&ckpt.meta).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &ckpt.params.entries {
        put_tensor(&mut out, &format!("param/{}", p.name), &p.value);
    }
    for (p, (m, v)) in ckpt.params.entries.iter().zip(ckpt.optimizer.m.iter().zip(&ckpt.optimizer.v)) {
        put_tensor(&mut out, &format!("adam.m/{}", p.name), m);
        put_tensor(&mut out, &format!("adam.v/{}", p.name), v);
    }
    if let Some(best) = &ckpt.best_params {
        for p in &best.entries {
            put_tensor(&mut out, &format!("best/{}", p.name), &p.value);
        }
    }
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: &Path) -> Result<(), TrainError> {
    let bytes = encode_checkpoint(ckpt)?;
    // Write-then-rename so a crash never leaves a half-written checkpoint.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| TrainError::Io(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        if self.bytes.len() - self.pos < n {
            return Err(TrainError::Checkpoint(format!(
                "truncated at byte {} (need {n} more bytes)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u8(&mut self) -> Result<u8, TrainError> {
        Ok(self.take(1)?[0])
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn read_tensor<T: Scalar>(r: &mut Reader<'_>) -> Result<(String, Tensor<T>), TrainError> {
    let name_len = r.u32()? as usize;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| TrainError::Checkpoint("tensor name is not UTF-8".into()))?
        .to_string();
    let dtype = DType::from_code(r.u8()?).ok_or_else(|| TrainError::Checkpoint(format!("{name}: unknown dtype")))?;
    let rank = usize::from(r.u8()?);
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let n: usize = shape.iter().product();
    let raw = r.take(n * dtype.size_of())?;
    let data: Vec<T> = match dtype {
        DType::Float32 => raw.chunks_exact(4).map(|c| T::from_f64(f64::from(f32::read_le(c)))).collect(),
        DType::Float64 => raw.chunks_exact(8).map(|c| T::from_f64(f64::read_le(c))).collect(),
    };
    let t = Tensor::new(shape, data).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    Ok((name, t))
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>, TrainError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(TrainError::Checkpoint("bad magic, expected VITL".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let json_len = r.u32()? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(json_len)?).map_err(|e| TrainError::Checkpoint(format!("metadata: {e}")))?;

    let mut params = Vec::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    let mut best = Vec::new();
    while !r.done() {
        let (name, t) = read_tensor::<T>(&mut r)?;
        let (kind, pname) = name
            .split_once('/')
            .ok_or_else(|| TrainError::Checkpoint(format!("unexpected tensor name {name}")))?;
        match kind {
            "param" => params.push((pname.to_string(), t)),
            "adam.m" => m.push(t),
            "adam.v" => v.push(t),
            "best" => best.push((pname.to_string(), t)),
            _ => return Err(TrainError::Checkpoint(format!("unexpected tensor name {name}"))),
        }
    }
    if params.len() != meta.decay.len() || m.len() != params.len() || v.len() != params.len() {
        return Err(TrainError::Checkpoint(format!(
            "{} parameters, {}/{} moment buffers, {} decay flags",
            params.len(),
            m.len(),
            v.len(),
            meta.decay.len()
        )));
    }
    let store = |items: Vec<(String, Tensor<T>)>| ParamStore {
        entries: items
            .into_iter()
            .zip(&meta.decay)
            .map(|((name, value), &decay)| Param { name, value, decay })
            .collect(),
    };
    let best_params = if best.is_empty() {
        None
    } else if best.len() == params.len() {
        Some(store(best))
    } else {
        return Err(TrainError::Checkpoint("incomplete best/ parameter set".into()));
    };
    let params = store(params);
    let optimizer = OptimizerState { m, v, t: meta.adam_t };
    Ok(Checkpoint {
        meta,
        params,
        optimizer,
        best_params,
    })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, TrainError> {
    let bytes = std::fs::read(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        TrainError::Checkpoint(m) => TrainError::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
