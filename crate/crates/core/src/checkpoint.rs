//! Single-file model archives.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MOHBACK1"
//! header_len u32
//! header     JSON: {"kind", "config", "optimizer"}
//! n_tensors  u32
//! tensor*    name_len u32, name (UTF-8), ndim u32, dims u64 x ndim,
//!            payload f64 x prod(dims), row-major
//! ```
//!
//! Parameters are stored under their own names. When optimizer state is
//! present, Adam moments follow as `adam.m.<name>` and `adam.v.<name>`.

use std::fmt::Debug;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::nn::{Adam, ParamStore, Tensor};
use crate::training::{OptimizerState, Trainable};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MOHBACK1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mohba,
    FlatVae,
    Lstm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub updates: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub optimizer: Option<OptimizerHeader>,
}

/// A model that can be rebuilt from its config and a set of named tensors.
pub trait Checkpointable: Trainable + Sized {
    type Config: Serialize + DeserializeOwned + PartialEq + Debug;
    const KIND: ModelKind;

    fn config(&self) -> &Self::Config;
    /// Builds a model with freshly initialized parameters.
    fn build(config: Self::Config) -> Result<Self>;
}

pub fn save_checkpoint<M: Checkpointable>(
    model: &M,
    optimizer: Option<&OptimizerState>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let header = CheckpointHeader {
        kind: M::KIND,
        config: serde_json::to_value(model.config()).map_err(|e| Error::Checkpoint(e.to_string()))?,
        optimizer: optimizer.map(|o| OptimizerHeader {
            step: o.step,
            learning_rate: o.adam.lr,
            beta1: o.adam.beta1,
            beta2: o.adam.beta2,
            eps: o.adam.eps,
            updates: o.adam.t,
        }),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let params = model.params();
    let mut tensors: Vec<(String, &Tensor)> = params.iter().map(|(n, t)| (n.to_string(), t)).collect();
    if let Some(o) = optimizer {
        for (name, m) in params.names().iter().zip(&o.adam.m) {
            tensors.push((format!("adam.m.{name}"), m));
        }
        for (name, v) in params.names().iter().zip(&o.adam.v) {
            tensors.push((format!("adam.v.{name}"), v));
        }
    }
    let mut buf = Vec::with_capacity(16 + header.len() + 8 * params.num_scalars() * 3);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
        buf.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Raw archive contents.
pub struct Archive {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Archive> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    let header_len = r.u32()? as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(header_len)?).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let n = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("bad tensor name".into()))?;
        let ndim = r.u32()? as usize;
        let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let (rows, cols) = match dims[..] {
            [rows, cols] => (rows, cols),
            [len] => (1, len),
            _ => return Err(Error::Checkpoint(format!("{name}: unsupported rank {ndim}"))),
        };
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint(format!("{name}: bad shape")))?;
        let payload = r.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint(format!("{name}: bad shape")))?)?;
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::from_shape_vec((rows, cols), values).expect("checked shape");
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Archive { header, tensors })
}

pub fn read_header(path: impl AsRef<Path>) -> Result<CheckpointHeader> {
    read_archive(path).map(|a| a.header)
}

fn fill_store(store: &mut ParamStore, prefix: &str, tensors: &mut Vec<(String, Tensor)>) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(store.len());
    for name in store.names().to_vec() {
        let key = format!("{prefix}{name}");
        let pos = tensors
            .iter()
            .position(|(n, _)| *n == key)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
        let (_, t) = tensors.swap_remove(pos);
        let id = store.find(&name).expect("own name");
        if t.dim() != store.get(id).dim() {
            return Err(Error::Checkpoint(format!(
                "tensor {key} has shape {:?}, model expects {:?}",
                t.dim(),
                store.get(id).dim()
            )));
        }
        out.push(t);
    }
    Ok(out)
}

/// Loads a model and, when stored, its optimizer state.
pub fn load_checkpoint<M: Checkpointable>(path: impl AsRef<Path>) -> Result<(M, Option<OptimizerState>)> {
    let Archive { header, mut tensors } = read_archive(path)?;
    if header.kind != M::KIND {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds a {:?} model, expected {:?}",
            header.kind,
            M::KIND
        )));
    }
    let config: M::Config =
        serde_json::from_value(header.config).map_err(|e| Error::Checkpoint(format!("bad model config: {e}")))?;
    let mut model = M::build(config)?;
    let values = fill_store(&mut model.params().clone(), "", &mut tensors)?;
    for (dst, src) in model.params_mut().tensors_mut().iter_mut().zip(values) {
        *dst = src;
    }
    let optimizer = match header.optimizer {
        Some(h) => {
            let mut adam = Adam::new(model.params(), h.learning_rate, h.beta1, h.beta2);
            adam.eps = h.eps;
            adam.t = h.updates;
            let mut shape = model.params().clone();
            adam.m = fill_store(&mut shape, "adam.m.", &mut tensors)?;
            adam.v = fill_store(&mut shape, "adam.v.", &mut tensors)?;
            Some(OptimizerState { step: h.step, adam })
        }
        None => None,
    };
    if let Some((name, _)) = tensors.first() {
        return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
    }
    Ok((model, optimizer))
}

/// Like [`load_checkpoint`], but errors unless the stored config equals
/// `expected`.
pub fn load_checkpoint_expecting<M: Checkpointable>(
    path: impl AsRef<Path>,
    expected: &M::Config,
) -> Result<(M, Option<OptimizerState>)> {
    let (model, opt) = load_checkpoint::<M>(path)?;
    if model.config() != expected {
        return Err(Error::Checkpoint(format!(
            "model config mismatch: checkpoint has {:?}, expected {:?}",
            model.config(),
            expected
        )));
    }
    Ok((model, opt))
}

impl Checkpointable for crate::hvae::MohbaModel {
    type Config = crate::hvae::ModelConfig;
    const KIND: ModelKind = ModelKind::Mohba;

    fn config(&self) -> &Self::Config {
        &self.config
    }

    fn build(config: Self::Config) -> Result<Self> {
        Self::new(config, 0)
    }
}
