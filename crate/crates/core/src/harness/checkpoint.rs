//! Single-file binary checkpoints.
//!
//! Layout (little-endian):
//! `b"SEDGECKP"`, `u32` version, `u8` dtype (0 = f32, 1 = f64),
//! `u64` header length + JSON header (config and counters),
//! `u32` tensor count, then per tensor `u32` name length, UTF-8 name,
//! `u32` rank, `u64` dims, row-major payload.
//!
//! Tensors are named `param/<name>`, `moment1/<name>`, `moment2/<name>`
//! and `grad/<name>`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::model::Model;
use crate::tensor::Tensor;

use super::config::ExperimentConfig;
use super::train::TrainState;

const MAGIC: &[u8; 8] = b"SEDGECKP";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(Error::Checkpoint(format!("unknown dtype tag {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ExperimentConfig,
    step: usize,
    epoch: usize,
    cursor: usize,
    accumulated: usize,
    pending: Vec<LossReport>,
}

/// Everything needed to resume training or evaluate a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    header: Header,
    tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn capture(config: &ExperimentConfig, model: &Model, state: &TrainState) -> Self {
        let mut tensors = BTreeMap::new();
        for id in model.params().ids() {
            let name = model.params().name(id);
            let i = id.index();
            tensors.insert(format!("param/{name}"), model.params().value(id).clone());
            tensors.insert(format!("moment1/{name}"), state.moment1[i].clone());
            tensors.insert(format!("moment2/{name}"), state.moment2[i].clone());
            tensors.insert(format!("grad/{name}"), state.grad_acc[i].clone());
        }
        Self {
            header: Header {
                config: config.clone(),
                step: state.step,
                epoch: state.epoch,
                cursor: state.cursor,
                accumulated: state.accumulated,
                pending: state.pending.clone(),
            },
            tensors,
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.header.config
    }

    pub fn step(&self) -> usize {
        self.header.step
    }

    /// Rebuilds the model from the stored weights.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(self.header.config.model.clone(), 0)?;
        let params = self.prefixed("param/");
        model.load_params(&params)?;
        Ok(model)
    }

    pub fn into_parts(self) -> Result<(ExperimentConfig, Model, TrainState)> {
        let model = self.model()?;
        let mut state = TrainState::new(&model);
        for (prefix, slot) in [
            ("moment1/", &mut state.moment1),
            ("moment2/", &mut state.moment2),
            ("grad/", &mut state.grad_acc),
        ] {
            for id in model.params().ids() {
                let name = format!("{prefix}{}", model.params().name(id));
                let t = self
                    .tensors
                    .get(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                if t.shape() != slot[id.index()].shape() {
                    return Err(Error::shape("checkpoint tensor", slot[id.index()].shape(), t.shape()));
                }
                slot[id.index()] = t.clone();
            }
        }
        let h = self.header;
        state.step = h.step;
        state.epoch = h.epoch;
        state.cursor = h.cursor;
        state.accumulated = h.accumulated;
        state.pending = h.pending;
        Ok((h.config, model, state))
    }

    fn prefixed(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|n| (n.to_string(), v.clone())))
            .collect()
    }

    pub fn to_bytes(&self, dtype: Dtype) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(dtype.tag());
        let header = serde_json::to_vec(&self.header)?;
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                match dtype {
                    Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                    Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let dtype = Dtype::from_tag(read_array::<1>(&mut r)?[0])?;
        let header_len = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let mut header = vec![0u8; header_len];
        read_exact(&mut r, &mut header)?;
        let header: Header = serde_json::from_slice(&header)?;

        let count = u32::from_le_bytes(read_array(&mut r)?);
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
            let mut name = vec![0u8; len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = u32::from_le_bytes(read_array(&mut r)?) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(read_array(&mut r)?) as usize);
            }
            let n: usize = shape.iter().product();
            let data = match dtype {
                Dtype::F32 => (0..n)
                    .map(|_| read_array(&mut r).map(|b| f32::from_le_bytes(b) as f64))
                    .collect::<Result<Vec<_>>>()?,
                Dtype::F64 => (0..n)
                    .map(|_| read_array(&mut r).map(f64::from_le_bytes))
                    .collect::<Result<Vec<_>>>()?,
            };
            tensors.insert(name, Tensor::from_vec(&shape, data)?);
        }
        if (r.position() as usize) != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path, dtype: Dtype) -> Result<()> {
        let bytes = self.to_bytes(dtype)?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut Cursor<&[u8]>, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("truncated checkpoint".into()))
}

fn read_array<const N: usize>(r: &mut Cursor<&[u8]>) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}
