//! Checkpoint file format.
//!
//! Byte layout, all integers little-endian:
//!
//! | offset    | size | content                                  |
//! |-----------|------|------------------------------------------|
//! | 0         | 8    | ASCII magic `GAATCKPT`                   |
//! | 8         | 4    | `u32` format version, currently 1        |
//! | 12        | 4    | `u32` header length `H` in bytes         |
//! | 16        | H    | UTF-8 JSON header (see [`Header`])       |
//! | 16 + H    | ...  | parameter payload                        |
//!
//! The payload is every tensor of the header's `tensors` list in order,
//! each as a row-major run of IEEE-754 little-endian values: 8 bytes per
//! element for `f64`, 4 for `f32`. The file ends exactly after the last
//! tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const MAGIC: &[u8; 8] = b"GAATCKPT";
const VERSION: u32 = 1;

/// Storage precision of the payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    pub fn of<T: Scalar>() -> Self {
        if T::NAME == "f32" {
            Precision::F32
        } else {
            Precision::F64
        }
    }
}

/// Training context stored alongside the parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: Option<usize>,
    pub val_nat_acc: Option<f64>,
    pub val_adv_acc: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: ModelSpec,
    seed: u64,
    precision: Precision,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: CheckpointMeta,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// Contents of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointFile<T = f64> {
    pub spec: ModelSpec,
    pub params: ModelParams<T>,
    pub precision: Precision,
    pub meta: CheckpointMeta,
}

/// Serializes a checkpoint to bytes.
pub fn encode<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    precision: Precision,
    meta: &CheckpointMeta,
) -> Result<Vec<u8>> {
    let header = Header {
        spec: spec.clone(),
        seed: params.seed(),
        precision,
        tensors: params
            .names()
            .iter()
            .zip(params.tensors())
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + params.count() * precision.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for v in t.data() {
            match precision {
                Precision::F32 => out.extend_from_slice(&(v.primal() as f32).to_le_bytes()),
                Precision::F64 => out.extend_from_slice(&v.primal().to_le_bytes()),
            }
        }
    }
    Ok(out)
}

/// Parses checkpoint bytes, converting the payload to `T`.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<CheckpointFile<T>> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing GAATCKPT magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = bytes
        .get(16..16usize.saturating_add(hlen))
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let expected = header.spec.param_shapes()?;
    if expected.len() != header.tensors.len()
        || expected
            .iter()
            .zip(&header.tensors)
            .any(|((n, s), e)| *n != e.name || *s != e.shape)
    {
        return Err(bad("tensor list does not match the model spec"));
    }
    let width = header.precision.width();
    let mut payload = &bytes[16 + hlen..];
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        if payload.len() < n * width {
            return Err(Error::Checkpoint(format!("payload truncated in {}", entry.name)));
        }
        let (chunk, rest) = payload.split_at(n * width);
        payload = rest;
        let data: Vec<T> = chunk
            .chunks_exact(width)
            .map(|b| match header.precision {
                Precision::F32 => T::from_f64(f32::from_le_bytes(b.try_into().unwrap()) as f64),
                Precision::F64 => T::from_f64(f64::from_le_bytes(b.try_into().unwrap())),
            })
            .collect();
        tensors.push(Tensor::new(entry.shape, data)?);
        names.push(entry.name);
    }
    if !payload.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", payload.len())));
    }
    Ok(CheckpointFile {
        spec: header.spec,
        params: ModelParams::from_parts(names, tensors, header.seed)?,
        precision: header.precision,
        meta: header.meta,
    })
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    spec: &ModelSpec,
    params: &ModelParams<T>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(spec, params, Precision::of::<T>(), meta)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<CheckpointFile<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
