//! Checkpoint file: `IVZR1`, a little-endian u32 header length, a JSON
//! header, then every parameter as little-endian f32 in header order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::Module;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 5] = b"IVZR1";
pub const FORMAT_VERSION: u32 = 1;
pub const EXTENSION: &str = "ivzr";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint truncated: need {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("checkpoint names unknown tensor {0:?}")]
    UnknownTensor(String),
    #[error("checkpoint is missing tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {found:?}, model expects {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {0:?} is not stored contiguously after its predecessor")]
    Layout(String),
    #[error("checkpoint payload has {0} trailing bytes")]
    Trailing(usize),
}

impl CheckpointError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::BadMagic => "E_CKPT_MAGIC",
            CheckpointError::Version(_) => "E_CKPT_VERSION",
            CheckpointError::Header(_) => "E_CKPT_HEADER",
            CheckpointError::Truncated { .. } => "E_CKPT_TRUNCATED",
            CheckpointError::UnknownTensor(_) => "E_CKPT_UNKNOWN_TENSOR",
            CheckpointError::MissingTensor(_) => "E_CKPT_MISSING_TENSOR",
            CheckpointError::Shape { .. } => "E_CKPT_SHAPE",
            CheckpointError::Layout(_) => "E_CKPT_LAYOUT",
            CheckpointError::Trailing(_) => "E_CKPT_TRAILING",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub dtype: String,
    pub k: usize,
    pub e: usize,
    pub d: usize,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes<S: Scalar>(model: &Model<S>) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    model.visit("", &mut |name, t| {
        let offset = payload.len();
        for v in t.data() {
            payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            bytes: payload.len() - offset,
        });
    });
    let header = Header {
        version: FORMAT_VERSION,
        dtype: "f32le".into(),
        k: model.config.num_intents,
        e: model.config.intent_dim,
        d: model.config.input_dim,
        config: model.config.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

/// Parses and validates magic, version and header without touching the
/// payload.
pub fn read_header(bytes: &[u8]) -> std::result::Result<(Header, usize), CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let start = MAGIC.len() + 4;
    if bytes.len() < start {
        return Err(CheckpointError::Truncated {
            needed: start,
            found: bytes.len(),
        });
    }
    let len = u32::from_le_bytes(bytes[MAGIC.len()..start].try_into().expect("4 bytes")) as usize;
    if bytes.len() < start + len {
        return Err(CheckpointError::Truncated {
            needed: start + len,
            found: bytes.len(),
        });
    }
    let value: serde_json::Value =
        serde_json::from_slice(&bytes[start..start + len]).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if let Some(v) = value.get("version").and_then(|v| v.as_u64()) {
        if v != FORMAT_VERSION as u64 {
            return Err(CheckpointError::Version(v as u32));
        }
    }
    let header: Header = serde_json::from_value(value).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.dtype != "f32le" {
        return Err(CheckpointError::Header(format!("unsupported dtype {:?}", header.dtype)));
    }
    Ok((header, start + len))
}

pub fn from_bytes<S: Scalar>(bytes: &[u8]) -> Result<Model<S>> {
    let (header, payload_start) = read_header(bytes)?;
    header.config.validate()?;
    let mut model = Model::<S>::new(&header.config, 0)?;
    let expected: BTreeMap<String, Vec<usize>> = model.named_shapes().into_iter().collect();
    let mut next = 0;
    for entry in &header.tensors {
        let shape = expected
            .get(&entry.name)
            .ok_or_else(|| CheckpointError::UnknownTensor(entry.name.clone()))?;
        if *shape != entry.shape {
            return Err(CheckpointError::Shape {
                name: entry.name.clone(),
                expected: shape.clone(),
                found: entry.shape.clone(),
            }
            .into());
        }
        if entry.offset != next || entry.bytes != 4 * shape.iter().product::<usize>() {
            return Err(CheckpointError::Layout(entry.name.clone()).into());
        }
        next += entry.bytes;
    }
    let indexed: BTreeMap<&str, &TensorEntry> = header.tensors.iter().map(|e| (e.name.as_str(), e)).collect();
    if let Some(name) = expected.keys().find(|n| !indexed.contains_key(n.as_str())) {
        return Err(CheckpointError::MissingTensor(name.clone()).into());
    }
    if indexed.len() != header.tensors.len() {
        return Err(CheckpointError::Header("tensor listed twice".into()).into());
    }
    let payload = &bytes[payload_start..];
    if payload.len() < next {
        return Err(CheckpointError::Truncated {
            needed: payload_start + next,
            found: bytes.len(),
        }
        .into());
    }
    if payload.len() > next {
        return Err(CheckpointError::Trailing(payload.len() - next).into());
    }
    model.visit_mut("", &mut |name, t| {
        let e = indexed[name];
        let raw = &payload[e.offset..e.offset + e.bytes];
        for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = S::lit(f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64);
        }
    });
    Ok(model)
}

pub fn save_checkpoint<S: Scalar>(path: impl AsRef<Path>, model: &Model<S>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<Model<S>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
