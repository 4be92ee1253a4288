//! Named-array archive used for model checkpoints and optimizer state.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   8 bytes   magic "FSG3DAR1"
//! offset 8   u64       length L of the JSON header
//! offset 16  L bytes   UTF-8 JSON: {"metadata": <any>, "arrays": [{"name", "shape", "offset", "len"}, ...]}
//! offset 16+L          payload: every array as consecutive f64 LE values,
//!                      `offset`/`len` counted in values from payload start
//! ```
//!
//! Names are dotted hierarchical parameter paths such as
//! `encoder_pet.stages.0.blocks.1.attn.qkv.weight`. Values are stored as
//! raw f64 bit patterns, so a write/read cycle is bitwise exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::shape::numel;

pub const MAGIC: &[u8; 8] = b"FSG3DAR1";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed archive: {0}")]
    Format(String),
    #[error("archive header is not valid JSON: {0}")]
    Header(#[from] serde_json::Error),
    #[error("archive has no array named `{0}`")]
    Missing(String),
    #[error("array `{name}` has shape {found:?}, expected {expected:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub metadata: serde_json::Value,
    pub arrays: BTreeMap<String, NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    metadata: serde_json::Value,
    arrays: Vec<HeaderEntry>,
}

impl Archive {
    pub fn new(metadata: serde_json::Value) -> Self {
        Archive { metadata, arrays: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        assert_eq!(numel(shape), data.len(), "array size does not match shape");
        self.arrays.insert(name.into(), NamedArray { shape: shape.to_vec(), data });
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray, ArchiveError> {
        self.arrays.get(name).ok_or_else(|| ArchiveError::Missing(name.to_string()))
    }

    /// Looks up `name` and checks it has `shape`.
    pub fn get_shaped(&self, name: &str, shape: &[usize]) -> Result<&[f64], ArchiveError> {
        let a = self.get(name)?;
        if a.shape != shape {
            return Err(ArchiveError::Shape {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: a.shape.clone(),
            });
        }
        Ok(&a.data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let entries = self
            .arrays
            .iter()
            .map(|(name, a)| {
                let e = HeaderEntry { name: name.clone(), shape: a.shape.clone(), offset, len: a.data.len() };
                offset += a.data.len();
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header { metadata: self.metadata.clone(), arrays: entries })
            .expect("archive header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for a in self.arrays.values() {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(ArchiveError::Format("missing FSG3DAR1 magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let payload_start = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| ArchiveError::Format("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..payload_start])?;
        let payload = &bytes[payload_start..];
        let mut arrays = BTreeMap::new();
        for e in header.arrays {
            if numel(&e.shape) != e.len {
                return Err(ArchiveError::Format(format!("array `{}` length disagrees with shape", e.name)));
            }
            let start = e.offset * 8;
            let end = start + e.len * 8;
            if end > payload.len() {
                return Err(ArchiveError::Format(format!("array `{}` runs past end of payload", e.name)));
            }
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.insert(e.name, NamedArray { shape: e.shape, data });
        }
        Ok(Archive { metadata: header.metadata, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<(), ArchiveError> {
        let io = |source| ArchiveError::Io { path: path.display().to_string(), source };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ArchiveError> {
        let bytes =
            fs::read(path).map_err(|source| ArchiveError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}
