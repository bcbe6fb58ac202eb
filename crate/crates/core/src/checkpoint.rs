//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, a UTF-8 JSON
//! header (dims, relation vocabulary, tensor manifest, run config), then every
//! tensor as little-endian `f64` in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{Dims, ModelParams, RelationVocab};

const MAGIC: &[u8; 8] = b"FRAGEMB\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    dims: Dims,
    relations: RelationVocab,
    tensors: Vec<TensorEntry>,
    config: RunConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub relations: RelationVocab,
    pub config: RunConfig,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.relations.len() != self.params.relations.len() {
            return Err(Error::Checkpoint(format!(
                "{} relation names for {} relation weight sets",
                self.relations.len(),
                self.params.relations.len()
            )));
        }
        let tensors = self.params.tensors();
        let header = Header {
            dims: self.params.dims,
            relations: self.relations.clone(),
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    len: t.len(),
                })
                .collect(),
            config: self.config.clone(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let payload: usize = tensors.iter().map(|(_, t)| t.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &tensors {
            for x in t.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_owned());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

        let mut params = ModelParams::zeros(header.dims, header.relations.len());
        let mut offset = header_end;
        {
            let mut tensors = params.tensors_mut();
            if tensors.len() != header.tensors.len() {
                return Err(bad("tensor manifest does not match dims"));
            }
            for ((name, dst), entry) in tensors.iter_mut().zip(&header.tensors) {
                if *name != entry.name || dst.len() != entry.len {
                    return Err(Error::Checkpoint(format!(
                        "tensor `{}` ({}) does not match expected `{name}` ({})",
                        entry.name,
                        entry.len,
                        dst.len()
                    )));
                }
                let end = offset + 8 * entry.len;
                let chunk = bytes.get(offset..end).ok_or_else(|| bad("truncated tensor data"))?;
                for (d, c) in dst.iter_mut().zip(chunk.chunks_exact(8)) {
                    *d = f64::from_le_bytes(c.try_into().unwrap());
                }
                offset = end;
            }
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        if !params.is_finite() {
            return Err(bad("checkpoint holds non-finite parameters"));
        }
        Ok(Checkpoint {
            params,
            relations: header.relations,
            config: header.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
