//! Framed binary files shared by datasets and model checkpoints.
//!
//! Layout: a little-endian `u32` giving the header length in bytes, that many
//! bytes of UTF-8 JSON, then a payload of little-endian IEEE-754 `f64` values.
//! Dataset files ([`crate::datagen`]) put the row-major feature matrix in the
//! payload. Checkpoints ([`Checkpoint`]) carry a tensor table in the header
//! giving each tensor's name, shape and byte offset into the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn encode_framed(header: &str, payload: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(4 + header.len() + payload.len() * 8);
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn write_framed(path: &Path, header: &str, payload: &[f64]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_framed(header, payload)).map_err(|e| Error::io(path, e))
}

/// Splits a framed file into its header text and raw payload bytes.
pub fn split_framed<'a>(path: &Path, bytes: &'a [u8]) -> Result<(&'a str, &'a [u8])> {
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 4 {
        return Err(malformed(format!("{} bytes is too short for a header length", bytes.len())));
    }
    let header_len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let rest = &bytes[4..];
    if rest.len() < header_len {
        return Err(malformed(format!(
            "header declares {header_len} bytes but only {} follow",
            rest.len()
        )));
    }
    let header = std::str::from_utf8(&rest[..header_len])
        .map_err(|e| malformed(format!("header is not UTF-8: {e}")))?;
    Ok((header, &rest[header_len..]))
}

pub fn decode_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// A named collection of `f64` tensors plus free-form JSON metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Checkpoint {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Looks up `name` and checks its shape, reporting failures against `path`.
    pub fn expect(&self, path: &Path, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self.get(name).ok_or_else(|| Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("missing tensor {name:?}"),
        })?;
        if t.shape != shape {
            return Err(Error::ShapeMismatch {
                path: path.to_path_buf(),
                reason: format!("tensor {name:?} has shape {:?}, expected {shape:?}", t.shape),
            });
        }
        Ok(t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut payload = Vec::new();
        for t in &self.tensors {
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
            });
            offset += t.data.len() * 8;
            payload.extend_from_slice(&t.data);
        }
        let header = CheckpointHeader {
            meta: self.meta.clone(),
            tensors: entries,
        };
        let text = serde_json::to_string(&header).expect("checkpoint header serializes");
        encode_framed(&text, &payload)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        Self::from_bytes(path, &bytes)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let (text, payload) = split_framed(path, bytes)?;
        let header: CheckpointHeader = serde_json::from_str(text).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("bad checkpoint header: {e}"),
        })?;
        let expected: usize = header
            .tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>() * 8)
            .sum();
        if payload.len() != expected {
            return Err(Error::PayloadLength {
                path: path.to_path_buf(),
                expected,
                actual: payload.len(),
            });
        }
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            if entry.offset != offset {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    reason: format!(
                        "tensor {:?} declared at offset {}, expected {offset}",
                        entry.name, entry.offset
                    ),
                });
            }
            let len = entry.shape.iter().product::<usize>() * 8;
            let data = decode_f64s(&payload[offset..offset + len]);
            offset += len;
            tensors.push(Tensor {
                name: entry.name,
                shape: entry.shape,
                data,
            });
        }
        Ok(Checkpoint {
            meta: header.meta,
            tensors,
        })
    }
}
