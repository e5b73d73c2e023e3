//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `SHSQCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, then the
//! raw little-endian `f32` values of every tensor listed in the header, in
//! header order. The header carries caller metadata, the tensor table
//! (name, role, shape) and the optimizer step counter and settings.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamConfig, AdamState, Array, ParamStore};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SHSQCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    AdamM,
    AdamV,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    role: Role,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    step: u64,
    config: AdamConfig,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
    adam: Option<AdamHeader>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Free-form metadata (model config, schedule position, ...).
    pub meta: serde_json::Value,
    pub params: ParamStore<f32>,
    pub adam: Option<AdamState<f32>>,
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let mut tensors = Vec::new();
    let mut blobs: Vec<&Array<f32>> = Vec::new();
    for (_, name, a) in ckpt.params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            role: Role::Param,
            rows: a.rows(),
            cols: a.cols(),
        });
        blobs.push(a);
    }
    if let Some(adam) = &ckpt.adam {
        for (role, arrays) in [(Role::AdamM, &adam.m), (Role::AdamV, &adam.v)] {
            for ((_, name, _), a) in ckpt.params.iter().zip(arrays) {
                tensors.push(TensorEntry {
                    name: name.to_string(),
                    role,
                    rows: a.rows(),
                    cols: a.cols(),
                });
                blobs.push(a);
            }
        }
    }
    let header = Header {
        meta: ckpt.meta.clone(),
        tensors,
        adam: ckpt.adam.as_ref().map(|a| AdamHeader {
            step: a.step,
            config: a.config,
        }),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for a in blobs {
        for &x in a.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(&format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(20..20 + header_len)
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;

    let mut offset = 20 + header_len;
    let mut params = ParamStore::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for t in &header.tensors {
        let n = t.rows * t.cols;
        let raw = bytes
            .get(offset..offset + 4 * n)
            .ok_or_else(|| bad(&format!("truncated data for {}", t.name)))?;
        offset += 4 * n;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let a = Array::from_vec(t.rows, t.cols, data).expect("sized");
        match t.role {
            Role::Param => {
                params.insert(t.name.clone(), a);
            }
            Role::AdamM => m.push(a),
            Role::AdamV => v.push(a),
        }
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes after tensor data"));
    }
    let adam = header.adam.map(|h| AdamState {
        config: h.config,
        step: h.step,
        m,
        v,
    });
    Ok(Checkpoint {
        meta: header.meta,
        params,
        adam,
    })
}
