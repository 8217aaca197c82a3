//! Binary checkpoint format.
//!
//! ```text
//! "RVQC" | u16 version | u32 len | JSON block
//! then per parameter: u32 len | name | u32 rank | u32 dims… | f64 values…
//! ```
//!
//! All integers and floats are little-endian. The JSON block holds the
//! caller's config under `config` and per-parameter flags under `params`.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::array::DenseArray;
use crate::error::Result;
use crate::io::{write_atomic, ByteReader};
use crate::params::ParameterStore;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RVQC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: Value,
    params: Vec<ParamMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    regularizable: bool,
    frozen: bool,
}

pub fn encode_checkpoint(config: &Value, store: &ParameterStore) -> Result<Vec<u8>> {
    let header = Header {
        config: config.clone(),
        params: store
            .iter()
            .map(|(name, p)| ParamMeta {
                name: name.to_string(),
                regularizable: p.regularizable,
                frozen: p.frozen,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + store.num_values() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, p) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let shape = p.value.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in p.value.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Value, ParameterStore)> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(r.error_at(0, "bad magic, expected RVQC"));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.error_at(4, &format!("unsupported version {version}")));
    }
    let json_len = r.u32()? as usize;
    let json_start = r.pos;
    let header: Header = serde_json::from_slice(r.take(json_len)?)
        .map_err(|e| r.error_at(json_start, &format!("bad config block: {e}")))?;

    let mut store = ParameterStore::new();
    while !r.at_end() {
        let name_len = r.u32()? as usize;
        let name_at = r.pos;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| r.error_at(name_at, "parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(r.error_at(r.pos - 4, &format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let count = shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d));
        let count = count
            .filter(|c| c.checked_mul(8).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| r.error_at(r.pos, "payload shorter than declared shape"))?;
        let values = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let meta = header.params.iter().find(|m| m.name == name);
        let value = DenseArray::new(shape, values)
            .map_err(|e| r.error_at(name_at, &e.to_string()))?;
        store.insert(&name, value, meta.is_none_or(|m| m.regularizable))?;
        if meta.is_some_and(|m| m.frozen) {
            store.set_frozen(&name, true)?;
        }
    }
    if store.len() != header.params.len() {
        return Err(r.error_at(
            r.pos,
            &format!(
                "config lists {} parameters, payload has {}",
                header.params.len(),
                store.len()
            ),
        ));
    }
    Ok((header.config, store))
}

/// Writes to a temporary sibling then renames into place.
pub fn save_checkpoint(path: &Path, config: &Value, store: &ParameterStore) -> Result<()> {
    let bytes = encode_checkpoint(config, store)?;
    write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<(Value, ParameterStore)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
