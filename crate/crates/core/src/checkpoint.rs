//! Binary tensor container shared by encoder and head checkpoints.
//!
//! Layout: a one-line UTF-8 JSON header, a `\n`, a NUL byte, then every
//! tensor's values as little-endian `f64` in directory order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::{Mat, Params};

pub const FORMAT: &str = "bugloc-tensors";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: String,
    config: Value,
    tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Serialises `params` with a `kind` tag and a config echo.
pub fn encode<C: Serialize>(kind: &str, config: &C, params: &Params) -> Result<Vec<u8>> {
    let header = Header {
        format: FORMAT.to_string(),
        version: VERSION,
        kind: kind.to_string(),
        config: serde_json::to_value(config)?,
        tensors: params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: vec![t.nrows(), t.ncols()],
                dtype: "f64".to_string(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.extend_from_slice(b"\n\0");
    for t in params.values() {
        for &x in t.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a container, checking the `kind` tag and the exact payload size.
pub fn decode(bytes: &[u8], kind: &str) -> Result<(Value, Params)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("missing header terminator"))?;
    if bytes.get(nl + 1) != Some(&0) {
        return Err(corrupt("header terminator must be newline + NUL"));
    }
    let header: Header = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| corrupt(format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(corrupt(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    if header.kind != kind {
        return Err(corrupt(format!("expected a {kind} checkpoint, found {}", header.kind)));
    }
    let mut data = &bytes[nl + 2..];
    let mut params = Params::new();
    for entry in header.tensors {
        if entry.dtype != "f64" {
            return Err(corrupt(format!("{}: unsupported dtype {}", entry.name, entry.dtype)));
        }
        let &[rows, cols] = entry.shape.as_slice() else {
            return Err(corrupt(format!("{}: expected a 2-d shape", entry.name)));
        };
        let n = rows * cols;
        if data.len() < n * 8 {
            return Err(corrupt(format!("truncated payload in {}", entry.name)));
        }
        let (chunk, rest) = data.split_at(n * 8);
        let values: Vec<f64> = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let t = Mat::from_shape_vec((rows, cols), values).expect("length checked");
        if params.insert(entry.name.clone(), t).is_some() {
            return Err(corrupt(format!("duplicate tensor {}", entry.name)));
        }
        data = rest;
    }
    if !data.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", data.len())));
    }
    Ok((header.config, params))
}

/// Fails unless `params` has exactly the expected names, order and shapes.
pub fn check_layout(params: &Params, expected: &[(String, (usize, usize))]) -> Result<()> {
    if params.len() != expected.len() {
        return Err(corrupt(format!(
            "expected {} tensors, found {}",
            expected.len(),
            params.len()
        )));
    }
    for ((name, t), (want, shape)) in params.iter().zip(expected) {
        if name != want {
            return Err(corrupt(format!("expected tensor {want}, found {name}")));
        }
        if t.dim() != *shape {
            return Err(corrupt(format!(
                "{name}: shape {:?} does not match config {:?}",
                t.dim(),
                shape
            )));
        }
    }
    if params.values().any(|t| t.iter().any(|x| !x.is_finite())) {
        return Err(corrupt("non-finite parameter values"));
    }
    Ok(())
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
