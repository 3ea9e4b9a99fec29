//! Raw little-endian `f32` array files with a JSON sidecar
//! `{"shape": [...], "dtype": "f32"}`.
//!
//! The sidecar of `x.bin` is `x.json`; any other data file `x.ext` uses
//! `x.ext.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub shape: Vec<usize>,
    pub dtype: String,
}

pub fn sidecar_path(data: &Path) -> PathBuf {
    match data.extension().and_then(|e| e.to_str()) {
        Some("bin") => data.with_extension("json"),
        _ => {
            let mut s = data.as_os_str().to_owned();
            s.push(".json");
            PathBuf::from(s)
        }
    }
}

pub fn write_array(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(Error::arg(format!(
            "shape {shape:?} holds {expected} values but {} were given",
            data.len()
        )));
    }
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = Sidecar {
        shape: shape.to_vec(),
        dtype: "f32".into(),
    };
    let side_path = sidecar_path(path);
    let text = serde_json::to_string(&side).expect("sidecar serializes");
    fs::write(&side_path, text).map_err(|e| Error::io(side_path, e))
}

/// Reads an array, returning its shape and values. Errors are plain
/// strings so callers can attach the record id.
pub fn read_array(path: &Path) -> std::result::Result<(Vec<usize>, Vec<f32>), String> {
    let side_path = sidecar_path(path);
    let text = fs::read_to_string(&side_path)
        .map_err(|e| format!("cannot read {}: {e}", side_path.display()))?;
    let side: Sidecar = serde_json::from_str(&text)
        .map_err(|e| format!("bad sidecar {}: {e}", side_path.display()))?;
    if side.dtype != "f32" {
        return Err(format!(
            "{} has dtype {:?}, expected \"f32\"",
            side_path.display(),
            side.dtype
        ));
    }
    let bytes = fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let expected: usize = side.shape.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(format!(
            "{} has {} bytes but shape {:?} needs {expected}",
            path.display(),
            bytes.len(),
            side.shape
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((side.shape, data))
}
