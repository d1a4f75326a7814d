//! Little-endian float32 plane files with JSON sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::frame::{Dims, Frame};

/// `frames.f32` -> `frames.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("sidecar types serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedHeader { path: path.to_path_buf(), reason: e.to_string() })
}

/// Writes planes back to back, row-major, as little-endian `f32`.
pub fn write_f32_planes(path: &Path, planes: &[Frame]) -> Result<()> {
    let mut bytes = Vec::with_capacity(planes.iter().map(|p| p.len() * 4).sum());
    for v in planes.iter().flat_map(|p| p.iter()) {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32_planes(path: &Path, count: usize, dims: Dims) -> Result<Vec<Frame>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = count * dims.pixels() * 4;
    if bytes.len() != expected {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    let values: Vec<f64> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Ok(values
        .chunks_exact(dims.pixels().max(1))
        .take(count)
        .map(|c| Frame::from_shape_vec(dims.shape(), c.to_vec()).expect("plane size"))
        .collect())
}
