//! Noise sidecars: exact perturbation offsets as 16-bit signed little-endian
//! raw data plus a small JSON header.
//!
//! Offsets are stored as `round(value * scale)` with `scale = 128 * 255`, so
//! every multiple of `1/(128 * 255)` in `[-1, 1]` survives a round trip
//! exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::PerturbationField;
use crate::perturb::PerturbMode;

pub const NOISE_VERSION: u32 = 1;
pub const NOISE_SCALE: f64 = 32640.0;
pub const NOISE_HEADER_SUFFIX: &str = ".noise.json";
pub const NOISE_DATA_SUFFIX: &str = ".noise.i16";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseHeader {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub dtype: String,
    pub scale: f64,
    pub mode: PerturbMode,
    /// Magnitude in `1/255` units.
    pub eps: f64,
}

/// Header and data paths for an image stem inside `dir`.
pub fn sidecar_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{stem}{NOISE_HEADER_SUFFIX}")),
        dir.join(format!("{stem}{NOISE_DATA_SUFFIX}")),
    )
}

pub fn encode(field: &PerturbationField) -> Vec<u8> {
    field
        .data()
        .iter()
        .flat_map(|v| ((v * NOISE_SCALE).round().clamp(-32768.0, 32767.0) as i16).to_le_bytes())
        .collect()
}

pub fn decode(header: &NoiseHeader, bytes: &[u8]) -> Result<PerturbationField> {
    let expected = header.height * header.width * header.channels * 2;
    if header.channels != 3 || header.dtype != "i16le" || bytes.len() != expected {
        return Err(Error::Domain(format!(
            "noise data of {} bytes does not match header ({}x{}x{} {})",
            bytes.len(),
            header.height,
            header.width,
            header.channels,
            header.dtype
        )));
    }
    let data = bytes
        .chunks_exact(2)
        .map(|b| f64::from(i16::from_le_bytes([b[0], b[1]])) / header.scale)
        .collect();
    PerturbationField::from_vec(header.height, header.width, data)
}

/// Writes `<stem>.noise.json` and `<stem>.noise.i16` into `dir`.
pub fn write_sidecar(dir: &Path, stem: &str, field: &PerturbationField, mode: PerturbMode, eps: f64) -> Result<()> {
    let header = NoiseHeader {
        version: NOISE_VERSION,
        height: field.height(),
        width: field.width(),
        channels: 3,
        dtype: "i16le".to_string(),
        scale: NOISE_SCALE,
        mode,
        eps,
    };
    let (hp, dp) = sidecar_paths(dir, stem);
    std::fs::write(&hp, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(&hp, e))?;
    std::fs::write(&dp, encode(field)).map_err(|e| Error::io(&dp, e))
}

/// Reads a sidecar given its header path.
pub fn read_sidecar(header_path: &Path) -> Result<(NoiseHeader, PerturbationField)> {
    let text = std::fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: NoiseHeader = serde_json::from_str(&text)?;
    if header.version != NOISE_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: NOISE_VERSION,
        });
    }
    let name = header_path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let stem = name.strip_suffix(NOISE_HEADER_SUFFIX).unwrap_or(name);
    let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
    let (_, dp) = sidecar_paths(dir, stem);
    let bytes = std::fs::read(&dp).map_err(|e| Error::io(&dp, e))?;
    let field = decode(&header, &bytes)?;
    Ok((header, field))
}

/// Sorted sidecar header paths in `dir`.
pub fn list_sidecars(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.to_str().is_some_and(|p| p.ends_with(NOISE_HEADER_SUFFIX)) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
