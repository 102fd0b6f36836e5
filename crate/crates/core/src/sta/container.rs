//! Binary emission container and its JSON sidecar of gold spans.
//!
//! Layout (little endian): magic `DYSEMIS1`, u32 version, u32 frames,
//! u32 classes, f32 frame length in ms, then frames x classes f32 values
//! row by row.

use std::fs;
use std::io;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EmissionMatrix, FrameSpan, StaError};

const MAGIC: &[u8; 8] = b"DYSEMIS1";
const VERSION: u32 = 1;
const HEADER: usize = 8 + 4 * 4;

#[derive(Debug, Error)]
pub enum EmissionError {
    #[error("cannot access emission file: {0}")]
    Io(#[from] io::Error),
    #[error("not an emission container")]
    BadMagic,
    #[error("unsupported emission container version {0}")]
    Version(u32),
    #[error("emission container is truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error(transparent)]
    Invalid(#[from] StaError),
    #[error("malformed sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldSidecar {
    pub record_id: Option<u64>,
    pub frame_ms: f64,
    pub spans: Vec<FrameSpan>,
}

pub fn write_emissions(path: impl AsRef<Path>, emissions: &EmissionMatrix) -> Result<(), EmissionError> {
    let (t, c) = emissions.frames.dim();
    let mut bytes = Vec::with_capacity(HEADER + 4 * t * c);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(t as u32).to_le_bytes());
    bytes.extend_from_slice(&(c as u32).to_le_bytes());
    bytes.extend_from_slice(&(emissions.frame_ms as f32).to_le_bytes());
    for v in emissions.frames.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_emissions(path: impl AsRef<Path>) -> Result<EmissionMatrix, EmissionError> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER {
        return Err(EmissionError::Truncated { expected: HEADER, found: bytes.len() });
    }
    if &bytes[..8] != MAGIC {
        return Err(EmissionError::BadMagic);
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes"));
    if word(0) != VERSION {
        return Err(EmissionError::Version(word(0)));
    }
    let (t, c) = (word(1) as usize, word(2) as usize);
    let frame_ms = f32::from_le_bytes(bytes[20..24].try_into().expect("4 bytes")) as f64;
    let expected = HEADER + 4 * t * c;
    if bytes.len() != expected {
        return Err(EmissionError::Truncated { expected, found: bytes.len() });
    }
    let values: Vec<f64> = bytes[HEADER..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    let frames = Array2::from_shape_vec((t, c), values).map_err(|e| StaError::InvalidMatrix(e.to_string()))?;
    Ok(EmissionMatrix::new(frames, frame_ms)?)
}

pub fn write_sidecar(path: impl AsRef<Path>, sidecar: &GoldSidecar) -> Result<(), EmissionError> {
    fs::write(path, serde_json::to_string_pretty(sidecar)?)?;
    Ok(())
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<GoldSidecar, EmissionError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
