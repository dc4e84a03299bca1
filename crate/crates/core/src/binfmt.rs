//! The `AIF1` matrix file: feature matrices and tract-variable trajectories.
//!
//! Layout: magic `AIF1`, little-endian u32 rows, u32 cols, u32 valid_frames,
//! then rows×cols little-endian f32 in row-major order.

use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"AIF1";

pub fn encode_matrix(values: ArrayView2<'_, f64>, valid_frames: usize) -> Vec<u8> {
    let (rows, cols) = values.dim();
    let mut out = Vec::with_capacity(16 + rows * cols * 4);
    out.extend_from_slice(MATRIX_MAGIC);
    for n in [rows, cols, valid_frames] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for &v in values.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> std::result::Result<(Array2<f64>, usize), String> {
    if bytes.len() < 16 || &bytes[..4] != MATRIX_MAGIC {
        return Err("missing AIF1 header".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (rows, cols, valid) = (word(4), word(8), word(12));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(16))
        .ok_or("dimensions overflow")?;
    if bytes.len() != expected {
        return Err(format!(
            "{rows}x{cols} needs {expected} bytes, file has {}",
            bytes.len()
        ));
    }
    if valid > rows {
        return Err(format!("valid_frames {valid} exceeds rows {rows}"));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let values = Array2::from_shape_vec((rows, cols), data).map_err(|e| e.to_string())?;
    Ok((values, valid))
}

pub fn write_matrix(path: &Path, values: ArrayView2<'_, f64>, valid_frames: usize) -> Result<()> {
    std::fs::write(path, encode_matrix(values, valid_frames)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<(Array2<f64>, usize)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes).map_err(|m| Error::format("matrix", path, m))
}

/// Rounds every value through f32 so it survives an `AIF1` round trip exactly.
pub fn f32_exact(values: &mut Array2<f64>) {
    values.mapv_inplace(|v| f64::from(v as f32));
}
