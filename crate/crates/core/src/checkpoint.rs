//! FANP: parameter checkpoint file.
//!
//! Little-endian.
//!
//! ```text
//! "FANP" | version u32 (=1) | D u32 | C u32 | mode u32 (0 full, 1 self-only)
//! q0 (D) | q1 (2D) | class_w (C × rep, row-major) | class_b (C)     all f64
//! ```
//!
//! `rep` is `2D` in full mode and `D` in self-only mode.

use std::fs;
use std::path::Path;

use crate::error::{FanError, Result};
use crate::fanhead::{FanParams, Mode};
use crate::scalar::Scalar;

pub const FANP_MAGIC: &[u8; 4] = b"FANP";
pub const FANP_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_checkpoint<T: Scalar>(params: &FanParams<T>) -> Result<Vec<u8>> {
    params.check_finite()?;
    let dim = u32::try_from(params.dim()).map_err(|_| FanError::Schema("D too large".into()))?;
    let classes =
        u32::try_from(params.classes()).map_err(|_| FanError::Schema("C too large".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.len());
    out.extend_from_slice(FANP_MAGIC);
    out.extend_from_slice(&FANP_VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&classes.to_le_bytes());
    out.extend_from_slice(&params.mode.tag().to_le_bytes());
    for x in params.to_flat() {
        out.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<FanParams<T>> {
    if bytes.len() < HEADER_LEN {
        return Err(FanError::Format("truncated FANP header".into()));
    }
    if &bytes[..4] != FANP_MAGIC {
        return Err(FanError::Format("bad magic, not a FANP file".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().expect("4 bytes"));
    let version = word(1);
    if version != FANP_VERSION {
        return Err(FanError::Format(format!(
            "unsupported FANP version {version}"
        )));
    }
    let dim = word(2) as usize;
    let classes = word(3) as usize;
    let mode = Mode::from_tag(word(4))
        .ok_or_else(|| FanError::Format(format!("unknown mode tag {}", word(4))))?;
    if dim == 0 || classes == 0 {
        return Err(FanError::Schema(format!(
            "header declares D={dim}, C={classes}"
        )));
    }
    let count = FanParams::<T>::flat_len(dim, classes, mode);
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * count {
        return Err(FanError::Schema(format!(
            "expected {count} parameters for D={dim}, C={classes}, {mode} mode; found {} bytes",
            body.len()
        )));
    }
    let mut flat = Vec::with_capacity(count);
    for (j, chunk) in body.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(FanError::Data(format!("parameter {j} is not finite")));
        }
        flat.push(T::lit(v));
    }
    FanParams::from_flat(dim, classes, mode, &flat)
}

pub fn write_checkpoint<T: Scalar>(params: &FanParams<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(params)?)?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<FanParams<T>> {
    decode_checkpoint(&fs::read(path)?)
}
