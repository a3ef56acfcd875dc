//! FANF: the canonical binary feature file.
//!
//! Little-endian throughout.
//!
//! ```text
//! header:  "FANF" | version u32 (=1) | D u32 | C u32 | count u64
//!          C × class name
//! record:  videoId | subjectId | label u32 | n u32 | n·D × f32 (row-major)
//! string:  byte length u16 | UTF-8 bytes
//! ```

use std::fs;
use std::path::Path;

use crate::error::{FanError, Result};
use crate::numkernel::Matrix;
use crate::scalar::Scalar;

use super::{Dataset, VideoInstance};

pub const FANF_MAGIC: &[u8; 4] = b"FANF";
pub const FANF_VERSION: u32 = 1;

fn put_str(out: &mut Vec<u8>, s: &str, what: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| FanError::Schema(format!("{what} {s:?} is longer than 65535 bytes")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn to_u32(x: usize, what: &str) -> Result<u32> {
    u32::try_from(x).map_err(|_| FanError::Schema(format!("{what} {x} does not fit in 32 bits")))
}

pub fn encode_feature_bytes<T: Scalar>(dataset: &Dataset<T>) -> Result<Vec<u8>> {
    dataset.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(FANF_MAGIC);
    out.extend_from_slice(&FANF_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(dataset.dim, "feature dimension")?.to_le_bytes());
    out.extend_from_slice(&to_u32(dataset.classes(), "class count")?.to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    for name in &dataset.class_names {
        put_str(&mut out, name, "class name")?;
    }
    for inst in &dataset.instances {
        put_str(&mut out, &inst.video_id, "video id")?;
        put_str(&mut out, &inst.subject_id, "subject id")?;
        out.extend_from_slice(&to_u32(inst.label, "label")?.to_le_bytes());
        out.extend_from_slice(&to_u32(inst.frame_count(), "frame count")?.to_le_bytes());
        for &x in inst.features.as_slice() {
            let v = x.to_f32().unwrap_or(f32::NAN);
            if !v.is_finite() {
                return Err(FanError::Data(format!(
                    "video {:?} has a feature outside single precision range",
                    inst.video_id
                )));
            }
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_feature_file<T: Scalar>(dataset: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_feature_bytes(dataset)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_feature_file<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let bytes = fs::read(path)?;
    decode_feature_bytes(&bytes)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, err: impl FnOnce() -> FanError) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(err());
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, err: impl FnOnce() -> FanError) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, err)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, err: impl FnOnce() -> FanError) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, err)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, err: impl FnOnce() -> FanError) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, err)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self, err: impl Fn() -> FanError) -> Result<String> {
        let len = self.u16(&err)? as usize;
        let raw = self.take(len, &err)?;
        String::from_utf8(raw.to_vec()).map_err(|_| err())
    }
}

pub fn decode_feature_bytes<T: Scalar>(bytes: &[u8]) -> Result<Dataset<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let header = || FanError::Format("truncated FANF header".into());
    if r.take(4, header)? != FANF_MAGIC {
        return Err(FanError::Format("bad magic, not a FANF file".into()));
    }
    let version = r.u32(header)?;
    if version != FANF_VERSION {
        return Err(FanError::Format(format!(
            "unsupported FANF version {version}"
        )));
    }
    let dim = r.u32(header)? as usize;
    let classes = r.u32(header)? as usize;
    let count = r.u64(header)?;
    if dim == 0 || classes == 0 {
        return Err(FanError::Schema(format!(
            "header declares D={dim}, C={classes}"
        )));
    }
    let class_names = (0..classes)
        .map(|_| r.string(|| FanError::Format("truncated or invalid class name".into())))
        .collect::<Result<Vec<_>>>()?;

    let mut instances = Vec::new();
    for k in 0..count {
        let truncated = || {
            FanError::Schema(format!(
                "record {k} is truncated or inconsistent with D={dim}"
            ))
        };
        let video_id = r.string(truncated)?;
        let subject_id = r.string(truncated)?;
        let label = r.u32(truncated)? as usize;
        let frames = r.u32(truncated)? as usize;
        if label >= classes {
            return Err(FanError::Schema(format!(
                "record {k} ({video_id:?}) has label {label} but only {classes} classes"
            )));
        }
        if frames == 0 {
            return Err(FanError::Schema(format!(
                "record {k} ({video_id:?}) has no frames"
            )));
        }
        let payload_len = frames
            .checked_mul(dim)
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(truncated)?;
        let payload = r.take(payload_len, truncated)?;
        let mut data = Vec::with_capacity(frames * dim);
        for (j, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(FanError::Data(format!(
                    "record {k} ({video_id:?}) has a non-finite feature at frame {}, column {}",
                    j / dim,
                    j % dim
                )));
            }
            data.push(T::lit(v as f64));
        }
        instances.push(VideoInstance {
            video_id,
            subject_id,
            label,
            features: Matrix::new(frames, dim, data)?,
        });
    }
    if r.pos != bytes.len() {
        return Err(FanError::Schema(format!(
            "{} trailing bytes after the last record",
            bytes.len() - r.pos
        )));
    }
    Dataset::new(instances, dim, class_names)
}
