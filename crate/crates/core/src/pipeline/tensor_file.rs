//! Binary tensor container.
//!
//! Layout (all integers little-endian):
//! - magic `"TNSR"` (4 bytes)
//! - format version `u8` (currently 1)
//! - dtype code `u8`: 0 = f32, 1 = f64
//! - rank `u8`
//! - dims: rank x `u64`
//! - payload: row-major elements, little-endian
//!
//! Writes are whole-file atomic (temp file then rename).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: [u8; 4] = *b"TNSR";
const VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

/// A tensor loaded from disk in whichever precision it was stored.
#[derive(Debug, Clone)]
pub enum TensorData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

/// Writes `bytes` to `path` atomically: the data lands under a temporary
/// sibling name and is renamed into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn encode<T, const W: usize>(t: &Tensor<T>, dtype: u8, to_le: impl Fn(&T) -> [u8; W]) -> Vec<u8>
where
    T: num_traits::Float + Send + Sync,
{
    let mut out = Vec::with_capacity(7 + t.shape().len() * 8 + t.len() * W);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(dtype);
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&to_le(v));
    }
    out
}

pub fn save_f32(path: &Path, t: &Tensor<f32>) -> Result<()> {
    write_atomic(path, &encode(t, DTYPE_F32, |v| v.to_le_bytes()))
}

pub fn save_f64(path: &Path, t: &Tensor<f64>) -> Result<()> {
    write_atomic(path, &encode(t, DTYPE_F64, |v| v.to_le_bytes()))
}

pub fn load(path: &Path) -> Result<TensorData> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    parse(path, &bytes)
}

pub fn load_f32(path: &Path) -> Result<Tensor<f32>> {
    match load(path)? {
        TensorData::F32(t) => Ok(t),
        TensorData::F64(_) => Err(Error::Parse {
            path: path.to_path_buf(),
            message: "expected an f32 tensor, found f64".to_string(),
        }),
    }
}

fn parse(path: &Path, bytes: &[u8]) -> Result<TensorData> {
    let err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 7 {
        return Err(err("file too short for a tensor header".to_string()));
    }
    if bytes[0..4] != MAGIC {
        return Err(err("bad magic, expected \"TNSR\"".to_string()));
    }
    if bytes[4] != VERSION {
        return Err(err(format!("unsupported format version {}", bytes[4])));
    }
    let dtype = bytes[5];
    let rank = bytes[6] as usize;
    let dims_end = 7 + rank * 8;
    if bytes.len() < dims_end {
        return Err(err("file truncated inside the dims header".to_string()));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for r in 0..rank {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&bytes[7 + r * 8..15 + r * 8]);
        let d = u64::from_le_bytes(buf);
        if d == 0 || d > usize::MAX as u64 {
            return Err(err(format!("dimension {r} out of range: {d}")));
        }
        let d = d as usize;
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| err("element count overflows".to_string()))?;
        shape.push(d);
    }
    let payload = &bytes[dims_end..];
    match dtype {
        DTYPE_F32 => {
            if payload.len() != numel * 4 {
                return Err(err(format!(
                    "payload holds {} bytes, expected {} f32 elements",
                    payload.len(),
                    numel
                )));
            }
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Ok(TensorData::F32(Tensor::new(shape, data).map_err(|e| {
                err(format!("invalid tensor: {e}"))
            })?))
        }
        DTYPE_F64 => {
            if payload.len() != numel * 8 {
                return Err(err(format!(
                    "payload holds {} bytes, expected {} f64 elements",
                    payload.len(),
                    numel
                )));
            }
            let data: Vec<f64> = payload
                .chunks_exact(8)
                .map(|c| {
                    let mut buf = [0u8; 8];
                    buf.copy_from_slice(c);
                    f64::from_le_bytes(buf)
                })
                .collect();
            Ok(TensorData::F64(Tensor::new(shape, data).map_err(|e| {
                err(format!("invalid tensor: {e}"))
            })?))
        }
        other => Err(err(format!("unknown dtype code {other}"))),
    }
}
