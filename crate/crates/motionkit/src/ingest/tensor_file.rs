//! Row-major f32 tensor container used for feature sets and checkpoints.
//!
//! Layout, all little-endian: magic `MPTN`, version u8 (= 1), dtype u8
//! (1 = f32), ndim u8, then ndim u32 dims, then the row-major payload.
//! Values round-trip bit-exactly, including NaN payloads.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::IngestError;

pub const MAGIC: [u8; 4] = *b"MPTN";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorData {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorData {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub fn write_tensor(path: &Path, dims: &[usize], data: &[f32]) -> Result<(), IngestError> {
    if dims.is_empty() || dims.len() > 255 || dims.iter().any(|&d| d > u32::MAX as usize) {
        return Err(IngestError::BadDims {
            dims: dims.to_vec(),
        });
    }
    let want: usize = dims.iter().product();
    if want != data.len() {
        return Err(IngestError::PayloadMismatch {
            path: path.to_path_buf(),
            want,
            got: data.len(),
        });
    }
    let file = fs::File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| -> Result<(), IngestError> {
        w.write_all(bytes).map_err(|e| IngestError::io(path, e))
    };
    emit(&MAGIC)?;
    emit(&[VERSION, DTYPE_F32, dims.len() as u8])?;
    for &d in dims {
        emit(&(d as u32).to_le_bytes())?;
    }
    for &v in data {
        emit(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<TensorData, IngestError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| IngestError::io(path, e))?;
    let fail_short = || IngestError::BadMagic {
        path: path.to_path_buf(),
    };
    if bytes.len() < 7 || bytes[..4] != MAGIC {
        return Err(fail_short());
    }
    let version = bytes[4];
    if version != VERSION {
        return Err(IngestError::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let dtype = bytes[5];
    if dtype != DTYPE_F32 {
        return Err(IngestError::UnsupportedDtype {
            path: path.to_path_buf(),
            dtype,
        });
    }
    let ndim = bytes[6] as usize;
    let header_len = 7 + 4 * ndim;
    if bytes.len() < header_len || ndim == 0 {
        return Err(fail_short());
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 7 + 4 * i;
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        dims.push(d as usize);
    }
    let want: usize = dims.iter().product();
    let payload = &bytes[header_len..];
    if payload.len() != want * 4 {
        return Err(IngestError::PayloadMismatch {
            path: path.to_path_buf(),
            want,
            got: payload.len() / 4,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(TensorData { dims, data })
}
