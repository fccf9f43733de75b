//! `CGNM` matrix container.
//!
//! ```text
//! "CGNM"  u32 version=1  u32 rows  u32 cols  f64 stride  f64 offset
//! rows*cols f32, row-major
//! ```
//! Little-endian throughout. Token-embedding matrices carry stride 0.

use std::path::Path;

use crate::alignment::FrameStream;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CGNM";
pub const MATRIX_VERSION: u32 = 1;
pub const MATRIX_HEADER_BYTES: usize = 4 + 4 + 4 + 4 + 8 + 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatrixHeader {
    pub rows: usize,
    pub cols: usize,
    pub stride: f64,
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub stride: f64,
    pub offset: f64,
    /// Always rank 2, possibly with zero rows.
    pub data: Tensor<f32>,
}

impl Matrix {
    pub fn new(stride: f64, offset: f64, data: Tensor<f32>) -> Result<Self> {
        if data.shape().len() != 2 {
            return Err(Error::contract(format!("matrix must be rank 2, got {:?}", data.shape())));
        }
        Ok(Matrix { stride, offset, data })
    }

    pub fn header(&self) -> MatrixHeader {
        MatrixHeader {
            rows: self.data.shape()[0],
            cols: self.data.shape()[1],
            stride: self.stride,
            offset: self.offset,
        }
    }

    pub fn into_frames(self) -> Result<FrameStream> {
        FrameStream::new(self.stride, self.offset, self.data)
    }

    pub fn from_frames(stream: &FrameStream) -> Self {
        Matrix {
            stride: stream.stride,
            offset: stream.offset,
            data: stream.features.clone(),
        }
    }

    /// Bit-exact equality, distinguishing `-0.0` and NaN payloads.
    pub fn bits_eq(&self, other: &Matrix) -> bool {
        self.stride.to_bits() == other.stride.to_bits()
            && self.offset.to_bits() == other.offset.to_bits()
            && self.data.shape() == other.data.shape()
            && self.data.data().iter().zip(other.data.data()).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let h = m.header();
    let mut out = Vec::with_capacity(MATRIX_HEADER_BYTES + m.data.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&(h.rows as u32).to_le_bytes());
    out.extend_from_slice(&(h.cols as u32).to_le_bytes());
    out.extend_from_slice(&h.stride.to_le_bytes());
    out.extend_from_slice(&h.offset.to_le_bytes());
    for v in m.data.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_header(bytes: &[u8], origin: &str) -> Result<MatrixHeader> {
    let need = |at: usize, n: usize, what: &str| -> Result<()> {
        if bytes.len() < at + n {
            Err(Error::format(origin, format!("truncated at byte {} while reading {what}", bytes.len())))
        } else {
            Ok(())
        }
    };
    need(0, 4, "magic")?;
    if &bytes[..4] != MAGIC {
        return Err(Error::format(origin, "not a CGNM matrix (bad magic)"));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let f64_at = |at: usize| f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    need(4, 4, "version")?;
    let version = u32_at(4);
    if version != MATRIX_VERSION {
        return Err(Error::format(origin, format!("unsupported matrix version {version}")));
    }
    need(8, 8, "dimensions")?;
    need(16, 16, "stride and offset")?;
    Ok(MatrixHeader {
        rows: u32_at(8) as usize,
        cols: u32_at(12) as usize,
        stride: f64_at(16),
        offset: f64_at(24),
    })
}

pub fn decode_matrix(bytes: &[u8], origin: &str) -> Result<Matrix> {
    let h = decode_header(bytes, origin)?;
    let n = h
        .rows
        .checked_mul(h.cols)
        .ok_or_else(|| Error::format(origin, "matrix dimensions overflow"))?;
    let payload = &bytes[MATRIX_HEADER_BYTES..];
    if payload.len() < n * 4 {
        let whole = payload.len() / 4;
        return Err(Error::format(
            origin,
            format!(
                "truncated at byte {}: payload needs {} values, found {whole}",
                MATRIX_HEADER_BYTES + whole * 4,
                n
            ),
        ));
    }
    if payload.len() > n * 4 {
        return Err(Error::format(origin, format!("{} trailing bytes after the payload", payload.len() - n * 4)));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    Ok(Matrix {
        stride: h.stride,
        offset: h.offset,
        data: Tensor::new(vec![h.rows, h.cols], data)?,
    })
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    std::fs::write(path, encode_matrix(m)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, &path.display().to_string())
}

/// Reads only the fixed-size header.
pub fn read_matrix_header(path: &Path) -> Result<MatrixHeader> {
    use std::io::Read;
    let mut buf = Vec::with_capacity(MATRIX_HEADER_BYTES);
    std::fs::File::open(path)
        .and_then(|f| f.take(MATRIX_HEADER_BYTES as u64).read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode_header(&buf, &path.display().to_string())
}
