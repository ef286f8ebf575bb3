//! Little-endian binary container for model weights.
//!
//! Layout: 4-byte magic, `u32` version, `u32` count of dims, that many `u32`
//! dims, then every tensor as row-major `f32` in a fixed declared order.

use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, Matrix};

pub const VERSION: u32 = 1;

#[derive(Debug, Default)]
pub struct TensorWriter {
    buf: Vec<u8>,
}

impl TensorWriter {
    pub fn new(magic: &[u8; 4], dims: &[usize]) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(VERSION);
        w.u32(dims.len() as u32);
        for &d in dims {
            w.u32(d as u32);
        }
        w
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn matrix(&mut self, m: &Matrix) {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                self.buf
                    .extend_from_slice(&(m[(r, c)] as f32).to_le_bytes());
            }
        }
    }

    pub fn vector(&mut self, v: &DVector<f64>) {
        for x in v.iter() {
            self.buf.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }

    pub fn linear(&mut self, l: &Linear) {
        self.matrix(&l.weight);
        self.vector(&l.bias);
    }

    pub fn layer_norm(&mut self, l: &LayerNorm) {
        self.vector(&l.gamma);
        self.vector(&l.beta);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct TensorReader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
    pub dims: Vec<usize>,
}

impl<'a> TensorReader<'a> {
    pub fn new(bytes: &'a [u8], magic: &[u8; 4], path: &'a Path) -> Result<Self> {
        let mut r = Self {
            bytes,
            offset: 0,
            path,
            dims: Vec::new(),
        };
        let found = r.take(4)?;
        if found != magic {
            return Err(r.error_at(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(found),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}")));
        }
        let n = r.u32()? as usize;
        if n > 64 {
            return Err(r.error_at(8, format!("implausible dim count {n}")));
        }
        for _ in 0..n {
            let d = r.u32()? as usize;
            r.dims.push(d);
        }
        Ok(r)
    }

    fn error_at(&self, offset: usize, message: String) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset,
            message,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.offset + n;
        if end > self.bytes.len() {
            return Err(self.error_at(self.offset, "unexpected end of file".into()));
        }
        let s = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f64> {
        let at = self.offset;
        let b = self.take(4)?;
        let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        if !v.is_finite() {
            return Err(self.error_at(at, "non-finite weight".into()));
        }
        Ok(v as f64)
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = self.f32()?;
            }
        }
        Ok(m)
    }

    pub fn vector(&mut self, n: usize) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(n);
        for x in v.iter_mut() {
            *x = self.f32()?;
        }
        Ok(v)
    }

    pub fn linear(&mut self, input: usize, output: usize) -> Result<Linear> {
        let weight = self.matrix(input, output)?;
        let bias = self.vector(output)?;
        Linear::new(weight, bias)
    }

    pub fn layer_norm(&mut self, dim: usize) -> Result<LayerNorm> {
        let mut ln = LayerNorm::new(dim);
        ln.gamma = self.vector(dim)?;
        ln.beta = self.vector(dim)?;
        Ok(ln)
    }

    /// Errors unless every byte was consumed.
    pub fn finish(self) -> Result<()> {
        if self.offset != self.bytes.len() {
            return Err(self.error_at(
                self.offset,
                format!("{} trailing bytes", self.bytes.len() - self.offset),
            ));
        }
        Ok(())
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
