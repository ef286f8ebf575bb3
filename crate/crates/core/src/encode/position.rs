//! Sinusoidal positional encodings for points and pixels.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Encodings of superpoints and of image pixels, one row each.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoding {
    pub points: Matrix,
    pub pixels: Matrix,
}

/// `[sin, cos]` column pairs; pair `j` encodes axis `j % axes` at the
/// `j / axes`-th of geometrically spaced wavelengths in `[min, max]`.
pub fn positional_encoding<const N: usize>(
    coords: &[[f64; N]],
    dim: usize,
    wavelengths: (f64, f64),
) -> Result<Matrix> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::invalid(format!(
            "positional encoding dim must be even, got {dim}"
        )));
    }
    if N == 0 {
        return Err(Error::invalid("coordinates need at least one axis"));
    }
    let (lo, hi) = wavelengths;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::invalid(
            "wavelength range must satisfy 0 < min <= max",
        ));
    }
    let pairs = dim / 2;
    let bands = pairs.div_ceil(N);
    let freq: Vec<f64> = (0..bands)
        .map(|b| {
            let t = if bands > 1 {
                b as f64 / (bands - 1) as f64
            } else {
                0.0
            };
            TAU / (lo * (hi / lo).powf(t))
        })
        .collect();
    let mut m = Matrix::zeros(coords.len(), dim);
    for (i, c) in coords.iter().enumerate() {
        for j in 0..pairs {
            let (s, co) = (c[j % N] * freq[j / N]).sin_cos();
            m[(i, 2 * j)] = s;
            m[(i, 2 * j + 1)] = co;
        }
    }
    Ok(m)
}
