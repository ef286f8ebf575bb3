//! Dense building blocks shared by the attention modules.
//!
//! Matrices hold one item per row. Everything is plain `f64` forward
//! evaluation; no autodiff.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Affine map `x W + b` applied row-wise. `weight` is `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: DVector<f64>,
}

impl Linear {
    pub fn new(weight: Matrix, bias: DVector<f64>) -> Result<Self> {
        if weight.ncols() != bias.len() {
            return Err(Error::dims(format!(
                "linear weight has {} outputs but bias has {}",
                weight.ncols(),
                bias.len()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: DVector::zeros(output),
        }
    }

    /// `scale` on the leading diagonal of a possibly rectangular matrix.
    pub fn identity_block(input: usize, output: usize, scale: f64) -> Self {
        let mut weight = Matrix::zeros(input, output);
        for i in 0..input.min(output) {
            weight[(i, i)] = scale;
        }
        Self {
            weight,
            bias: DVector::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.weight.nrows() {
            return Err(Error::dims(format!(
                "input has {} columns, layer expects {}",
                x.ncols(),
                self.weight.nrows()
            )));
        }
        let mut y = x * &self.weight;
        for mut row in y.row_iter_mut() {
            row += self.bias.transpose();
        }
        Ok(y)
    }

    pub fn is_finite(&self) -> bool {
        self.weight
            .iter()
            .chain(self.bias.iter())
            .all(|v| v.is_finite())
    }
}

/// Per-row layer normalisation with affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: DVector::from_element(dim, 1.0),
            beta: DVector::zeros(dim),
            eps: 1e-5,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.dim() {
            return Err(Error::dims(format!(
                "layer norm over {} features, input has {}",
                self.dim(),
                x.ncols()
            )));
        }
        let n = x.ncols() as f64;
        let mut y = x.clone();
        for mut row in y.row_iter_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + self.eps).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * self.gamma[j] + self.beta[j];
            }
        }
        Ok(y)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row /= sum;
    }
    out
}

pub fn softmax_cols(m: &Matrix) -> Matrix {
    softmax_rows(&m.transpose()).transpose()
}

/// Rows scaled to unit L2 norm; zero rows stay zero.
pub fn l2_normalize_rows(m: &mut Matrix) {
    for mut row in m.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
}

/// Scaled dot-product attention `softmax(q kᵀ * scale + bias) v`.
///
/// Returns the output and the attention weights.
pub fn attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    scale: f64,
    bias: Option<&Matrix>,
) -> Result<(Matrix, Matrix)> {
    if q.ncols() != k.ncols() {
        return Err(Error::dims(format!(
            "query dim {} != key dim {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() != v.nrows() {
        return Err(Error::dims(format!(
            "{} keys but {} values",
            k.nrows(),
            v.nrows()
        )));
    }
    let mut logits = q * k.transpose() * scale;
    if let Some(b) = bias {
        if b.shape() != logits.shape() {
            return Err(Error::dims("attention bias shape"));
        }
        logits += b;
    }
    let weights = softmax_rows(&logits);
    Ok((&weights * v, weights))
}

pub(crate) fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}
