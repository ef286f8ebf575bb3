//! Filter-bank image features: box means and gradients at several scales,
//! mixed to the feature dimension by a fixed random projection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::EncoderConfig;
use crate::error::Result;
use crate::nn::{l2_normalize_rows, Matrix};
use crate::simgen::ViewImage;

const PROJECTION_SEED: u64 = 0x1a6e_f00d;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatureGrid {
    pub height: usize,
    pub width: usize,
    /// `height * width` rows in row-major pixel order.
    pub features: Matrix,
}

impl ImageFeatureGrid {
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// `(col, row)` per pixel, in the same order as the feature rows.
    pub fn pixel_coords(&self) -> Vec<[f64; 2]> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| [c as f64, r as f64]))
            .collect()
    }
}

/// Clamped-border box mean with half width `s`, via a summed-area table.
fn box_filter(img: &ViewImage, s: usize) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for r in 0..h {
        for c in 0..w {
            sat[(r + 1) * (w + 1) + c + 1] =
                img.get(r, c) + sat[r * (w + 1) + c + 1] + sat[(r + 1) * (w + 1) + c]
                    - sat[r * (w + 1) + c];
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let (r0, r1) = (r.saturating_sub(s), (r + s + 1).min(h));
        for c in 0..w {
            let (c0, c1) = (c.saturating_sub(s), (c + s + 1).min(w));
            let sum = sat[r1 * (w + 1) + c1] - sat[r0 * (w + 1) + c1] - sat[r1 * (w + 1) + c0]
                + sat[r0 * (w + 1) + c0];
            out[r * w + c] = sum / ((r1 - r0) * (c1 - c0)) as f64;
        }
    }
    out
}

/// Per-pixel raw channels `[1, (box_s, gx_s, gy_s) for s in scales]`.
///
/// Gradients are central differences of the box-filtered image with clamped
/// borders; `gx` grows to the right and `gy` grows downward.
pub fn image_raw_channels(img: &ViewImage, scales: &[usize]) -> Matrix {
    let (h, w) = (img.height(), img.width());
    let mut m = Matrix::zeros(h * w, 1 + 3 * scales.len());
    m.column_mut(0).fill(1.0);
    for (k, &s) in scales.iter().enumerate() {
        let b = box_filter(img, s);
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let gx = (b[r * w + (c + 1).min(w - 1)] - b[r * w + c.saturating_sub(1)]) / 2.0;
                let gy = (b[(r + 1).min(h - 1) * w + c] - b[r.saturating_sub(1) * w + c]) / 2.0;
                m[(i, 1 + 3 * k)] = b[i];
                m[(i, 2 + 3 * k)] = gx;
                m[(i, 3 + 3 * k)] = gy;
            }
        }
    }
    m
}

fn projection(rows: usize, cols: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    let scale = 1.0 / (rows as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    })
}

pub fn encode_image(img: &ViewImage, cfg: &EncoderConfig) -> Result<ImageFeatureGrid> {
    cfg.validate()?;
    let raw = image_raw_channels(img, &cfg.image_scales);
    let mut features = &raw * projection(raw.ncols(), cfg.image_dim);
    l2_normalize_rows(&mut features);
    Ok(ImageFeatureGrid {
        height: img.height(),
        width: img.width(),
        features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> ViewImage {
        let data = (0..h)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        ViewImage::new(h, w, data).unwrap()
    }

    #[test]
    fn constant_image_has_no_gradient() {
        let raw = image_raw_channels(&image(10, 12, |_, _| 0.7), &[1, 2, 4]);
        for k in 0..3 {
            assert!(raw.column(2 + 3 * k).iter().all(|v| v.abs() < 1e-12));
            assert!(raw.column(3 + 3 * k).iter().all(|v| v.abs() < 1e-12));
            assert!(raw
                .column(1 + 3 * k)
                .iter()
                .all(|v| (v - 0.7).abs() < 1e-12));
        }
    }

    #[test]
    fn vertical_edge_peaks_on_edge_column() {
        let edge = 7;
        let img = image(12, 16, |_, c| if c >= edge { 1.0 } else { 0.0 });
        let raw = image_raw_channels(&img, &[1]);
        for r in 0..12 {
            let row: Vec<f64> = (0..16).map(|c| raw[(r * 16 + c, 2)]).collect();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            // box of width 3 then central difference: 1/3 at columns edge-1 and edge
            assert!((max - 1.0 / 3.0).abs() < 1e-12);
            assert!((row[edge - 1] - max).abs() < 1e-12 && (row[edge] - max).abs() < 1e-12);
            assert!(row[edge - 3].abs() < 1e-12 && row[edge + 2].abs() < 1e-12);
        }
    }

    #[test]
    fn grid_shape_and_norm() {
        let cfg = EncoderConfig::default();
        for (h, w) in [(8, 8), (9, 23), (32, 64)] {
            let g = encode_image(
                &image(h, w, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0),
                &cfg,
            )
            .unwrap();
            assert_eq!(g.features.shape(), (h * w, cfg.image_dim));
            for row in g.features.row_iter() {
                assert!((row.norm() - 1.0).abs() < 1e-9);
            }
        }
    }
}
