//! Attention-guided superpoint matching.
//!
//! Overlap-region superpoint features are refined by visual cross attention
//! to the image, self attention, and distance-biased geometric self
//! attention. The refined features of both clouds are compared with a
//! Gaussian similarity, dual-normalised, and the top-K entries become the
//! superpoint correspondences.

use std::cmp::Ordering;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::{Correspondence, CorrespondenceSet, Granularity, Point3, PointCloud};
use crate::nn::{attention, softmax_cols, softmax_rows, Linear, Matrix};
use crate::weights::{read_file, write_file, TensorReader, TensorWriter};

pub const VGAM_MAGIC: &[u8; 4] = b"VGAW";

/// Attention stack applied to superpoint features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionMode {
    /// Plain self attention only.
    VanillaSelf,
    /// Geometric self attention only.
    GeoSelf,
    /// Visual cross attention, self attention, then geometric self attention.
    #[default]
    VgamFull,
}

impl AttentionMode {
    pub fn name(&self) -> &'static str {
        match self {
            AttentionMode::VanillaSelf => "vanilla_self",
            AttentionMode::GeoSelf => "geo_self",
            AttentionMode::VgamFull => "vgam_full",
        }
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla_self" => Ok(AttentionMode::VanillaSelf),
            "geo_self" => Ok(AttentionMode::GeoSelf),
            "vgam_full" => Ok(AttentionMode::VgamFull),
            other => Err(Error::invalid(format!(
                "unknown attention mode {other:?} (expected vanilla_self, geo_self or vgam_full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VgamConfig {
    /// How many times the attention stack is applied.
    pub repeats: usize,
    pub k_max: usize,
    /// K is at most this fraction of all candidate pairs.
    pub k_fraction: f64,
    /// Number of cosine/sine bands in the distance embedding.
    pub distance_bands: usize,
    /// Period of the lowest non-constant band, meters.
    pub distance_period: f64,
    /// Width of the default locality bias, meters.
    pub locality_sigma: f64,
    /// Logit added at zero distance by the default locality bias.
    pub locality_strength: f64,
    /// Scale of the default query projections.
    pub query_scale: f64,
    /// Scale of the default cross-attention value projection.
    pub cross_value_scale: f64,
    /// Scale of the default plain self-attention value projection.
    pub self_value_scale: f64,
    /// Scale of the default geometric self-attention value projection.
    pub geo_value_scale: f64,
}

impl Default for VgamConfig {
    fn default() -> Self {
        Self {
            repeats: 1,
            k_max: 256,
            k_fraction: 0.25,
            distance_bands: 32,
            distance_period: 200.0,
            locality_sigma: 3.0,
            locality_strength: 4.0,
            query_scale: 1.0,
            cross_value_scale: 1.0,
            self_value_scale: 0.1,
            geo_value_scale: 1.0,
        }
    }
}

impl VgamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 || self.k_max == 0 {
            return Err(Error::invalid("repeats and k_max must be positive"));
        }
        if !(self.k_fraction > 0.0 && self.k_fraction <= 1.0) {
            return Err(Error::invalid("k_fraction must lie in (0, 1]"));
        }
        if self.distance_bands == 0 || !(self.distance_period > 0.0) {
            return Err(Error::invalid(
                "distance embedding needs bands and a positive period",
            ));
        }
        Ok(())
    }

    /// `min(k_max, ⌊k_fraction · n · m⌋)`, at least 1.
    pub fn k_for(&self, n: usize, m: usize) -> usize {
        let frac = (self.k_fraction * (n * m) as f64).floor() as usize;
        self.k_max.min(frac).max(1)
    }

    fn base_frequency(&self) -> f64 {
        std::f64::consts::TAU / self.distance_period
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttentionWeights {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    /// Superpoint positional projection.
    pub we: Linear,
    /// Pixel positional projection.
    pub wg: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttentionWeights {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoAttentionWeights {
    pub attn: SelfAttentionWeights,
    /// Maps the `[cos(f ω r), sin(f ω r)]` embedding (`2 · bands` wide) to one logit.
    pub distance: Linear,
    /// Base angular frequency `ω`, rad/m.
    pub base_frequency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VgamWeights {
    pub cross: CrossAttentionWeights,
    pub self_attn: SelfAttentionWeights,
    pub geo: GeoAttentionWeights,
}

impl SelfAttentionWeights {
    fn scaled(dim: usize, q: f64, v: f64) -> Self {
        Self {
            wq: Linear::identity_block(dim, dim, q),
            wk: Linear::identity_block(dim, dim, 1.0),
            wv: Linear::identity_block(dim, dim, v),
        }
    }
}

/// Cosine weights approximating a Gaussian `strength · exp(−r² / 2σ²)`.
fn locality_bias_weights(cfg: &VgamConfig) -> Linear {
    let bands = cfg.distance_bands;
    let w0 = cfg.base_frequency();
    let s = cfg.locality_sigma;
    let raw: Vec<f64> = (0..bands)
        .map(|f| {
            let w = f as f64 * w0;
            // the zero band counts once, the others twice (symmetric spectrum)
            let mult = if f == 0 { 1.0 } else { 2.0 };
            mult * (-w * w * s * s / 2.0).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let mut weight = Matrix::zeros(2 * bands, 1);
    for (f, r) in raw.iter().enumerate() {
        weight[(2 * f, 0)] = cfg.locality_strength * r / total;
    }
    Linear {
        weight,
        bias: DVector::zeros(1),
    }
}

impl VgamWeights {
    /// Scaled identity projections, zero positional projections and a
    /// Gaussian locality bias.
    pub fn default_for(cfg: &VgamConfig, super_dim: usize, image_dim: usize) -> Self {
        let d = super_dim;
        Self {
            cross: CrossAttentionWeights {
                wq: Linear::identity_block(d, d, cfg.query_scale),
                wk: Linear::identity_block(image_dim, d, 1.0),
                wv: Linear::identity_block(image_dim, d, cfg.cross_value_scale),
                we: Linear::zeros(d, d),
                wg: Linear::zeros(d, d),
            },
            self_attn: SelfAttentionWeights::scaled(d, cfg.query_scale, cfg.self_value_scale),
            geo: GeoAttentionWeights {
                attn: SelfAttentionWeights::scaled(d, cfg.query_scale, cfg.geo_value_scale),
                distance: locality_bias_weights(cfg),
                base_frequency: cfg.base_frequency(),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.self_attn.wq.input_dim()
    }

    pub fn image_dim(&self) -> usize {
        self.cross.wk.input_dim()
    }

    pub fn distance_bands(&self) -> usize {
        self.geo.distance.input_dim() / 2
    }

    fn linears(&self) -> [&Linear; 12] {
        [
            &self.cross.wq,
            &self.cross.wk,
            &self.cross.wv,
            &self.cross.we,
            &self.cross.wg,
            &self.self_attn.wq,
            &self.self_attn.wk,
            &self.self_attn.wv,
            &self.geo.attn.wq,
            &self.geo.attn.wk,
            &self.geo.attn.wv,
            &self.geo.distance,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let di = self.image_dim();
        let c = &self.cross;
        let square = |l: &Linear| l.input_dim() == d && l.output_dim() == d;
        let ok = square(&c.wq)
            && c.wk.output_dim() == d
            && c.wv.input_dim() == di
            && c.wv.output_dim() == d
            && square(&c.we)
            && square(&c.wg)
            && [&self.self_attn, &self.geo.attn]
                .iter()
                .all(|a| square(&a.wq) && square(&a.wk) && square(&a.wv))
            && self.geo.distance.input_dim() % 2 == 0
            && self.geo.distance.output_dim() == 1;
        if !ok {
            return Err(Error::dims("inconsistent matching attention weight shapes"));
        }
        if !self.linears().iter().all(|l| l.is_finite()) || !self.geo.base_frequency.is_finite() {
            return Err(Error::NonFinite("matching attention weights".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = [self.dim(), self.image_dim(), self.distance_bands()];
        let mut w = TensorWriter::new(VGAM_MAGIC, &dims);
        for l in self.linears() {
            w.linear(l);
        }
        w.vector(&DVector::from_element(1, self.geo.base_frequency));
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = TensorReader::new(bytes, VGAM_MAGIC, path)?;
        let &[d, di, bands] = r.dims.as_slice() else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: 8,
                message: format!("expected 3 dims, found {}", r.dims.len()),
            });
        };
        let cross = CrossAttentionWeights {
            wq: r.linear(d, d)?,
            wk: r.linear(di, d)?,
            wv: r.linear(di, d)?,
            we: r.linear(d, d)?,
            wg: r.linear(d, d)?,
        };
        let mut sa = || -> Result<SelfAttentionWeights> {
            Ok(SelfAttentionWeights {
                wq: r.linear(d, d)?,
                wk: r.linear(d, d)?,
                wv: r.linear(d, d)?,
            })
        };
        let self_attn = sa()?;
        let geo_attn = sa()?;
        let distance = r.linear(2 * bands, 1)?;
        let base_frequency = r.vector(1)?[0];
        r.finish()?;
        let w = Self {
            cross,
            self_attn,
            geo: GeoAttentionWeights {
                attn: geo_attn,
                distance,
                base_frequency,
            },
        };
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }
}

/// Superpoints kept by an overlap mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSuperpoints {
    /// Original superpoint index of each kept row.
    pub indices: Vec<usize>,
    pub points: PointCloud,
    pub features: Matrix,
}

pub fn select_overlap_subset(
    points: &PointCloud,
    features: &Matrix,
    mask: &[bool],
) -> Result<MaskedSuperpoints> {
    if mask.len() != points.len() || features.nrows() != points.len() {
        return Err(Error::dims(format!(
            "mask of {} for {} superpoints with {} feature rows",
            mask.len(),
            points.len(),
            features.nrows()
        )));
    }
    let indices: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if indices.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    Ok(MaskedSuperpoints {
        points: points.select(&indices),
        features: features.select_rows(&indices),
        indices,
    })
}

impl MaskedSuperpoints {
    /// Every superpoint, unmasked.
    pub fn all(points: &PointCloud, features: &Matrix) -> Self {
        Self {
            indices: (0..points.len()).collect(),
            points: points.clone(),
            features: features.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub features: Matrix,
    /// Row-stochastic attention scores.
    pub scores: Matrix,
}

/// `softmax((Q + E)(K + G)ᵀ / √d)(V + G) + F`.
pub fn visual_cross_attention(
    f: &Matrix,
    f_img: &Matrix,
    pos_points: &Matrix,
    pos_pixels: &Matrix,
    w: &CrossAttentionWeights,
) -> Result<AttentionOutput> {
    let q = w.wq.forward(f)? + w.we.forward(pos_points)?;
    let g = w.wg.forward(pos_pixels)?;
    let k = w.wk.forward(f_img)? + &g;
    let v = w.wv.forward(f_img)? + &g;
    let (out, scores) = attention(&q, &k, &v, 1.0 / (q.ncols() as f64).sqrt(), None)?;
    residual(out, f, scores)
}

fn residual(out: Matrix, f: &Matrix, scores: Matrix) -> Result<AttentionOutput> {
    if out.shape() != f.shape() {
        return Err(Error::dims(
            "attention output does not match residual shape",
        ));
    }
    Ok(AttentionOutput {
        features: out + f,
        scores,
    })
}

/// `softmax(Q Kᵀ / √d) V + F`.
pub fn self_attention(f: &Matrix, w: &SelfAttentionWeights) -> Result<AttentionOutput> {
    let q = w.wq.forward(f)?;
    let k = w.wk.forward(f)?;
    let v = w.wv.forward(f)?;
    let (out, scores) = attention(&q, &k, &v, 1.0 / (q.ncols() as f64).sqrt(), None)?;
    residual(out, f, scores)
}

/// Logit bias `b(r_ij)` from the sinusoidal distance embedding.
pub fn distance_bias(positions: &[Point3], w: &GeoAttentionWeights) -> Matrix {
    let n = positions.len();
    let bands = w.distance.input_dim() / 2;
    let coef = &w.distance.weight;
    let b0 = w.distance.bias[0];
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let r = (positions[i] - positions[j]).norm();
            let theta = w.base_frequency * r;
            let (s1, c1) = theta.sin_cos();
            // Chebyshev recurrences for cos(fθ), sin(fθ)
            let (mut c_prev, mut c_cur) = (c1, 1.0);
            let (mut s_prev, mut s_cur) = (-s1, 0.0);
            let mut acc = b0;
            for f in 0..bands {
                acc += coef[(2 * f, 0)] * c_cur + coef[(2 * f + 1, 0)] * s_cur;
                let c_next = 2.0 * c1 * c_cur - c_prev;
                let s_next = 2.0 * c1 * s_cur - s_prev;
                c_prev = c_cur;
                c_cur = c_next;
                s_prev = s_cur;
                s_cur = s_next;
            }
            m[(i, j)] = acc;
            m[(j, i)] = acc;
        }
    }
    m
}

/// `softmax(Q Kᵀ / √d + b(‖p_i − p_j‖)) V + F`.
pub fn geometric_self_attention(
    f: &Matrix,
    positions: &[Point3],
    w: &GeoAttentionWeights,
) -> Result<AttentionOutput> {
    if positions.len() != f.nrows() {
        return Err(Error::dims(format!(
            "{} positions for {} feature rows",
            positions.len(),
            f.nrows()
        )));
    }
    let q = w.attn.wq.forward(f)?;
    let k = w.attn.wk.forward(f)?;
    let v = w.attn.wv.forward(f)?;
    let bias = distance_bias(positions, w);
    let (out, scores) = attention(&q, &k, &v, 1.0 / (q.ncols() as f64).sqrt(), Some(&bias))?;
    residual(out, f, scores)
}

/// Inputs for the attention stack of one cloud.
#[derive(Debug, Clone, Copy)]
pub struct AttentionInputs<'a> {
    pub features: &'a Matrix,
    pub positions: &'a [Point3],
    pub pos_encoding: &'a Matrix,
    /// Flattened image features and pixel encodings, when an image exists.
    pub image: Option<(&'a Matrix, &'a Matrix)>,
}

/// Applies the attention stack selected by `mode`, `cfg.repeats` times.
///
/// Without an image the cross-attention stage is skipped.
pub fn enhance(
    inputs: AttentionInputs<'_>,
    w: &VgamWeights,
    mode: AttentionMode,
    cfg: &VgamConfig,
) -> Result<Matrix> {
    let mut f = inputs.features.clone();
    for _ in 0..cfg.repeats {
        f = match mode {
            AttentionMode::VanillaSelf => self_attention(&f, &w.self_attn)?.features,
            AttentionMode::GeoSelf => {
                geometric_self_attention(&f, inputs.positions, &w.geo)?.features
            }
            AttentionMode::VgamFull => {
                if let Some((img, pix)) = inputs.image {
                    f = visual_cross_attention(&f, img, inputs.pos_encoding, pix, &w.cross)?
                        .features;
                }
                let f = self_attention(&f, &w.self_attn)?.features;
                geometric_self_attention(&f, inputs.positions, &w.geo)?.features
            }
        };
    }
    Ok(f)
}

/// `Z′_ij = exp(−‖a_i − b_j‖²)`.
pub fn similarity_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::dims(format!(
            "feature dims {} and {} differ",
            a.ncols(),
            b.ncols()
        )));
    }
    let na: Vec<f64> = a.row_iter().map(|r| r.norm_squared()).collect();
    let nb: Vec<f64> = b.row_iter().map(|r| r.norm_squared()).collect();
    let dot = a * b.transpose();
    Ok(Matrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        (-(na[i] + nb[j] - 2.0 * dot[(i, j)]).max(0.0)).exp()
    }))
}

/// Elementwise product of the row-wise and column-wise softmax.
pub fn dual_normalize(z: &Matrix) -> Result<Matrix> {
    if z.is_empty() {
        return Err(Error::invalid(
            "cannot normalise an empty similarity matrix",
        ));
    }
    Ok(softmax_rows(z).component_mul(&softmax_cols(z)))
}

/// Orders entries by descending value, then ascending `(row, col)`.
pub(crate) fn rank_entries(m: &Matrix, k: usize) -> Vec<(usize, usize, f64)> {
    let mut entries: Vec<(usize, usize, f64)> = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, m[(i, j)]))
        .collect();
    let cmp = |a: &(usize, usize, f64), b: &(usize, usize, f64)| -> Ordering {
        b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1))
    };
    if k < entries.len() {
        entries.select_nth_unstable_by(k, cmp);
        entries.truncate(k);
    }
    entries.sort_by(cmp);
    entries
}

/// The `k` largest entries as superpoint correspondences in original indices.
pub fn topk_correspondences(
    z: &Matrix,
    k: usize,
    src_indices: &[usize],
    tgt_indices: &[usize],
) -> Result<CorrespondenceSet> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if src_indices.len() != z.nrows() || tgt_indices.len() != z.ncols() {
        return Err(Error::dims("index maps do not match the matrix shape"));
    }
    let pairs = rank_entries(z, k)
        .into_iter()
        .map(|(i, j, v)| Correspondence::weighted(src_indices[i], tgt_indices[j], v))
        .collect();
    Ok(CorrespondenceSet::from_pairs(
        pairs,
        Granularity::Superpoint,
    ))
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::RigidTransform;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn subset_selection() {
        let pts = PointCloud::new((0..3).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect());
        let f = Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64);
        let s = select_overlap_subset(&pts, &f, &[true, false, true]).unwrap();
        assert_eq!(s.indices, vec![0, 2]);
        assert_eq!(s.features.row(1), f.row(2));
        assert!(matches!(
            select_overlap_subset(&pts, &f, &[false; 3]),
            Err(Error::EmptyOverlap)
        ));
        assert_eq!(
            select_overlap_subset(&pts, &f, &[true; 3]).unwrap(),
            MaskedSuperpoints::all(&pts, &f)
        );
    }

    #[test]
    fn zero_values_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = rand_mat(&mut rng, 4, 8);
        let img = rand_mat(&mut rng, 6, 8);
        let cross = CrossAttentionWeights {
            wq: Linear::identity_block(8, 8, 1.0),
            wk: Linear::identity_block(8, 8, 1.0),
            wv: Linear::zeros(8, 8),
            we: Linear::zeros(8, 8),
            wg: Linear::zeros(8, 8),
        };
        let out =
            visual_cross_attention(&f, &img, &Matrix::zeros(4, 8), &Matrix::zeros(6, 8), &cross)
                .unwrap();
        assert_eq!(out.features, f);
        let sa = SelfAttentionWeights {
            wq: Linear::identity_block(8, 8, 1.0),
            wk: Linear::identity_block(8, 8, 1.0),
            wv: Linear::zeros(8, 8),
        };
        assert_eq!(self_attention(&f, &sa).unwrap().features, f);
    }

    #[test]
    fn geo_rigid_invariance_and_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = VgamConfig::default();
        let w = VgamWeights::default_for(&cfg, 8, 8);
        let f = rand_mat(&mut rng, 6, 8);
        let pos: Vec<Point3> = (0..6)
            .map(|_| {
                Point3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let base = geometric_self_attention(&f, &pos, &w.geo).unwrap().features;
        let t = RigidTransform::from_axis_angle(
            Vector3::new(0.3, -0.2, 0.9),
            1.1,
            Vector3::new(4.0, -7.0, 2.0),
        );
        let moved: Vec<Point3> = pos.iter().map(|p| t.apply_point(p)).collect();
        let other = geometric_self_attention(&f, &moved, &w.geo)
            .unwrap()
            .features;
        assert!((base - other).abs().max() < 1e-9);

        let mut flat = w.geo.clone();
        flat.distance = Linear::zeros(2 * cfg.distance_bands, 1);
        let plain = self_attention(&f, &flat.attn).unwrap().features;
        assert!(
            (geometric_self_attention(&f, &pos, &flat).unwrap().features - plain)
                .abs()
                .max()
                < 1e-12
        );
    }

    #[test]
    fn locality_bias_shape() {
        let cfg = VgamConfig::default();
        let w = VgamWeights::default_for(&cfg, 8, 8);
        let pos = [
            Point3::origin(),
            Point3::new(3.0, 0.0, 0.0),
            Point3::new(30.0, 0.0, 0.0),
        ];
        let b = distance_bias(&pos, &w.geo);
        assert!((b[(0, 0)] - cfg.locality_strength).abs() < 1e-9);
        let g = cfg.locality_strength * (-0.5f64).exp();
        assert!(
            (b[(0, 1)] - g).abs() < 0.05 * cfg.locality_strength,
            "{}",
            b[(0, 1)]
        );
        assert!(b[(0, 2)].abs() < 0.05 * cfg.locality_strength);
        // explicit evaluation of the cosine series
        let r: f64 = 3.0;
        let direct: f64 = (0..cfg.distance_bands)
            .map(|f| {
                w.geo.distance.weight[(2 * f, 0)] * (f as f64 * w.geo.base_frequency * r).cos()
            })
            .sum();
        assert!((b[(0, 1)] - direct).abs() < 1e-12);
    }

    #[test]
    fn similarity_and_dual_norm() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let z = similarity_matrix(&a, &a).unwrap();
        assert_eq!(z[(0, 0)], 1.0);
        assert!((z[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);

        let c = dual_normalize(&Matrix::from_element(3, 4, 0.7)).unwrap();
        assert!(c.iter().all(|v| (v - 1.0 / 12.0).abs() < 1e-15));
        assert_eq!(
            dual_normalize(&Matrix::from_element(1, 1, 0.3)).unwrap()[(0, 0)],
            1.0
        );
        let d = dual_normalize(&Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0])).unwrap();
        assert_eq!(d[(0, 0)], d[(1, 1)]);
        assert!(d[(0, 0)] > d[(0, 1)]);
    }

    #[test]
    fn topk_ties_and_overflow() {
        let z = Matrix::from_row_slice(2, 2, &[0.5, 0.9, 0.9, 0.1]);
        let c = topk_correspondences(&z, 2, &[10, 11], &[20, 21]).unwrap();
        let got: Vec<(usize, usize)> = c.iter().map(|p| (p.source, p.target)).collect();
        assert_eq!(got, vec![(10, 21), (11, 20)]);
        assert_eq!(
            topk_correspondences(&z, 10, &[0, 1], &[0, 1])
                .unwrap()
                .len(),
            4
        );
    }

    #[test]
    fn k_rule() {
        let cfg = VgamConfig::default();
        assert_eq!(cfg.k_for(100, 100), 256);
        assert_eq!(cfg.k_for(10, 8), 20);
        assert_eq!(cfg.k_for(1, 1), 1);
    }

    #[test]
    fn weight_file_round_trip() {
        let w = VgamWeights::default_for(&VgamConfig::default(), 16, 12);
        let bytes = w.to_bytes();
        let back = VgamWeights::from_bytes(&bytes, Path::new("v.bin")).unwrap();
        assert_eq!(back.to_bytes(), bytes);
    }
}
