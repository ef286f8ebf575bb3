//! Overlap mask prediction: superpoint features attend to image features,
//! a residual feed-forward block and an MLP head give per-superpoint overlap
//! probabilities, and a strict threshold turns them into a binary mask.
//! Also the ground-truth mask used for supervision and oracle ablations.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};
use crate::nn::{attention, gelu, sigmoid, LayerNorm, Linear, Matrix};
use crate::spatial::KdTree;
use crate::weights::{read_file, write_file, TensorReader, TensorWriter};

pub type OverlapProbabilities = Vec<f64>;
pub type OverlapMask = Vec<bool>;

pub const OMP_MAGIC: &[u8; 4] = b"OMPW";

#[derive(Debug, Clone, PartialEq)]
pub struct OmpConfig {
    /// Confidence threshold; a superpoint is kept iff `p > threshold`.
    pub threshold: f64,
    pub heads: usize,
    /// Radius for ground-truth correspondence, meters.
    pub gt_radius: f64,
    /// Use one set of weights for both clouds.
    pub shared_weights: bool,
}

impl Default for OmpConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            heads: 4,
            gt_radius: 0.5,
            shared_weights: true,
        }
    }
}

impl OmpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(format!(
                "mask threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        if self.heads == 0 {
            return Err(Error::invalid("head count must be positive"));
        }
        if !(self.gt_radius > 0.0) {
            return Err(Error::invalid("ground-truth radius must be positive"));
        }
        Ok(())
    }
}

/// Multi-head attention; `wq` etc. map `d → d`, heads split columns evenly.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl MultiHeadAttention {
    pub fn identity(dim: usize, heads: usize) -> Self {
        Self {
            heads,
            wq: Linear::identity_block(dim, dim, 1.0),
            wk: Linear::identity_block(dim, dim, 1.0),
            wv: Linear::identity_block(dim, dim, 1.0),
            wo: Linear::identity_block(dim, dim, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.output_dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpWeights {
    pub image_proj: Linear,
    pub super_proj: Linear,
    pub attn: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub mlp_hidden: Linear,
    pub mlp_out: Linear,
}

impl OmpWeights {
    /// Identity projections, identity feed-forward and a zero head, so every
    /// probability is exactly 0.5.
    pub fn default_for(image_dim: usize, super_dim: usize, unified: usize, heads: usize) -> Self {
        Self {
            image_proj: Linear::identity_block(image_dim, unified, 1.0),
            super_proj: Linear::identity_block(super_dim, unified, 1.0),
            attn: MultiHeadAttention::identity(unified, heads),
            ffn_norm: LayerNorm::new(unified),
            ffn_in: Linear::identity_block(unified, 2 * unified, 1.0),
            ffn_out: Linear::identity_block(2 * unified, unified, 1.0),
            mlp_hidden: Linear::identity_block(unified, unified, 1.0),
            mlp_out: Linear::zeros(unified, 1),
        }
    }

    pub fn unified_dim(&self) -> usize {
        self.super_proj.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.unified_dim();
        let a = &self.attn;
        let shapes_ok = self.image_proj.output_dim() == d
            && [&a.wq, &a.wk, &a.wv, &a.wo]
                .iter()
                .all(|l| l.input_dim() == d && l.output_dim() == d)
            && self.ffn_norm.dim() == d
            && self.ffn_in.input_dim() == d
            && self.ffn_out.input_dim() == self.ffn_in.output_dim()
            && self.ffn_out.output_dim() == d
            && self.mlp_hidden.input_dim() == d
            && self.mlp_out.input_dim() == self.mlp_hidden.output_dim()
            && self.mlp_out.output_dim() == 1;
        if !shapes_ok {
            return Err(Error::dims("inconsistent overlap predictor weight shapes"));
        }
        if a.heads == 0 || d % a.heads != 0 {
            return Err(Error::dims(format!(
                "{} heads do not divide dim {d}",
                a.heads
            )));
        }
        let linears = [
            &self.image_proj,
            &self.super_proj,
            &a.wq,
            &a.wk,
            &a.wv,
            &a.wo,
            &self.ffn_in,
            &self.ffn_out,
            &self.mlp_hidden,
            &self.mlp_out,
        ];
        if !linears.iter().all(|l| l.is_finite()) {
            return Err(Error::NonFinite("overlap predictor weights".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = [
            self.image_proj.input_dim(),
            self.super_proj.input_dim(),
            self.unified_dim(),
            self.attn.heads,
            self.ffn_in.output_dim(),
            self.mlp_hidden.output_dim(),
        ];
        let mut w = TensorWriter::new(OMP_MAGIC, &dims);
        for l in [
            &self.image_proj,
            &self.super_proj,
            &self.attn.wq,
            &self.attn.wk,
            &self.attn.wv,
            &self.attn.wo,
        ] {
            w.linear(l);
        }
        w.layer_norm(&self.ffn_norm);
        for l in [&self.ffn_in, &self.ffn_out, &self.mlp_hidden, &self.mlp_out] {
            w.linear(l);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = TensorReader::new(bytes, OMP_MAGIC, path)?;
        let &[di, ds, du, heads, hidden, mlp] = r.dims.as_slice() else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: 8,
                message: format!("expected 6 dims, found {}", r.dims.len()),
            });
        };
        let image_proj = r.linear(di, du)?;
        let super_proj = r.linear(ds, du)?;
        let attn = MultiHeadAttention {
            heads,
            wq: r.linear(du, du)?,
            wk: r.linear(du, du)?,
            wv: r.linear(du, du)?,
            wo: r.linear(du, du)?,
        };
        let ffn_norm = r.layer_norm(du)?;
        let w = Self {
            image_proj,
            super_proj,
            attn,
            ffn_norm,
            ffn_in: r.linear(du, hidden)?,
            ffn_out: r.linear(hidden, du)?,
            mlp_hidden: r.linear(du, mlp)?,
            mlp_out: r.linear(mlp, 1)?,
        };
        r.finish()?;
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

/// Projects flattened image features and superpoint features to the unified dim.
pub fn align_features(image: &Matrix, supers: &Matrix, w: &OmpWeights) -> Result<(Matrix, Matrix)> {
    Ok((w.image_proj.forward(image)?, w.super_proj.forward(supers)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub features: Matrix,
    /// Attention weights per head, supers × pixels.
    pub weights: Vec<Matrix>,
}

/// Multi-head cross attention with superpoint queries and pixel keys/values.
pub fn fuse(supers: &Matrix, image: &Matrix, w: &OmpWeights) -> Result<Fused> {
    let mha = &w.attn;
    let d = mha.dim();
    if mha.heads == 0 || d % mha.heads != 0 {
        return Err(Error::dims(format!(
            "{} heads do not divide dim {d}",
            mha.heads
        )));
    }
    let q = mha.wq.forward(supers)?;
    let k = mha.wk.forward(image)?;
    let v = mha.wv.forward(image)?;
    let dh = d / mha.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat = Matrix::zeros(supers.nrows(), d);
    let mut weights = Vec::with_capacity(mha.heads);
    for h in 0..mha.heads {
        let cols = h * dh;
        let (out, a) = attention(
            &q.columns(cols, dh).into_owned(),
            &k.columns(cols, dh).into_owned(),
            &v.columns(cols, dh).into_owned(),
            scale,
            None,
        )?;
        concat.columns_mut(cols, dh).copy_from(&out);
        weights.push(a);
    }
    Ok(Fused {
        features: mha.wo.forward(&concat)?,
        weights,
    })
}

fn ffn(x: &Matrix, w: &OmpWeights) -> Result<Matrix> {
    let h = w.ffn_in.forward(&w.ffn_norm.forward(x)?)?.map(gelu);
    w.ffn_out.forward(&h)
}

/// `σ(MLP(F_fuse + FFN(F_fuse + F̂)))`, one probability per superpoint.
pub fn predict_overlap_prob(
    fused: &Matrix,
    supers: &Matrix,
    w: &OmpWeights,
) -> Result<OverlapProbabilities> {
    if fused.shape() != supers.shape() {
        return Err(Error::dims(
            "fused and aligned superpoint features differ in shape",
        ));
    }
    let inner = ffn(&(fused + supers), w)?;
    let hidden = w.mlp_hidden.forward(&(fused + inner))?.map(gelu);
    let logits = w.mlp_out.forward(&hidden)?;
    Ok(logits.column(0).iter().map(|&z| sigmoid(z)).collect())
}

/// `1` iff `p > threshold`.
pub fn threshold_mask(p: &[f64], threshold: f64) -> Result<OverlapMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    Ok(p.iter().map(|&v| v > threshold).collect())
}

/// Full forward pass for one cloud.
pub fn predict_mask(
    image: &Matrix,
    supers: &Matrix,
    w: &OmpWeights,
    cfg: &OmpConfig,
) -> Result<(OverlapProbabilities, OverlapMask)> {
    cfg.validate()?;
    let (fi, fs) = align_features(image, supers, w)?;
    let fused = fuse(&fs, &fi, w)?;
    let p = predict_overlap_prob(&fused.features, &fs, w)?;
    let m = threshold_mask(&p, cfg.threshold)?;
    Ok((p, m))
}

/// Superpoints with a counterpart in the other cloud within `radius` under `gt`.
pub fn gt_overlap_mask(
    src: &PointCloud,
    tgt: &PointCloud,
    gt: &RigidTransform,
    radius: f64,
) -> Result<(OverlapMask, OverlapMask)> {
    if !(radius > 0.0) {
        return Err(Error::invalid("ground-truth radius must be positive"));
    }
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let moved = gt.apply(src);
    let tgt_tree = KdTree::from_cloud(tgt);
    let src_tree = KdTree::from_cloud(&moved);
    let within = |tree: &KdTree<'_>, p| tree.nearest(p).is_some_and(|(_, d)| d <= radius);
    Ok((
        moved.iter().map(|p| within(&tgt_tree, p)).collect(),
        tgt.iter().map(|q| within(&src_tree, q)).collect(),
    ))
}
