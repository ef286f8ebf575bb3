//! End-to-end registration: encoding, overlap masking, attention and
//! superpoint matching, grouped dense matching, pose estimation.
//!
//! Work is split so that a benchmark can encode a pair once, match it once
//! per ablation setting and run every estimator on the same matches.

mod benchmark;

use std::path::PathBuf;
use std::time::Instant;

pub use benchmark::{
    format_sweep, format_table, run_benchmark, scaled_thresholds, summarize, threshold_sweep,
    BenchmarkPair, BenchmarkReport, EstimatorSummary, PairOutcome, PairRecord, SweepRow,
    Thresholds, TSV_COLUMNS,
};

use crate::densematch::{aggregate, match_groups, GroupedProblem, MatchConfig};
use crate::encode::{
    encode_image, encode_point_pyramid, positional_encoding, EncoderConfig, FeaturePyramid,
    ImageFeatureGrid,
};
use crate::error::{Error, Result, StageExt};
use crate::estimators::{lgr, ransac, weighted_svd, EstimatorConfig, EstimatorKind, PoseEstimate};
use crate::geometry::{CorrespondenceSet, PointCloud, RigidTransform};
use crate::metrics::{inlier_ratio, RegistrationMetrics, DEFAULT_INLIER_TAU_M};
use crate::nn::Matrix;
use crate::omp::{gt_overlap_mask, predict_mask, OmpConfig, OmpWeights, OverlapMask};
use crate::simgen::ViewImage;
use crate::spatial::{groups_from_assignment, point_to_node_group};
use crate::vgam::{
    dual_normalize, enhance, select_overlap_subset, similarity_matrix, topk_correspondences,
    AttentionInputs, AttentionMode, MaskedSuperpoints, VgamConfig, VgamWeights,
};

/// Where superpoint overlap masks come from when masking is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskSource {
    #[default]
    Predicted,
    /// Radius test under the ground-truth pose; needs `gt`.
    GroundTruth,
}

impl MaskSource {
    pub fn name(&self) -> &'static str {
        match self {
            MaskSource::Predicted => "predicted",
            MaskSource::GroundTruth => "ground_truth",
        }
    }
}

impl std::str::FromStr for MaskSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(MaskSource::Predicted),
            "ground_truth" => Ok(MaskSource::GroundTruth),
            other => Err(Error::invalid(format!(
                "unknown mask source {other:?} (expected predicted or ground_truth)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub encoder: EncoderConfig,
    pub omp: OmpConfig,
    pub omp_weights: Option<PathBuf>,
    pub vgam: VgamConfig,
    pub vgam_weights: Option<PathBuf>,
    pub matching: MatchConfig,
    pub estimator: EstimatorConfig,
    pub use_omp: bool,
    pub mask_source: MaskSource,
    pub attention_mode: AttentionMode,
    /// Dense features are multiplied by this before group similarity.
    pub dense_feature_gain: f64,
    /// Pairs processed concurrently; `None` uses the global pool size.
    pub workers: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            omp: OmpConfig::default(),
            omp_weights: None,
            vgam: VgamConfig::default(),
            vgam_weights: None,
            matching: MatchConfig::default(),
            estimator: EstimatorConfig::default(),
            use_omp: true,
            mask_source: MaskSource::Predicted,
            attention_mode: AttentionMode::VgamFull,
            dense_feature_gain: 1.0,
            workers: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.omp.validate()?;
        self.vgam.validate()?;
        self.matching.validate()?;
        self.estimator.validate()?;
        if !(self.dense_feature_gain > 0.0 && self.dense_feature_gain.is_finite()) {
            return Err(Error::invalid("dense feature gain must be positive"));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("worker count must be at least 1"));
        }
        Ok(())
    }
}

/// Weights shared read-only by every pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub omp: OmpWeights,
    pub vgam: VgamWeights,
}

impl Models {
    /// Deterministic default weights sized for the encoder.
    pub fn defaults(cfg: &PipelineConfig) -> Self {
        let e = &cfg.encoder;
        Self {
            omp: OmpWeights::default_for(e.image_dim, e.super_dim, e.super_dim, cfg.omp.heads),
            vgam: VgamWeights::default_for(&cfg.vgam, e.super_dim, e.image_dim),
        }
    }

    /// Loads weight files named in the config, defaults otherwise.
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let mut m = Self::defaults(cfg);
        if let Some(p) = &cfg.omp_weights {
            m.omp = OmpWeights::load(p)?;
        }
        if let Some(p) = &cfg.vgam_weights {
            m.vgam = VgamWeights::load(p)?;
        }
        m.check(cfg)?;
        Ok(m)
    }

    fn check(&self, cfg: &PipelineConfig) -> Result<()> {
        let e = &cfg.encoder;
        if self.vgam.dim() != e.super_dim || self.vgam.image_dim() != e.image_dim {
            return Err(Error::dims(format!(
                "attention weights expect dims {}/{}, encoder produces {}/{}",
                self.vgam.dim(),
                self.vgam.image_dim(),
                e.super_dim,
                e.image_dim
            )));
        }
        if self.omp.image_proj.input_dim() != e.image_dim
            || self.omp.super_proj.input_dim() != e.super_dim
        {
            return Err(Error::dims(
                "mask predictor weights do not match encoder dims",
            ));
        }
        Ok(())
    }
}

/// Wall-clock time per stage, milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub encode: f64,
    pub mask: f64,
    pub attention: f64,
    pub dense: f64,
    pub estimate: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.encode + self.mask + self.attention + self.dense + self.estimate
    }
}

fn millis(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Encoder outputs for one pair; independent of masking and attention settings.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub src: FeaturePyramid,
    pub tgt: FeaturePyramid,
    pub image: Option<ImageFeatureGrid>,
    pub pixel_encoding: Option<Matrix>,
    /// Dense point index lists per superpoint.
    pub src_groups: Vec<Vec<usize>>,
    pub tgt_groups: Vec<Vec<usize>>,
    pub encode_ms: f64,
}

impl PreparedPair {
    pub fn dense_src(&self) -> &PointCloud {
        &self.src.dense().points
    }

    pub fn dense_tgt(&self) -> &PointCloud {
        &self.tgt.dense().points
    }
}

fn groups(pyr: &FeaturePyramid) -> Result<Vec<Vec<usize>>> {
    let supers = &pyr.superpoints().points;
    let assignment = point_to_node_group(&pyr.dense().points, supers)?;
    Ok(groups_from_assignment(&assignment, supers.len()))
}

pub fn prepare(
    src: &PointCloud,
    tgt: &PointCloud,
    image: Option<&ViewImage>,
    cfg: &EncoderConfig,
) -> Result<PreparedPair> {
    let t = Instant::now();
    let (s, g) = rayon::join(
        || encode_point_pyramid(src, cfg).stage("encode source"),
        || encode_point_pyramid(tgt, cfg).stage("encode target"),
    );
    let (src, tgt) = (s?, g?);
    let (image, pixel_encoding) = match image {
        Some(img) => {
            let grid = encode_image(img, cfg).stage("encode image")?;
            let pe =
                positional_encoding(&grid.pixel_coords(), cfg.super_dim, cfg.pixel_wavelengths)?;
            (Some(grid), Some(pe))
        }
        None => (None, None),
    };
    let src_groups = groups(&src).stage("group source")?;
    let tgt_groups = groups(&tgt).stage("group target")?;
    Ok(PreparedPair {
        src,
        tgt,
        image,
        pixel_encoding,
        src_groups,
        tgt_groups,
        encode_ms: millis(t),
    })
}

/// How the superpoint subsets were chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskOrigin {
    Disabled,
    Predicted,
    GroundTruth,
    /// Masking was requested but no image was supplied.
    FallbackNoImage,
    /// A mask kept nothing, so all superpoints were used.
    FallbackEmpty,
}

impl MaskOrigin {
    pub fn name(&self) -> &'static str {
        match self {
            MaskOrigin::Disabled => "disabled",
            MaskOrigin::Predicted => "predicted",
            MaskOrigin::GroundTruth => "ground_truth",
            MaskOrigin::FallbackNoImage => "fallback_no_image",
            MaskOrigin::FallbackEmpty => "fallback_empty",
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(
            self,
            MaskOrigin::FallbackNoImage | MaskOrigin::FallbackEmpty
        )
    }

    pub const ALL: [MaskOrigin; 5] = [
        MaskOrigin::Disabled,
        MaskOrigin::Predicted,
        MaskOrigin::GroundTruth,
        MaskOrigin::FallbackNoImage,
        MaskOrigin::FallbackEmpty,
    ];

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskSummary {
    pub origin: MaskOrigin,
    pub src_kept: usize,
    pub src_total: usize,
    pub tgt_kept: usize,
    pub tgt_total: usize,
}

/// Superpoint and dense correspondences for one pair.
#[derive(Debug, Clone)]
pub struct PairMatches {
    /// Superpoint correspondences (C′).
    pub superpoint: CorrespondenceSet,
    /// Dense matches per superpoint correspondence, aligned with `superpoint`.
    pub groups: Vec<CorrespondenceSet>,
    /// Aggregated dense correspondences (C*).
    pub dense: CorrespondenceSet,
    pub mask: MaskSummary,
    pub mask_ms: f64,
    pub attention_ms: f64,
    pub dense_ms: f64,
}

fn masks(
    prep: &PreparedPair,
    cfg: &PipelineConfig,
    models: &Models,
    gt: Option<&RigidTransform>,
) -> Result<(MaskOrigin, Option<(OverlapMask, OverlapMask)>)> {
    if !cfg.use_omp {
        return Ok((MaskOrigin::Disabled, None));
    }
    let (ss, ts) = (prep.src.superpoints(), prep.tgt.superpoints());
    match cfg.mask_source {
        MaskSource::GroundTruth => {
            let gt =
                gt.ok_or_else(|| Error::invalid("ground-truth masks need a ground-truth pose"))?;
            let m = gt_overlap_mask(&ss.points, &ts.points, gt, cfg.omp.gt_radius)?;
            Ok((MaskOrigin::GroundTruth, Some(m)))
        }
        MaskSource::Predicted => {
            let Some(img) = &prep.image else {
                log::info!("overlap masking requested without an image; using all superpoints");
                return Ok((MaskOrigin::FallbackNoImage, None));
            };
            let (_, ms) = predict_mask(&img.features, &ss.features, &models.omp, &cfg.omp)?;
            let (_, mt) = predict_mask(&img.features, &ts.features, &models.omp, &cfg.omp)?;
            Ok((MaskOrigin::Predicted, Some((ms, mt))))
        }
    }
}

fn subsets(
    prep: &PreparedPair,
    masks: Option<&(OverlapMask, OverlapMask)>,
) -> Result<Option<(MaskedSuperpoints, MaskedSuperpoints)>> {
    let (ss, ts) = (prep.src.superpoints(), prep.tgt.superpoints());
    let Some((ms, mt)) = masks else {
        return Ok(Some((
            MaskedSuperpoints::all(&ss.points, &ss.features),
            MaskedSuperpoints::all(&ts.points, &ts.features),
        )));
    };
    let a = select_overlap_subset(&ss.points, &ss.features, ms);
    let b = select_overlap_subset(&ts.points, &ts.features, mt);
    match (a, b) {
        (Ok(a), Ok(b)) => Ok(Some((a, b))),
        (Err(Error::EmptyOverlap), _) | (_, Err(Error::EmptyOverlap)) => Ok(None),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

fn attend(
    sub: &MaskedSuperpoints,
    prep: &PreparedPair,
    cfg: &PipelineConfig,
    models: &Models,
) -> Result<Matrix> {
    let pe = positional_encoding(
        &sub.points
            .iter()
            .map(|p| [p.x, p.y, p.z])
            .collect::<Vec<_>>(),
        cfg.encoder.super_dim,
        cfg.encoder.point_wavelengths,
    )?;
    let image = match (&prep.image, &prep.pixel_encoding) {
        (Some(g), Some(pe)) => Some((&g.features, pe)),
        _ => None,
    };
    enhance(
        AttentionInputs {
            features: &sub.features,
            positions: &sub.points.points,
            pos_encoding: &pe,
            image,
        },
        &models.vgam,
        cfg.attention_mode,
        &cfg.vgam,
    )
}

/// Masking, attention, superpoint top-K and grouped dense matching.
pub fn match_pair(
    prep: &PreparedPair,
    cfg: &PipelineConfig,
    models: &Models,
    gt: Option<&RigidTransform>,
) -> Result<PairMatches> {
    let t = Instant::now();
    let (mut origin, m) = masks(prep, cfg, models, gt).stage("overlap mask")?;
    let (ss, ts) = (prep.src.superpoints(), prep.tgt.superpoints());
    let (src_sub, tgt_sub) = match subsets(prep, m.as_ref())? {
        Some(s) => s,
        None => {
            log::info!("overlap mask kept no superpoints; using all superpoints");
            origin = MaskOrigin::FallbackEmpty;
            subsets(prep, None)?.expect("unmasked subsets are never empty")
        }
    };
    let mask = MaskSummary {
        origin,
        src_kept: src_sub.indices.len(),
        src_total: ss.points.len(),
        tgt_kept: tgt_sub.indices.len(),
        tgt_total: ts.points.len(),
    };
    let mask_ms = millis(t);

    let t = Instant::now();
    let fs = attend(&src_sub, prep, cfg, models).stage("attention source")?;
    let ft = attend(&tgt_sub, prep, cfg, models).stage("attention target")?;
    let z = dual_normalize(&similarity_matrix(&fs, &ft)?)?;
    let k = cfg.vgam.k_for(z.nrows(), z.ncols());
    let superpoint = topk_correspondences(&z, k, &src_sub.indices, &tgt_sub.indices)
        .stage("superpoint matching")?;
    let attention_ms = millis(t);

    let t = Instant::now();
    let problems: Vec<GroupedProblem<'_>> = superpoint
        .iter()
        .map(|c| GroupedProblem {
            src_group: &prep.src_groups[c.source],
            tgt_group: &prep.tgt_groups[c.target],
        })
        .collect();
    let gain = cfg.dense_feature_gain;
    let groups = match_groups(
        &problems,
        &(&prep.src.dense().features * gain),
        &(&prep.tgt.dense().features * gain),
        &cfg.matching,
    )
    .stage("dense matching")?;
    let dense = aggregate(&groups);
    Ok(PairMatches {
        superpoint,
        groups,
        dense,
        mask,
        mask_ms,
        attention_ms,
        dense_ms: millis(t),
    })
}

/// Runs one estimator on precomputed matches.
pub fn estimate_pose(
    prep: &PreparedPair,
    matches: &PairMatches,
    cfg: &EstimatorConfig,
) -> Result<PoseEstimate> {
    let (src, tgt) = (prep.dense_src(), prep.dense_tgt());
    let r = match cfg.kind {
        EstimatorKind::WeightedSvd => weighted_svd(&matches.dense, src, tgt),
        EstimatorKind::Ransac => ransac(&matches.dense, src, tgt, cfg),
        EstimatorKind::Lgr => {
            lgr(&matches.groups, &matches.dense, src, tgt, cfg).map(|r| r.estimate)
        }
    };
    r.stage("pose estimation")
}

/// Inlier ratio of the dense correspondences under `gt`.
pub fn dense_inlier_ratio(
    prep: &PreparedPair,
    matches: &PairMatches,
    gt: &RigidTransform,
) -> Result<f64> {
    Ok(inlier_ratio(
        &matches.dense,
        prep.dense_src(),
        prep.dense_tgt(),
        gt,
        DEFAULT_INLIER_TAU_M,
    )?
    .value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub estimate: PoseEstimate,
    pub superpoint_matches: usize,
    pub dense_matches: usize,
    pub mask: MaskSummary,
    /// Present only when a ground-truth pose was supplied.
    pub metrics: Option<RegistrationMetrics>,
    pub timings: StageTimings,
}

/// Registers `src` onto `tgt` with the configured estimator.
pub fn register_pair(
    src: &PointCloud,
    tgt: &PointCloud,
    image: Option<&ViewImage>,
    cfg: &PipelineConfig,
    models: &Models,
    gt: Option<&RigidTransform>,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let prep = prepare(src, tgt, image, &cfg.encoder)?;
    let matches = match_pair(&prep, cfg, models, gt)?;
    let t = Instant::now();
    let estimate = estimate_pose(&prep, &matches, &cfg.estimator)?;
    let estimate_ms = millis(t);
    let metrics = match gt {
        Some(gt) => Some(RegistrationMetrics::evaluate(
            &estimate.transform,
            gt,
            dense_inlier_ratio(&prep, &matches, gt)?,
        )),
        None => None,
    };
    Ok(RegistrationResult {
        estimate,
        superpoint_matches: matches.superpoint.len(),
        dense_matches: matches.dense.len(),
        mask: matches.mask,
        metrics,
        timings: StageTimings {
            encode: prep.encode_ms,
            mask: matches.mask_ms,
            attention: matches.attention_ms,
            dense: matches.dense_ms,
            estimate: estimate_ms,
        },
    })
}
