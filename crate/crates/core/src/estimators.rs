//! Rigid pose estimation from correspondences: weighted Procrustes,
//! RANSAC over minimal samples, and local-to-global registration.

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CorrespondenceSet, Point3, PointCloud, RigidTransform};
use crate::simgen::derive_seed;

/// Relative singular value below which the cross-covariance counts as rank one.
pub const DEGENERACY_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    Lgr,
    Ransac,
    WeightedSvd,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [
        EstimatorKind::Lgr,
        EstimatorKind::Ransac,
        EstimatorKind::WeightedSvd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Lgr => "lgr",
            EstimatorKind::Ransac => "ransac",
            EstimatorKind::WeightedSvd => "weighted_svd",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lgr" => Ok(EstimatorKind::Lgr),
            "ransac" => Ok(EstimatorKind::Ransac),
            "weighted_svd" => Ok(EstimatorKind::WeightedSvd),
            other => Err(Error::invalid(format!(
                "unknown estimator {other:?} (expected lgr, ransac or weighted_svd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub ransac_iterations: usize,
    pub ransac_threshold: f64,
    pub sample_size: usize,
    pub seed: u64,
    pub lgr_iterations: usize,
    pub lgr_threshold: f64,
    /// Inlier radius of the first refinement step; later steps shrink it
    /// geometrically down to `lgr_threshold`.
    pub lgr_coarse_threshold: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::Lgr,
            ransac_iterations: 50_000,
            ransac_threshold: 0.5,
            sample_size: 3,
            seed: 0,
            lgr_iterations: 5,
            lgr_threshold: 0.5,
            lgr_coarse_threshold: 2.0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ransac_iterations == 0 {
            return Err(Error::invalid("ransac iterations must be at least 1"));
        }
        if self.sample_size < 3 {
            return Err(Error::invalid("ransac sample size must be at least 3"));
        }
        if !(self.ransac_threshold > 0.0 && self.lgr_threshold > 0.0) {
            return Err(Error::invalid("inlier thresholds must be positive"));
        }
        if !(self.lgr_coarse_threshold >= self.lgr_threshold
            && self.lgr_coarse_threshold.is_finite())
        {
            return Err(Error::invalid(
                "lgr coarse threshold must be finite and at least the lgr threshold",
            ));
        }
        Ok(())
    }

    /// Table label, e.g. `RANSAC-50K`.
    pub fn label(&self) -> String {
        match self.kind {
            EstimatorKind::Lgr => "LGR".into(),
            EstimatorKind::WeightedSvd => "Weighted SVD".into(),
            EstimatorKind::Ransac if self.ransac_iterations % 1000 == 0 => {
                format!("RANSAC-{}K", self.ransac_iterations / 1000)
            }
            EstimatorKind::Ransac => format!("RANSAC-{}", self.ransac_iterations),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub transform: RigidTransform,
    /// Correspondences with residual below the estimator's threshold.
    pub inliers: usize,
    /// Mean residual of those inliers, meters.
    pub mean_residual: f64,
}

/// Source/target point pairs with weights, resolved from a correspondence set.
#[derive(Debug, Clone, Default)]
pub struct PairList {
    pub src: Vec<Point3>,
    pub tgt: Vec<Point3>,
    pub weights: Vec<f64>,
}

impl PairList {
    pub fn new(c: &CorrespondenceSet, src: &PointCloud, tgt: &PointCloud) -> Result<Self> {
        c.validate(src.len(), tgt.len())?;
        Ok(Self {
            src: c.iter().map(|p| src.points[p.source]).collect(),
            tgt: c.iter().map(|p| tgt.points[p.target]).collect(),
            weights: c.iter().map(|p| p.confidence).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> PairList {
        PairList {
            src: idx.iter().map(|&i| self.src[i]).collect(),
            tgt: idx.iter().map(|&i| self.tgt[i]).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
        }
    }

    fn residual(&self, t: &RigidTransform, i: usize) -> f64 {
        (t.apply_point(&self.src[i]) - self.tgt[i]).norm()
    }

    fn inliers(&self, t: &RigidTransform, threshold: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.residual(t, i) < threshold)
            .collect()
    }

    fn inlier_count(&self, t: &RigidTransform, threshold: f64) -> usize {
        let t2 = threshold * threshold;
        (0..self.len())
            .filter(|&i| (t.apply_point(&self.src[i]) - self.tgt[i]).norm_squared() < t2)
            .count()
    }

    /// Mean of `min(residual, threshold)` over all pairs.
    pub fn truncated_residual(&self, t: &RigidTransform, threshold: f64) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (0..self.len())
            .map(|i| self.residual(t, i).min(threshold))
            .sum::<f64>()
            / self.len() as f64
    }

    fn estimate(&self, transform: RigidTransform, threshold: f64) -> PoseEstimate {
        let inl = self.inliers(&transform, threshold);
        let mean_residual = if inl.is_empty() {
            0.0
        } else {
            inl.iter()
                .map(|&i| self.residual(&transform, i))
                .sum::<f64>()
                / inl.len() as f64
        };
        PoseEstimate {
            transform,
            inliers: inl.len(),
            mean_residual,
        }
    }
}

/// Closed-form weighted Procrustes on resolved pairs.
pub fn fit_pairs(pairs: &PairList) -> Result<RigidTransform> {
    let n = pairs.len();
    if n < 3 {
        return Err(Error::Underdetermined(n));
    }
    if pairs.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let total: f64 = pairs.weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate);
    }
    let mut cs = Vector3::zeros();
    let mut ct = Vector3::zeros();
    for i in 0..n {
        cs += pairs.src[i].coords * pairs.weights[i];
        ct += pairs.tgt[i].coords * pairs.weights[i];
    }
    cs /= total;
    ct /= total;
    let mut h = Matrix3::zeros();
    for i in 0..n {
        h += (pairs.src[i].coords - cs) * (pairs.tgt[i].coords - ct).transpose() * pairs.weights[i];
    }
    let svd = h.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] < DEGENERACY_RATIO * sv[0] {
        return Err(Error::Degenerate);
    }
    let u = svd.u.ok_or(Error::Degenerate)?;
    let v = svd.v_t.ok_or(Error::Degenerate)?.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    Ok(RigidTransform {
        rotation: r,
        translation: ct - r * cs,
    })
}

/// Weighted Procrustes using correspondence confidences as weights.
pub fn weighted_svd(
    c: &CorrespondenceSet,
    src: &PointCloud,
    tgt: &PointCloud,
) -> Result<PoseEstimate> {
    let pairs = PairList::new(c, src, tgt)?;
    let t = fit_pairs(&pairs)?;
    let used: Vec<usize> = (0..pairs.len())
        .filter(|&i| pairs.weights[i] > 0.0)
        .collect();
    let wsum: f64 = used.iter().map(|&i| pairs.weights[i]).sum();
    let mean = used
        .iter()
        .map(|&i| pairs.weights[i] * pairs.residual(&t, i))
        .sum::<f64>()
        / wsum;
    Ok(PoseEstimate {
        transform: t,
        inliers: used.len(),
        mean_residual: mean,
    })
}

fn unit_weights(p: &mut PairList) {
    if p.weights.iter().sum::<f64>() <= 0.0 {
        p.weights.iter_mut().for_each(|w| *w = 1.0);
    }
}

/// Refinement radii: geometric from the coarse radius to the final one.
fn refinement_radii(cfg: &EstimatorConfig) -> Vec<f64> {
    let n = cfg.lgr_iterations;
    let (hi, lo) = (cfg.lgr_coarse_threshold, cfg.lgr_threshold);
    (0..n)
        .map(|k| {
            if n == 1 {
                lo
            } else {
                hi * (lo / hi).powf(k as f64 / (n - 1) as f64)
            }
        })
        .collect()
}

/// RANSAC over minimal samples, refined on the best consensus set.
///
/// Iteration `i` draws its sample from a generator seeded by `(seed, i)`, so
/// results do not depend on how iterations are scheduled across threads.
pub fn ransac(
    c: &CorrespondenceSet,
    src: &PointCloud,
    tgt: &PointCloud,
    cfg: &EstimatorConfig,
) -> Result<PoseEstimate> {
    cfg.validate()?;
    let pairs = PairList::new(c, src, tgt)?;
    ransac_pairs(&pairs, cfg)
}

pub fn ransac_pairs(pairs: &PairList, cfg: &EstimatorConfig) -> Result<PoseEstimate> {
    let n = pairs.len();
    if n < cfg.sample_size {
        return Err(Error::Underdetermined(n));
    }
    let thr = cfg.ransac_threshold;
    let best = (0..cfg.ransac_iterations)
        .into_par_iter()
        .filter_map(|it| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, it as u64));
            let idx = sample(&mut rng, n, cfg.sample_size).into_vec();
            let mut s = pairs.subset(&idx);
            s.weights.iter_mut().for_each(|w| *w = 1.0);
            let t = fit_pairs(&s).ok()?;
            Some((pairs.inlier_count(&t, thr), it, t))
        })
        .reduce_with(|a, b| {
            if (b.0, std::cmp::Reverse(b.1)) > (a.0, std::cmp::Reverse(a.1)) {
                b
            } else {
                a
            }
        });
    let Some((count, _, t)) = best else {
        return Err(Error::NoConsensus);
    };
    if count < 3 {
        return Err(Error::NoConsensus);
    }
    let mut inl = pairs.subset(&pairs.inliers(&t, thr));
    unit_weights(&mut inl);
    let refined = fit_pairs(&inl).unwrap_or(t);
    // keep the refit only if it does not lose consensus
    let t = if pairs.inlier_count(&refined, thr) >= count {
        refined
    } else {
        t
    };
    Ok(pairs.estimate(t, thr))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LgrResult {
    pub estimate: PoseEstimate,
    /// Index of the group whose local fit was selected.
    pub selected_group: usize,
    /// Truncated mean residual over all correspondences, before refinement
    /// and after each accepted refinement step. Non-increasing.
    pub residual_trace: Vec<f64>,
}

/// Local-to-global registration.
///
/// Each group with at least three pairs yields a local hypothesis; the one
/// with the most inliers over `all` wins (ties: lower truncated residual,
/// then lower group index). The winner is refined on its global inliers; a
/// step that would raise the truncated residual ends refinement.
pub fn lgr(
    groups: &[CorrespondenceSet],
    all: &CorrespondenceSet,
    src: &PointCloud,
    tgt: &PointCloud,
    cfg: &EstimatorConfig,
) -> Result<LgrResult> {
    cfg.validate()?;
    let global = PairList::new(all, src, tgt)?;
    let thr = cfg.lgr_threshold;
    let candidates: Vec<(usize, RigidTransform)> = groups
        .par_iter()
        .enumerate()
        .filter(|(_, g)| g.len() >= 3)
        .filter_map(|(k, g)| {
            let mut p = PairList::new(g, src, tgt).ok()?;
            unit_weights(&mut p);
            fit_pairs(&p).ok().map(|t| (k, t))
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::invalid(
            "no correspondence group with at least 3 usable pairs",
        ));
    }
    let scored: Vec<(usize, f64, usize, RigidTransform)> = candidates
        .par_iter()
        .map(|&(k, t)| {
            (
                global.inlier_count(&t, thr),
                global.truncated_residual(&t, thr),
                k,
                t,
            )
        })
        .collect();
    let &(_, _, selected, t0) = scored
        .iter()
        .min_by(|a, b| b.0.cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)))
        .expect("non-empty");

    let schedule = refinement_radii(cfg);
    let mut current = t0;
    let mut trace = vec![global.truncated_residual(&t0, schedule.first().copied().unwrap_or(thr))];
    for &radius in &schedule {
        let inl = global.inliers(&current, radius);
        if inl.len() < 3 {
            continue;
        }
        let mut p = global.subset(&inl);
        unit_weights(&mut p);
        let Ok(next) = fit_pairs(&p) else { continue };
        let before = global.truncated_residual(&current, radius);
        let after = global.truncated_residual(&next, radius);
        // radii shrink, so accepted values form a non-increasing trace
        if after <= before {
            current = next;
            trace.push(after);
        } else {
            trace.push(before);
        }
    }
    Ok(LgrResult {
        estimate: global.estimate(current, thr),
        selected_group: selected,
        residual_trace: trace,
    })
}
