//! Registration error metrics: RRE, RTE, inlier ratio and registration recall.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CorrespondenceSet, PointCloud, RigidTransform};

pub const DEFAULT_RRE_THRESHOLD_DEG: f64 = 2.0;
pub const DEFAULT_RTE_THRESHOLD_M: f64 = 0.5;
pub const DEFAULT_INLIER_TAU_M: f64 = 1.0;

/// Geodesic rotation error in degrees.
pub fn rre(r_est: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> f64 {
    // atan2 keeps precision near zero where acos of the trace does not
    let d = r_gt.transpose() * r_est;
    let cos = (d.trace() - 1.0) / 2.0;
    let sin = 0.5
        * ((d[(2, 1)] - d[(1, 2)]).powi(2)
            + (d[(0, 2)] - d[(2, 0)]).powi(2)
            + (d[(1, 0)] - d[(0, 1)]).powi(2))
        .sqrt();
    sin.atan2(cos).to_degrees()
}

/// Euclidean translation error in meters.
pub fn rte(t_est: &Vector3<f64>, t_gt: &Vector3<f64>) -> f64 {
    (t_est - t_gt).norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InlierRatio {
    pub value: f64,
    /// Set when the correspondence set was empty and the ratio defaulted to 0.
    pub empty: bool,
}

/// Fraction of correspondences whose ground-truth residual is below `tau`.
pub fn inlier_ratio(
    corr: &CorrespondenceSet,
    src: &PointCloud,
    tgt: &PointCloud,
    gt: &RigidTransform,
    tau: f64,
) -> Result<InlierRatio> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!(
            "inlier threshold must be positive, got {tau}"
        )));
    }
    corr.validate(src.len(), tgt.len())?;
    if corr.is_empty() {
        log::warn!("inlier ratio of an empty correspondence set defined as 0");
        return Ok(InlierRatio {
            value: 0.0,
            empty: true,
        });
    }
    let hits = corr
        .iter()
        .filter(|c| (gt.apply_point(&src.points[c.source]) - tgt.points[c.target]).norm() < tau)
        .count();
    Ok(InlierRatio {
        value: hits as f64 / corr.len() as f64,
        empty: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationMetrics {
    pub rre: f64,
    pub rte: f64,
    pub success: bool,
    pub ir: f64,
}

impl RegistrationMetrics {
    /// Evaluates an estimate with the default success thresholds.
    pub fn evaluate(estimate: &RigidTransform, gt: &RigidTransform, ir: f64) -> Self {
        let rre = rre(&estimate.rotation, &gt.rotation);
        let rte = rte(&estimate.translation, &gt.translation);
        Self {
            rre,
            rte,
            success: is_registered(rre, rte, DEFAULT_RRE_THRESHOLD_DEG, DEFAULT_RTE_THRESHOLD_M),
            ir,
        }
    }
}

/// Strict success test: `rre < rre_thresh && rte < rte_thresh`.
pub fn is_registered(rre: f64, rte: f64, rre_thresh: f64, rte_thresh: f64) -> bool {
    rre < rre_thresh && rte < rte_thresh
}

/// Fraction of results registered under the given thresholds.
pub fn registration_recall(
    results: &[RegistrationMetrics],
    rre_thresh: f64,
    rte_thresh: f64,
) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::NoResults);
    }
    if !(rre_thresh > 0.0 && rte_thresh > 0.0) {
        return Err(Error::invalid("recall thresholds must be positive"));
    }
    let ok = results
        .iter()
        .filter(|m| is_registered(m.rre, m.rte, rre_thresh, rte_thresh))
        .count();
    Ok(ok as f64 / results.len() as f64)
}
