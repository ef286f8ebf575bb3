//! Sensor noise, outliers and missing returns.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

#[derive(Debug, Clone, PartialEq)]
pub struct DegradationSpec {
    /// Standard deviation of isotropic Gaussian noise, meters.
    pub sigma: f64,
    pub outlier_fraction: f64,
    /// Box `(min, max)` for uniform outliers; `None` uses the cloud's bounding box.
    pub outlier_volume: Option<(Point3, Point3)>,
    pub dropout_fraction: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn none() -> Self {
        Self {
            sigma: 0.0,
            outlier_fraction: 0.0,
            outlier_volume: None,
            dropout_fraction: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(
                "noise sigma must be finite and non-negative",
            ));
        }
        for (name, f) in [
            ("outlier", self.outlier_fraction),
            ("dropout", self.dropout_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid(format!(
                    "{name} fraction {f} outside [0, 1]"
                )));
            }
        }
        if let Some((lo, hi)) = &self.outlier_volume {
            if (0..3).any(|i| !(hi[i] >= lo[i])) {
                return Err(Error::invalid("outlier volume is inverted"));
            }
        }
        Ok(())
    }
}

fn bounding_box(c: &PointCloud) -> (Point3, Point3) {
    let mut lo = Point3::from([f64::INFINITY; 3]);
    let mut hi = Point3::from([f64::NEG_INFINITY; 3]);
    for p in c.iter() {
        for i in 0..3 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    (lo, hi)
}

/// Applies noise, then outlier replacement, then dropout.
///
/// Outliers replace `round(outlier_fraction * n)` points in place; dropout
/// removes `round(dropout_fraction * n)` points, keeping the order of the rest.
pub fn degrade(cloud: &PointCloud, spec: &DegradationSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = cloud.clone();
    let n = out.len();
    if n == 0 {
        return Ok(out);
    }

    if spec.sigma > 0.0 {
        let normal = Normal::new(0.0, spec.sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for p in out.points.iter_mut() {
            for i in 0..3 {
                p[i] += normal.sample(&mut rng);
            }
        }
    }

    let n_out = (spec.outlier_fraction * n as f64).round() as usize;
    if n_out > 0 {
        let (lo, hi) = spec.outlier_volume.unwrap_or_else(|| bounding_box(cloud));
        let mut idx = sample(&mut rng, n, n_out).into_vec();
        idx.sort_unstable();
        for i in idx {
            let mut q = lo;
            for k in 0..3 {
                if hi[k] > lo[k] {
                    q[k] = rng.random_range(lo[k]..hi[k]);
                }
            }
            out.points[i] = q;
        }
    }

    let n_drop = (spec.dropout_fraction * n as f64).round() as usize;
    if n_drop > 0 {
        let mut keep = vec![true; n];
        for i in sample(&mut rng, n, n_drop) {
            keep[i] = false;
        }
        let kept: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
        out = out.select(&kept);
    }
    Ok(out)
}
