//! Points, clouds, rigid transforms and correspondence sets.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// An ordered point set. Indices are identities: nothing in the crate
/// reorders a cloud in place.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            intensity: None,
        }
    }

    pub fn with_intensity(points: Vec<Point3>, intensity: Vec<f64>) -> Result<Self> {
        if points.len() != intensity.len() {
            return Err(Error::dims(format!(
                "{} points but {} intensity values",
                points.len(),
                intensity.len()
            )));
        }
        Ok(Self {
            points,
            intensity: Some(intensity),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Point3> {
        self.points.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.coords.iter().all(|c| c.is_finite()))
    }

    /// Sub-cloud at `indices`, in the order given.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let intensity = self
            .intensity
            .as_ref()
            .map(|v| indices.iter().map(|&i| v[i]).collect());
        PointCloud { points, intensity }
    }
}

impl From<Vec<Point3>> for PointCloud {
    fn from(points: Vec<Point3>) -> Self {
        PointCloud::new(points)
    }
}

/// Rotation plus translation, applied as `R * p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform after checking that `rotation` lies in SO(3).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("translation".into()));
        }
        if !t.is_valid(ROTATION_TOLERANCE) {
            return Err(Error::invalid("rotation is not orthonormal with det +1"));
        }
        Ok(t)
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if axis.norm() == 0.0 {
            Matrix3::identity()
        } else {
            Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
        };
        Self {
            rotation,
            translation,
        }
    }

    /// Rotation about +z by `yaw` radians followed by a translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self::from_axis_angle(Vector3::z(), yaw, translation)
    }

    pub fn translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        if !r.iter().all(|v| v.is_finite()) {
            return false;
        }
        let ortho = (r.transpose() * r - Matrix3::identity()).amax();
        ortho < tol && (r.determinant() - 1.0).abs() < tol
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn apply_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud.points.iter().map(|p| self.apply_point(p)).collect(),
            intensity: cloud.intensity.clone(),
        }
    }

    /// Re-projects the rotation onto SO(3) with an SVD.
    pub fn orthonormalized(&self) -> Self {
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let d = (u * vt).determinant().signum();
        let rotation = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt;
        Self {
            rotation,
            translation: self.translation,
        }
    }

    /// Row-major rotation followed by translation.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[0],
            t[1],
            t[2],
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        Self::new(rotation, Vector3::new(v[9], v[10], v[11]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Granularity {
    Superpoint,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    pub confidence: f64,
}

impl Correspondence {
    pub fn new(source: usize, target: usize) -> Self {
        Self {
            source,
            target,
            confidence: 1.0,
        }
    }

    pub fn weighted(source: usize, target: usize, confidence: f64) -> Self {
        Self {
            source,
            target,
            confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
    pub granularity: Granularity,
}

impl CorrespondenceSet {
    pub fn new(granularity: Granularity) -> Self {
        Self {
            pairs: Vec::new(),
            granularity,
        }
    }

    pub fn from_pairs(pairs: Vec<Correspondence>, granularity: Granularity) -> Self {
        Self { pairs, granularity }
    }

    /// Unit-confidence dense pairs.
    pub fn from_indices(indices: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self {
            pairs: indices
                .into_iter()
                .map(|(s, t)| Correspondence::new(s, t))
                .collect(),
            granularity: Granularity::Dense,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Correspondence> {
        self.pairs.iter()
    }

    /// Checks index bounds and confidence sanity against the referenced clouds.
    pub fn validate(&self, n_source: usize, n_target: usize) -> Result<()> {
        for (k, c) in self.pairs.iter().enumerate() {
            if c.source >= n_source || c.target >= n_target {
                return Err(Error::invalid(format!(
                    "correspondence {k} ({}, {}) out of bounds for clouds of size {n_source}/{n_target}",
                    c.source, c.target
                )));
            }
            if !c.confidence.is_finite() || c.confidence < 0.0 {
                return Err(Error::invalid(format!(
                    "correspondence {k} has confidence {}",
                    c.confidence
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;
    use std::f64::consts::FRAC_PI_4;

    use approx::assert_abs_diff_eq;

    use super::*;

    #[test]
    fn quarter_turn_about_z() {
        let t = RigidTransform::from_yaw(FRAC_PI_2, Vector3::zeros());
        let p = t.apply_point(&Point3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(p, Point3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn identity_is_noop() {
        let c = PointCloud::new(vec![
            Point3::new(1.0, -2.0, 3.5),
            Point3::new(0.1, 0.2, 0.3),
        ]);
        assert_eq!(RigidTransform::identity().apply(&c), c);
    }

    #[test]
    fn inverse_round_trip() {
        let t = RigidTransform::from_axis_angle(
            Vector3::new(0.3, -1.0, 0.5),
            1.1,
            Vector3::new(4.0, -2.0, 0.7),
        );
        let c = PointCloud::new(vec![
            Point3::new(1.0, 2.0, 3.0),
            Point3::new(-5.0, 0.0, 9.0),
        ]);
        let back = t.inverse().apply(&t.apply(&c));
        for (a, b) in back.iter().zip(c.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn compose_rules() {
        let b = RigidTransform::from_yaw(0.4, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(RigidTransform::identity().compose(&b), b);

        let a = RigidTransform::from_axis_angle(Vector3::new(1.0, 1.0, 0.0), 0.9, Vector3::x());
        let id = a.compose(&a.inverse());
        assert_abs_diff_eq!(id.rotation, Matrix3::identity(), epsilon = 1e-9);
        assert_abs_diff_eq!(id.translation, Vector3::zeros(), epsilon = 1e-9);

        let q = RigidTransform::from_yaw(FRAC_PI_4, Vector3::zeros());
        let half = q.compose(&q);
        let full = RigidTransform::from_yaw(FRAC_PI_2, Vector3::zeros());
        assert_abs_diff_eq!(half.rotation, full.rotation, epsilon = 1e-12);
    }

    #[test]
    fn rejects_reflection() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn correspondence_bounds() {
        let c = CorrespondenceSet::from_indices([(0, 1), (2, 0)]);
        assert!(c.validate(3, 2).is_ok());
        assert!(c.validate(2, 2).is_err());
    }
}
