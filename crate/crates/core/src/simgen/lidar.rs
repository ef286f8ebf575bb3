//! Sensor models: a spinning multi-beam lidar and a fan-shaped
//! non-repetitive lidar. Both return points in the sensor frame
//! (x forward, y left, z up).

use nalgebra::Vector3;

use super::scene::SceneModel;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};

#[derive(Debug, Clone, PartialEq)]
pub struct RingLidarSpec {
    pub beams: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub azimuth_resolution_deg: f64,
    pub max_range: f64,
    /// Sensor-to-world pose.
    pub pose: RigidTransform,
}

impl Default for RingLidarSpec {
    fn default() -> Self {
        Self {
            beams: 64,
            elevation_min_deg: -24.8,
            elevation_max_deg: 2.0,
            azimuth_resolution_deg: 0.5,
            max_range: 40.0,
            pose: RigidTransform::translation(Vector3::new(0.0, 0.0, 1.8)),
        }
    }
}

impl RingLidarSpec {
    pub fn validate(&self) -> Result<()> {
        if self.beams == 0 {
            return Err(Error::invalid("ring lidar needs at least one beam"));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::invalid("ring lidar max range must be positive"));
        }
        if !(self.azimuth_resolution_deg > 0.0) {
            return Err(Error::invalid("azimuth resolution must be positive"));
        }
        if self.elevation_max_deg < self.elevation_min_deg {
            return Err(Error::invalid("elevation range is inverted"));
        }
        Ok(())
    }

    pub fn elevations_deg(&self) -> Vec<f64> {
        if self.beams == 1 {
            return vec![self.elevation_min_deg];
        }
        let step = (self.elevation_max_deg - self.elevation_min_deg) / (self.beams - 1) as f64;
        (0..self.beams)
            .map(|b| self.elevation_min_deg + step * b as f64)
            .collect()
    }
}

fn direction(azimuth: f64, elevation: f64) -> Vector3<f64> {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    Vector3::new(ce * ca, ce * sa, se)
}

fn scan(
    scene: &SceneModel,
    pose: &RigidTransform,
    max_range: f64,
    rays: impl Iterator<Item = Vector3<f64>>,
) -> PointCloud {
    let origin = pose.apply_point(&crate::geometry::Point3::origin());
    let to_sensor = pose.inverse();
    let points = rays
        .filter_map(|d| {
            let world_dir = pose.apply_vector(&d).normalize();
            scene
                .cast_unchecked(&origin, &world_dir, max_range)
                .map(|hit| to_sensor.apply_point(&hit.point))
        })
        .collect();
    PointCloud::new(points)
}

/// One ray per (beam, azimuth step), beam-major within each azimuth column.
pub fn sample_ring_lidar(scene: &SceneModel, spec: &RingLidarSpec) -> Result<PointCloud> {
    spec.validate()?;
    let elevations: Vec<f64> = spec
        .elevations_deg()
        .into_iter()
        .map(f64::to_radians)
        .collect();
    let steps = (360.0 / spec.azimuth_resolution_deg).round().max(1.0) as usize;
    let rays = (0..steps).flat_map(|a| {
        let az = (a as f64 * spec.azimuth_resolution_deg).to_radians();
        elevations.iter().map(move |&el| direction(az, el))
    });
    Ok(scan(scene, &spec.pose, spec.max_range, rays))
}

/// Fan-shaped lidar tracing a precessing rose curve in angle space.
#[derive(Debug, Clone, PartialEq)]
pub struct FanLidarSpec {
    pub h_fov_deg: f64,
    pub v_fov_deg: f64,
    /// Rose-curve frequency `k` in `r = sin(k θ)`.
    pub petals: u32,
    /// Curve parameter advance per sample, radians.
    pub angular_rate: f64,
    /// Rotation of the whole pattern per sample, radians.
    pub precession_rate: f64,
    pub samples: usize,
    pub max_range: f64,
    pub pose: RigidTransform,
}

impl Default for FanLidarSpec {
    fn default() -> Self {
        Self {
            h_fov_deg: 70.0,
            v_fov_deg: 70.0,
            petals: 7,
            angular_rate: 0.0113,
            precession_rate: 1.7e-4,
            samples: 24_000,
            max_range: 40.0,
            pose: RigidTransform::translation(Vector3::new(0.0, 0.0, 1.8)),
        }
    }
}

impl FanLidarSpec {
    pub fn validate(&self) -> Result<()> {
        let fov_ok = |f: f64| f > 0.0 && f < 180.0;
        if !fov_ok(self.h_fov_deg) || !fov_ok(self.v_fov_deg) {
            return Err(Error::invalid(
                "fan lidar fields of view must lie in (0, 180)",
            ));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::invalid("fan lidar max range must be positive"));
        }
        Ok(())
    }

    /// Sensor-frame `(azimuth, elevation)` in radians for sample `s`.
    pub fn angles(&self, s: usize) -> (f64, f64) {
        let theta = self.angular_rate * s as f64;
        let phase = theta + self.precession_rate * s as f64;
        let r = (self.petals as f64 * theta).sin();
        let (x, y) = (r * phase.cos(), r * phase.sin());
        (
            x * (self.h_fov_deg / 2.0).to_radians(),
            y * (self.v_fov_deg / 2.0).to_radians(),
        )
    }

    pub fn directions(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        (0..self.samples).map(|s| {
            let (az, el) = self.angles(s);
            direction(az, el)
        })
    }
}

pub fn sample_fan_lidar(scene: &SceneModel, spec: &FanLidarSpec) -> Result<PointCloud> {
    spec.validate()?;
    Ok(scan(scene, &spec.pose, spec.max_range, spec.directions()))
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::geometry::Point3;
    use crate::simgen::scene::{random_scene, SceneParams, Surface};
    use crate::spatial::voxel_downsample;

    fn ground_only() -> SceneModel {
        SceneModel::new(vec![Surface::ground(0.0, 1000.0)], 0).unwrap()
    }

    #[test]
    fn single_beam_wall_arc() {
        // wall x = 6, beam at 0 deg elevation
        let scene = SceneModel::new(
            vec![Surface::Plane {
                origin: Point3::new(6.0, 0.0, 0.0),
                normal: Vector3::x_axis(),
                radius: 1000.0,
            }],
            0,
        )
        .unwrap();
        let spec = RingLidarSpec {
            beams: 1,
            elevation_min_deg: 0.0,
            elevation_max_deg: 0.0,
            azimuth_resolution_deg: 1.0,
            max_range: 12.0,
            pose: RigidTransform::identity(),
        };
        let c = sample_ring_lidar(&scene, &spec).unwrap();
        assert!(!c.is_empty());
        for p in c.iter() {
            assert!(p.z.abs() < 1e-9);
            assert!((p.x - 6.0).abs() < 1e-9);
            // range 6 / cos(az) within max range => |az| <= 60 deg
            assert!(p.coords.norm() <= 12.0 + 1e-9);
        }
        // analytic: rays with 6/cos(az) <= 12 -> az in [-60, 60] at 1 deg steps
        assert_eq!(c.len(), 121);
    }

    #[test]
    fn ring_radii_on_ground() {
        let spec = RingLidarSpec {
            beams: 64,
            elevation_min_deg: -30.0,
            elevation_max_deg: -2.0,
            azimuth_resolution_deg: 2.0,
            max_range: 200.0,
            pose: RigidTransform::translation(Vector3::new(0.0, 0.0, 2.0)),
        };
        let c = sample_ring_lidar(&ground_only(), &spec).unwrap();
        let mut radii: Vec<f64> = c.iter().map(|p| (p.x * p.x + p.y * p.y).sqrt()).collect();
        radii.sort_by(f64::total_cmp);
        let mut distinct = 1;
        for w in radii.windows(2) {
            if w[1] - w[0] > 1e-6 {
                distinct += 1;
            }
        }
        assert_eq!(distinct, 64);
        // each ring at h / tan(-elevation)
        for el in spec.elevations_deg() {
            let r = 2.0 / (-el.to_radians()).tan();
            assert!(radii.iter().any(|x| (x - r).abs() < 1e-6));
        }
    }

    #[test]
    fn empty_scene_empty_scan() {
        let scene = SceneModel::default();
        assert!(sample_ring_lidar(&scene, &RingLidarSpec::default())
            .unwrap()
            .is_empty());
        let fan = FanLidarSpec {
            samples: 0,
            ..Default::default()
        };
        assert!(sample_fan_lidar(&ground_only(), &fan).unwrap().is_empty());
    }

    #[test]
    fn fan_stays_in_fov() {
        let spec = FanLidarSpec::default();
        let (h, v) = (
            (spec.h_fov_deg / 2.0).to_radians(),
            (spec.v_fov_deg / 2.0).to_radians(),
        );
        for d in spec.directions() {
            let az = d.y.atan2(d.x);
            let el = d.z.asin();
            assert!(az.abs() <= h + 1e-12 && el.abs() <= v + 1e-12);
        }
    }

    #[test]
    fn fan_concentrated_at_center() {
        let spec = FanLidarSpec::default();
        let inner = (0..spec.samples)
            .filter(|&s| {
                let (az, el) = spec.angles(s);
                (az * az + el * el).sqrt() < (spec.h_fov_deg / 4.0).to_radians()
            })
            .count() as f64;
        // inner disk is a quarter of the FOV area; a rose curve puts more there
        assert!(inner / spec.samples as f64 > 0.3);
    }

    #[test]
    fn hits_lie_on_surfaces() {
        let scene = random_scene(&SceneParams::default(), 3);
        let spec = RingLidarSpec {
            azimuth_resolution_deg: 3.0,
            ..Default::default()
        };
        let c = sample_ring_lidar(&scene, &spec).unwrap();
        assert!(c.len() > 100);
        for p in c.iter() {
            let w = spec.pose.apply_point(p);
            let d = scene
                .surfaces
                .iter()
                .map(|s| s.distance(&w))
                .fold(f64::INFINITY, f64::min);
            assert!(d < 1e-9, "{d}");
        }
    }

    #[test]
    fn density_patterns_differ() {
        let scene = random_scene(&SceneParams::default(), 9);
        let ring = sample_ring_lidar(&scene, &RingLidarSpec::default()).unwrap();
        let fan = sample_fan_lidar(&scene, &FanLidarSpec::default()).unwrap();
        let hist = |c: &PointCloud| {
            let mut counts: HashMap<(i64, i64, i64), usize> = HashMap::new();
            for p in c.iter() {
                *counts
                    .entry((
                        (p.x).floor() as i64,
                        (p.y).floor() as i64,
                        (p.z).floor() as i64,
                    ))
                    .or_default() += 1;
            }
            let mut h = [0.0; 8];
            for n in counts.values() {
                h[((*n as f64).log2() as usize).min(7)] += 1.0;
            }
            let total: f64 = h.iter().sum();
            h.iter().map(|v| v / total).collect::<Vec<_>>()
        };
        let (a, b) = (hist(&ring), hist(&fan));
        let tv: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0;
        assert!(tv > 0.1, "total variation {tv}");
        // voxelisation keeps both usable
        assert!(voxel_downsample(&fan, 0.25).unwrap().len() > 1000);
    }
}
