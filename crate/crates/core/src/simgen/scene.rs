//! Parametric scenes and exact ray casting against them.

use nalgebra::{Unit, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Point3;

const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Surface {
    /// Plane through `origin` with unit `normal`, bounded to a disk of `radius`.
    Plane {
        origin: Point3,
        normal: Unit<Vector3<f64>>,
        radius: f64,
    },
    /// Axis-aligned box.
    Box { min: Point3, max: Point3 },
    /// Vertical cylinder with both end caps.
    Cylinder {
        center_x: f64,
        center_y: f64,
        radius: f64,
        z_min: f64,
        z_max: f64,
    },
}

impl Surface {
    pub fn ground(height: f64, radius: f64) -> Self {
        Surface::Plane {
            origin: Point3::new(0.0, 0.0, height),
            normal: Vector3::z_axis(),
            radius,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Surface::Plane { radius, .. } => *radius > 0.0,
            Surface::Box { min, max } => (0..3).all(|i| max[i] > min[i]),
            Surface::Cylinder {
                radius,
                z_min,
                z_max,
                ..
            } => *radius > 0.0 && z_max > z_min,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "surface with non-positive extent: {self:?}"
            )))
        }
    }

    /// Ray parameter of the closest intersection beyond `HIT_EPS`.
    pub fn intersect(&self, o: &Point3, d: &Vector3<f64>) -> Option<f64> {
        match self {
            Surface::Plane {
                origin,
                normal,
                radius,
            } => {
                let denom = normal.dot(d);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = normal.dot(&(origin - o)) / denom;
                if t <= HIT_EPS {
                    return None;
                }
                let p = o + d * t;
                ((p - origin).norm() <= *radius).then_some(t)
            }
            Surface::Box { min, max } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for i in 0..3 {
                    if d[i].abs() < 1e-15 {
                        if o[i] < min[i] || o[i] > max[i] {
                            return None;
                        }
                    } else {
                        let a = (min[i] - o[i]) / d[i];
                        let b = (max[i] - o[i]) / d[i];
                        t0 = t0.max(a.min(b));
                        t1 = t1.min(a.max(b));
                    }
                }
                if t0 > t1 {
                    return None;
                }
                if t0 > HIT_EPS {
                    Some(t0)
                } else if t1 > HIT_EPS {
                    Some(t1)
                } else {
                    None
                }
            }
            Surface::Cylinder {
                center_x,
                center_y,
                radius,
                z_min,
                z_max,
            } => {
                let mut best: Option<f64> = None;
                let mut take = |t: f64| {
                    if t > HIT_EPS && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                };
                // side
                let (ox, oy) = (o.x - center_x, o.y - center_y);
                let a = d.x * d.x + d.y * d.y;
                if a > 1e-15 {
                    let b = 2.0 * (ox * d.x + oy * d.y);
                    let c = ox * ox + oy * oy - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let s = disc.sqrt();
                        for t in [(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)] {
                            let z = o.z + t * d.z;
                            if z >= *z_min && z <= *z_max {
                                take(t);
                            }
                        }
                    }
                }
                // caps
                if d.z.abs() > 1e-15 {
                    for zc in [*z_min, *z_max] {
                        let t = (zc - o.z) / d.z;
                        let (x, y) = (ox + t * d.x, oy + t * d.y);
                        if x * x + y * y <= radius * radius {
                            take(t);
                        }
                    }
                }
                best
            }
        }
    }

    /// Distance from `p` to this surface, used to verify hits.
    pub fn distance(&self, p: &Point3) -> f64 {
        match self {
            Surface::Plane { origin, normal, .. } => normal.dot(&(p - origin)).abs(),
            Surface::Box { min, max } => {
                let inside = (0..3).all(|i| p[i] >= min[i] && p[i] <= max[i]);
                if inside {
                    (0..3)
                        .map(|i| (p[i] - min[i]).min(max[i] - p[i]))
                        .fold(f64::INFINITY, f64::min)
                } else {
                    let q = Vector3::from_fn(|i, _| (min[i] - p[i]).max(0.0).max(p[i] - max[i]));
                    q.norm()
                }
            }
            Surface::Cylinder {
                center_x,
                center_y,
                radius,
                z_min,
                z_max,
            } => {
                let r = ((p.x - center_x).powi(2) + (p.y - center_y).powi(2)).sqrt();
                let side = if p.z >= *z_min && p.z <= *z_max {
                    (r - radius).abs()
                } else {
                    f64::INFINITY
                };
                let cap = if r <= *radius {
                    (p.z - z_min).abs().min((p.z - z_max).abs())
                } else {
                    f64::INFINITY
                };
                side.min(cap)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub point: Point3,
    pub range: f64,
    pub surface: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneModel {
    pub surfaces: Vec<Surface>,
    pub seed: u64,
}

impl SceneModel {
    /// Validates surface extents. An empty surface list is accepted so that
    /// samplers can be exercised on nothing.
    pub fn new(surfaces: Vec<Surface>, seed: u64) -> Result<Self> {
        for s in &surfaces {
            s.validate()?;
        }
        Ok(Self { surfaces, seed })
    }

    /// Nearest intersection within `max_range`.
    pub fn raycast(
        &self,
        origin: &Point3,
        direction: &Vector3<f64>,
        max_range: f64,
    ) -> Result<Option<Hit>> {
        if (direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "ray direction must be unit length, got norm {}",
                direction.norm()
            )));
        }
        Ok(self.cast_unchecked(origin, direction, max_range))
    }

    pub(crate) fn cast_unchecked(
        &self,
        origin: &Point3,
        direction: &Vector3<f64>,
        max_range: f64,
    ) -> Option<Hit> {
        let mut best: Option<(f64, usize)> = None;
        for (i, s) in self.surfaces.iter().enumerate() {
            if let Some(t) = s.intersect(origin, direction) {
                if t <= max_range && best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best.map(|(t, i)| Hit {
            point: origin + direction * t,
            range: t,
            surface: i,
        })
    }

    /// Whether `p` lies inside (or within `margin` of) any box or cylinder.
    pub fn is_occupied(&self, p: &Point3, margin: f64) -> bool {
        self.surfaces.iter().any(|s| match s {
            Surface::Plane { .. } => false,
            Surface::Box { min, max } => {
                (0..3).all(|i| p[i] >= min[i] - margin && p[i] <= max[i] + margin)
            }
            Surface::Cylinder {
                center_x,
                center_y,
                radius,
                z_min,
                z_max,
            } => {
                let r = ((p.x - center_x).powi(2) + (p.y - center_y).powi(2)).sqrt();
                r <= radius + margin && p.z >= z_min - margin && p.z <= z_max + margin
            }
        })
    }
}

/// Knobs for the random street-like scenes of the synthetic suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub half_extent: f64,
    pub ground_radius: f64,
    pub boxes: usize,
    pub box_footprint: (f64, f64),
    pub box_height: (f64, f64),
    pub walls: usize,
    pub wall_length: (f64, f64),
    pub cylinders: usize,
    pub cylinder_radius: (f64, f64),
    pub cylinder_height: (f64, f64),
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            half_extent: 30.0,
            ground_radius: 120.0,
            boxes: 50,
            box_footprint: (1.5, 7.0),
            box_height: (1.0, 6.0),
            walls: 8,
            wall_length: (6.0, 18.0),
            cylinders: 60,
            cylinder_radius: (0.15, 0.8),
            cylinder_height: (2.0, 8.0),
        }
    }
}

/// Random ground plane with boxes, long thin walls and poles.
pub fn random_scene(params: &SceneParams, seed: u64) -> SceneModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = params.half_extent;
    let mut surfaces = vec![Surface::ground(0.0, params.ground_radius)];
    for _ in 0..params.boxes {
        let (cx, cy) = (rng.random_range(-h..h), rng.random_range(-h..h));
        let wx = rng.random_range(params.box_footprint.0..params.box_footprint.1);
        let wy = rng.random_range(params.box_footprint.0..params.box_footprint.1);
        let hz = rng.random_range(params.box_height.0..params.box_height.1);
        surfaces.push(Surface::Box {
            min: Point3::new(cx - wx / 2.0, cy - wy / 2.0, 0.0),
            max: Point3::new(cx + wx / 2.0, cy + wy / 2.0, hz),
        });
    }
    for _ in 0..params.walls {
        let (cx, cy) = (rng.random_range(-h..h), rng.random_range(-h..h));
        let len = rng.random_range(params.wall_length.0..params.wall_length.1);
        let thick = 0.3;
        let hz = rng.random_range(2.0..4.0);
        let (wx, wy) = if rng.random_bool(0.5) {
            (len, thick)
        } else {
            (thick, len)
        };
        surfaces.push(Surface::Box {
            min: Point3::new(cx - wx / 2.0, cy - wy / 2.0, 0.0),
            max: Point3::new(cx + wx / 2.0, cy + wy / 2.0, hz),
        });
    }
    for _ in 0..params.cylinders {
        surfaces.push(Surface::Cylinder {
            center_x: rng.random_range(-h..h),
            center_y: rng.random_range(-h..h),
            radius: rng.random_range(params.cylinder_radius.0..params.cylinder_radius.1),
            z_min: 0.0,
            z_max: rng.random_range(params.cylinder_height.0..params.cylinder_height.1),
        });
    }
    SceneModel { surfaces, seed }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wall_x(x: f64) -> Surface {
        Surface::Plane {
            origin: Point3::new(x, 0.0, 0.0),
            normal: Vector3::x_axis(),
            radius: 100.0,
        }
    }

    #[test]
    fn ray_plane() {
        let scene = SceneModel::new(vec![wall_x(5.0)], 0).unwrap();
        let hit = scene
            .raycast(&Point3::origin(), &Vector3::x(), 100.0)
            .unwrap()
            .unwrap();
        assert!((hit.range - 5.0).abs() < 1e-12);
        assert!((hit.point - Point3::new(5.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(scene
            .raycast(&Point3::origin(), &-Vector3::x(), 100.0)
            .unwrap()
            .is_none());
        assert!(scene
            .raycast(&Point3::origin(), &Vector3::x(), 4.0)
            .unwrap()
            .is_none());
    }

    #[test]
    fn ray_cylinder() {
        let scene = SceneModel::new(
            vec![Surface::Cylinder {
                center_x: 3.0,
                center_y: 0.0,
                radius: 1.0,
                z_min: -5.0,
                z_max: 5.0,
            }],
            0,
        )
        .unwrap();
        let hit = scene
            .raycast(&Point3::origin(), &Vector3::x(), 100.0)
            .unwrap()
            .unwrap();
        assert!((hit.range - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ray_box_entry_face() {
        let scene = SceneModel::new(
            vec![Surface::Box {
                min: Point3::new(2.0, -1.0, -1.0),
                max: Point3::new(4.0, 1.0, 1.0),
            }],
            0,
        )
        .unwrap();
        let d = Vector3::new(1.0, 0.2, 0.1).normalize();
        let hit = scene
            .raycast(&Point3::origin(), &d, 100.0)
            .unwrap()
            .unwrap();
        assert!((hit.point.x - 2.0).abs() < 1e-12);
        assert!(scene.surfaces[0].distance(&hit.point) < 1e-9);
    }

    #[test]
    fn rejects_unnormalized_direction() {
        let scene = SceneModel::new(vec![wall_x(5.0)], 0).unwrap();
        assert!(scene
            .raycast(&Point3::origin(), &Vector3::new(2.0, 0.0, 0.0), 10.0)
            .is_err());
    }

    #[test]
    fn rejects_bad_extent() {
        let bad = Surface::Box {
            min: Point3::new(0.0, 0.0, 0.0),
            max: Point3::new(1.0, 0.0, 1.0),
        };
        assert!(SceneModel::new(vec![bad], 0).is_err());
    }

    #[test]
    fn random_scene_deterministic() {
        let p = SceneParams::default();
        assert_eq!(random_scene(&p, 5), random_scene(&p, 5));
        assert_ne!(random_scene(&p, 5), random_scene(&p, 6));
    }
}
