//! Two-sensor scan pairs with known relative pose, and the standard suite.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::degrade::{degrade, DegradationSpec};
use super::derive_seed;
use super::image::{render_view_image, Intrinsics, ViewImage, MIN_IMAGE_SIDE};
use super::lidar::{sample_fan_lidar, sample_ring_lidar, FanLidarSpec, RingLidarSpec};
use super::scene::{random_scene, SceneModel, SceneParams};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, RigidTransform};
use crate::spatial::KdTree;

pub const SENSOR_HEIGHT: f64 = 1.8;
pub const DEFAULT_OVERLAP_RADIUS: f64 = 0.5;

/// Source scan from the fan lidar, target scan from the ring lidar, and the
/// pose mapping source coordinates into the target frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub source: PointCloud,
    pub target: PointCloud,
    pub image: ViewImage,
    pub gt: RigidTransform,
    pub overlap: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraSpec {
    pub height: usize,
    pub width: usize,
    pub hfov_deg: f64,
    /// Uniform heading jitter bound, degrees.
    pub yaw_jitter_deg: f64,
    pub near: f64,
    pub max_range: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            height: 32,
            width: 64,
            hfov_deg: 90.0,
            yaw_jitter_deg: 10.0,
            near: 1.0,
            max_range: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSpec {
    /// `ring.pose` is the first placement of the target sensor in the world.
    pub ring: RingLidarSpec,
    /// `fan.pose` is ignored; the fan sits at `ring.pose ∘ gt`.
    pub fan: FanLidarSpec,
    pub degradation: DegradationSpec,
    pub camera: CameraSpec,
    pub gt: RigidTransform,
    pub overlap_range: (f64, f64),
    pub overlap_radius: f64,
    pub max_attempts: usize,
    /// Half side of the square in which retries place the ring sensor.
    /// `None` disables resampling.
    pub placement_half_extent: Option<f64>,
    pub seed: u64,
}

impl PairSpec {
    pub fn new(gt: RigidTransform) -> Self {
        Self {
            ring: RingLidarSpec::default(),
            fan: FanLidarSpec::default(),
            degradation: DegradationSpec::none(),
            camera: CameraSpec::default(),
            gt,
            overlap_range: (f64::MIN_POSITIVE, 1.0),
            overlap_radius: DEFAULT_OVERLAP_RADIUS,
            max_attempts: 1,
            placement_half_extent: None,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.overlap_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!(
                "overlap target ({lo}, {hi}) must lie within (0, 1]"
            )));
        }
        if !(self.overlap_radius > 0.0) {
            return Err(Error::invalid("overlap radius must be positive"));
        }
        if self.max_attempts == 0 {
            return Err(Error::invalid("max_attempts must be at least 1"));
        }
        if !self.gt.is_valid(crate::geometry::ROTATION_TOLERANCE) {
            return Err(Error::invalid("ground-truth transform is not rigid"));
        }
        self.ring.validate()?;
        self.fan.validate()?;
        self.degradation.validate()
    }
}

/// Fraction of source points with a target point within `radius` after `gt`.
pub fn estimate_overlap(
    source: &PointCloud,
    target: &PointCloud,
    gt: &RigidTransform,
    radius: f64,
) -> f64 {
    if source.is_empty() || target.is_empty() {
        return 0.0;
    }
    let tree = KdTree::from_cloud(target);
    let hits = source
        .iter()
        .filter(|p| {
            tree.nearest(&gt.apply_point(p))
                .is_some_and(|(_, d)| d <= radius)
        })
        .count();
    hits as f64 / source.len() as f64
}

fn yaw_of(t: &RigidTransform) -> f64 {
    t.rotation[(1, 0)].atan2(t.rotation[(0, 0)])
}

fn random_placement(
    scene: &SceneModel,
    gt: &RigidTransform,
    half: f64,
    rng: &mut ChaCha8Rng,
) -> RigidTransform {
    let clear = |p: &Point3| !scene.is_occupied(p, 1.0);
    let mut pose = RigidTransform::identity();
    for _ in 0..64 {
        pose = RigidTransform::from_yaw(
            rng.random_range(-PI..PI),
            Vector3::new(
                rng.random_range(-half..half),
                rng.random_range(-half..half),
                SENSOR_HEIGHT,
            ),
        );
        let fan_at = pose.compose(gt).apply_point(&Point3::origin());
        if clear(&pose.apply_point(&Point3::origin())) && clear(&fan_at) {
            break;
        }
    }
    pose
}

/// Scans one scene with both sensors, retrying ring placements until the
/// clean-scan overlap falls in the target range.
pub fn make_pair(scene: &SceneModel, spec: &PairSpec) -> Result<ScenePair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ring = spec.ring.clone();
    let mut fan = spec.fan.clone();
    let (lo, hi) = spec.overlap_range;

    for attempt in 0..spec.max_attempts {
        if attempt > 0 {
            match spec.placement_half_extent {
                Some(h) => ring.pose = random_placement(scene, &spec.gt, h, &mut rng),
                None => break,
            }
        }
        fan.pose = ring.pose.compose(&spec.gt);
        let target = sample_ring_lidar(scene, &ring)?;
        let source = sample_fan_lidar(scene, &fan)?;
        let overlap = estimate_overlap(&source, &target, &spec.gt, spec.overlap_radius);
        log::debug!("pair attempt {attempt}: overlap {overlap:.3}");
        if overlap < lo || overlap > hi {
            continue;
        }

        let image = render_camera(scene, &ring.pose, &fan.pose, &spec.camera, &mut rng)?;
        let src_deg = DegradationSpec {
            seed: derive_seed(spec.degradation.seed, 0),
            ..spec.degradation.clone()
        };
        let tgt_deg = DegradationSpec {
            seed: derive_seed(spec.degradation.seed, 1),
            ..spec.degradation.clone()
        };
        return Ok(ScenePair {
            source: degrade(&source, &src_deg)?,
            target: degrade(&target, &tgt_deg)?,
            image,
            gt: spec.gt,
            overlap,
            seed: spec.seed,
        });
    }
    Err(Error::OverlapUnreachable(spec.max_attempts))
}

/// Camera midway between the sensors, facing the fan heading plus jitter.
fn render_camera(
    scene: &SceneModel,
    ring_pose: &RigidTransform,
    fan_pose: &RigidTransform,
    cam: &CameraSpec,
    rng: &mut ChaCha8Rng,
) -> Result<ViewImage> {
    let mid = (ring_pose.translation + fan_pose.translation) / 2.0;
    let j = cam.yaw_jitter_deg.to_radians();
    let jitter = if j > 0.0 {
        rng.random_range(-j..=j)
    } else {
        0.0
    };
    let pose = RigidTransform::from_yaw(yaw_of(fan_pose) + jitter, mid);
    let k = Intrinsics::from_hfov(cam.height, cam.width, cam.hfov_deg, cam.near, cam.max_range);
    render_view_image(scene, &pose, &k, cam.height, cam.width)
}

/// Parameters of a generated benchmark suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub pairs: usize,
    pub seed: u64,
    pub scene: SceneParams,
    pub ring: RingLidarSpec,
    pub fan: FanLidarSpec,
    pub camera: CameraSpec,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    pub dropout_fraction: f64,
    pub overlap_range: (f64, f64),
    /// Sensor separation range, meters.
    pub gt_translation: (f64, f64),
    pub gt_max_yaw_deg: f64,
    /// Ring placements tried per ground-truth draw.
    pub placement_attempts: usize,
    /// Ground-truth draws tried per pair.
    pub gt_attempts: usize,
}

impl SuiteConfig {
    /// The frozen 50-pair benchmark.
    pub fn standard() -> Self {
        Self {
            pairs: 50,
            seed: 2024,
            scene: SceneParams::default(),
            ring: RingLidarSpec::default(),
            fan: FanLidarSpec::default(),
            camera: CameraSpec::default(),
            noise_sigma: 0.02,
            outlier_fraction: 0.1,
            dropout_fraction: 0.0,
            overlap_range: (0.4, 0.9),
            gt_translation: (2.0, 8.0),
            gt_max_yaw_deg: 180.0,
            placement_attempts: 4,
            gt_attempts: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs == 0 || self.placement_attempts == 0 || self.gt_attempts == 0 {
            return Err(Error::invalid("pairs and attempt counts must be positive"));
        }
        let (lo, hi) = self.overlap_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!(
                "overlap range ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1"
            )));
        }
        let (a, b) = self.gt_translation;
        if !(0.0 <= a && a <= b && b.is_finite()) {
            return Err(Error::invalid(
                "translation range must satisfy 0 <= lo <= hi",
            ));
        }
        if !(self.gt_max_yaw_deg >= 0.0 && self.gt_max_yaw_deg <= 180.0) {
            return Err(Error::invalid("maximum yaw must lie in [0, 180] degrees"));
        }
        if !(self.scene.half_extent > 0.0 && self.scene.ground_radius > 0.0) {
            return Err(Error::invalid("scene extents must be positive"));
        }
        if self.camera.height < MIN_IMAGE_SIDE || self.camera.width < MIN_IMAGE_SIDE {
            return Err(Error::invalid(format!(
                "camera must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
            )));
        }
        self.ring.validate()?;
        self.fan.validate()?;
        DegradationSpec {
            sigma: self.noise_sigma,
            outlier_fraction: self.outlier_fraction,
            outlier_volume: None,
            dropout_fraction: self.dropout_fraction,
            seed: 0,
        }
        .validate()
    }

    pub fn pair_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, index as u64)
    }

    fn sample_gt(&self, rng: &mut ChaCha8Rng) -> RigidTransform {
        let ymax = self.gt_max_yaw_deg.to_radians();
        let yaw = if ymax > 0.0 {
            rng.random_range(-ymax..=ymax)
        } else {
            0.0
        };
        let (a, b) = self.gt_translation;
        let dist = if b > a { rng.random_range(a..b) } else { a };
        let dir = rng.random_range(-PI..PI);
        RigidTransform::from_yaw(yaw, Vector3::new(dist * dir.cos(), dist * dir.sin(), 0.0))
    }

    /// Generates pair `index`; each pair owns an independent random stream.
    pub fn generate(&self, index: usize) -> Result<ScenePair> {
        self.validate()?;
        let seed = self.pair_seed(index);
        let scene = random_scene(&self.scene, derive_seed(seed, 0));
        let half = self.scene.half_extent * 0.6;
        for g in 0..self.gt_attempts {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1 + g as u64));
            let gt = self.sample_gt(&mut rng);
            let mut ring = self.ring.clone();
            ring.pose = random_placement(&scene, &gt, half, &mut rng);
            let spec = PairSpec {
                ring,
                fan: self.fan.clone(),
                degradation: DegradationSpec {
                    sigma: self.noise_sigma,
                    outlier_fraction: self.outlier_fraction,
                    outlier_volume: None,
                    dropout_fraction: self.dropout_fraction,
                    seed: derive_seed(seed, 1000 + g as u64),
                },
                camera: self.camera.clone(),
                gt,
                overlap_range: self.overlap_range,
                overlap_radius: DEFAULT_OVERLAP_RADIUS,
                max_attempts: self.placement_attempts,
                placement_half_extent: Some(half),
                seed: rng.random(),
            };
            match make_pair(&scene, &spec) {
                Ok(mut pair) => {
                    pair.seed = seed;
                    return Ok(pair);
                }
                Err(Error::OverlapUnreachable(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::OverlapUnreachable(
            self.gt_attempts * self.placement_attempts,
        ))
    }
}
