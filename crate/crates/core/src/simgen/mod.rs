//! Synthetic cross-source scan pairs: a parametric scene, a spinning ring
//! lidar, a fan-shaped lidar, sensor degradations and an unaligned view image.

mod degrade;
mod image;
mod lidar;
mod pair;
mod scene;

pub use degrade::{degrade, DegradationSpec};
pub use image::{render_view_image, Intrinsics, ViewImage, MIN_IMAGE_SIDE};
pub use lidar::{sample_fan_lidar, sample_ring_lidar, FanLidarSpec, RingLidarSpec};
pub use pair::{
    estimate_overlap, make_pair, CameraSpec, PairSpec, ScenePair, SuiteConfig,
    DEFAULT_OVERLAP_RADIUS, SENSOR_HEIGHT,
};
pub use scene::{random_scene, Hit, SceneModel, SceneParams, Surface};

/// SplitMix64 mix of a base seed and a stream index.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
