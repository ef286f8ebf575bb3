//! Cross-source point cloud registration.
//!
//! The pipeline runs in four phases: multi-level feature extraction,
//! image-assisted overlap mask prediction, attention-guided superpoint
//! matching, and grouped dense matching followed by pose estimation. A
//! synthetic two-sensor scan generator provides pairs with known ground truth.

pub mod densematch;
pub mod encode;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod omp;
pub mod pipeline;
pub mod selftest;
pub mod simgen;
pub mod spatial;
pub mod vgam;
pub mod weights;

pub use error::{Error, Result};
pub use geometry::{
    Correspondence, CorrespondenceSet, Granularity, Point3, PointCloud, RigidTransform,
};
