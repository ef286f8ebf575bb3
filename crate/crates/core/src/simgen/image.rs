//! Single-channel view images rendered by ray casting.

use nalgebra::Vector3;

use super::scene::SceneModel;
use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform};

pub const MIN_IMAGE_SIDE: usize = 8;

/// Row-major grid of values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ViewImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height < MIN_IMAGE_SIDE || width < MIN_IMAGE_SIDE {
            return Err(Error::invalid(format!(
                "image must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::dims(format!(
                "{} values for a {height}x{width} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Pinhole camera with a depth normalisation range.
///
/// Camera frame matches the sensors: x forward, y left, z up. Column index
/// grows to the right, row index grows downward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub near: f64,
    pub max_range: f64,
}

impl Intrinsics {
    /// Square pixels with the given horizontal field of view, centered.
    pub fn from_hfov(
        height: usize,
        width: usize,
        hfov_deg: f64,
        near: f64,
        max_range: f64,
    ) -> Self {
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            near,
            max_range,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.near > 0.0 && self.max_range > self.near) {
            return Err(Error::invalid("need 0 < near < max_range"));
        }
        Ok(())
    }

    /// Camera-frame ray through the pixel center, not normalised; x component is 1.
    pub fn ray(&self, row: usize, col: usize) -> Vector3<f64> {
        Vector3::new(
            1.0,
            -(col as f64 - self.cx) / self.fx,
            -(row as f64 - self.cy) / self.fy,
        )
    }

    /// Normalised inverse depth: 1 at `near` or closer, 0 at `max_range`.
    pub fn shade(&self, depth: f64) -> f64 {
        let inv_far = 1.0 / self.max_range;
        ((1.0 / depth - inv_far) / (1.0 / self.near - inv_far)).clamp(0.0, 1.0)
    }
}

/// Renders normalised inverse depth along the optical axis; misses are 0.
pub fn render_view_image(
    scene: &SceneModel,
    pose: &RigidTransform,
    intrinsics: &Intrinsics,
    height: usize,
    width: usize,
) -> Result<ViewImage> {
    intrinsics.validate()?;
    let origin = pose.apply_point(&Point3::origin());
    let mut data = Vec::with_capacity(height * width);
    for row in 0..height {
        for col in 0..width {
            let ray = intrinsics.ray(row, col);
            let norm = ray.norm();
            let dir = pose.apply_vector(&(ray / norm));
            // depth = range / |ray| since the ray's forward component is 1
            let value = scene
                .cast_unchecked(&origin, &dir, intrinsics.max_range * norm)
                .map_or(0.0, |hit| intrinsics.shade(hit.range / norm));
            data.push(value);
        }
    }
    ViewImage::new(height, width, data)
}
