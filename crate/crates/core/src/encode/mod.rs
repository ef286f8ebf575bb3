//! Deterministic feature encoders: a multi-level point feature pyramid built
//! from local shape descriptors, a filter-bank image encoder, and sinusoidal
//! positional encodings.

mod image;
mod position;
mod pyramid;

pub use image::{encode_image, image_raw_channels, ImageFeatureGrid};
pub use position::{positional_encoding, PositionalEncoding};
pub use pyramid::{
    eigen_features, encode_point_pyramid, layout_descriptor, lift, raw_descriptor, remove_isolated,
    EigenFeatures, FeaturePyramid, PyramidLevel, RAW_CHANNELS,
};

use crate::error::{Error, Result};

pub const MIN_FEATURE_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Voxel size per pyramid level, finest first.
    pub voxel_sizes: Vec<f64>,
    /// Neighbourhood radii for dense-level descriptors.
    pub dense_radii: Vec<f64>,
    /// Neighbourhood radii for superpoint descriptors.
    pub super_radii: Vec<f64>,
    pub dense_dim: usize,
    pub super_dim: usize,
    /// Box-filter half widths, in pixels.
    pub image_scales: Vec<usize>,
    pub image_dim: usize,
    /// Height of the sensor above the ground, used to normalise heights.
    pub sensor_height: f64,
    /// Heights are divided by this before clamping to `[0, 1]`.
    pub height_scale: f64,
    /// Level-0 points with fewer than this many neighbours within
    /// `outlier_radius` are dropped before encoding; 0 disables the filter.
    pub outlier_min_neighbors: usize,
    pub outlier_radius: f64,
    /// Outer radii of the annuli used by the superpoint layout channels,
    /// meters; empty disables them.
    pub layout_rings: Vec<f64>,
    /// Annuli for the dense-level layout channels; empty disables them.
    pub dense_layout_rings: Vec<f64>,
    /// Height band edges above ground for layout channels; the first edge
    /// is the floor, so at least two are needed.
    pub layout_heights: Vec<f64>,
    /// Angular sectors per annulus.
    pub layout_sectors: usize,
    /// Weight of the layout block relative to the shape block.
    pub layout_weight: f64,
    /// Positional encoding wavelengths for superpoints, meters.
    pub point_wavelengths: (f64, f64),
    /// Positional encoding wavelengths for pixels, in pixels.
    pub pixel_wavelengths: (f64, f64),
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            voxel_sizes: vec![0.25, 0.5, 1.0, 2.0],
            dense_radii: vec![0.75],
            super_radii: vec![2.0, 4.0],
            dense_dim: 32,
            super_dim: 64,
            image_scales: vec![1, 2, 4],
            image_dim: 64,
            sensor_height: 1.8,
            height_scale: 8.0,
            outlier_min_neighbors: 3,
            outlier_radius: 0.6,
            layout_rings: vec![1.0, 2.0, 3.5, 5.0, 6.5, 8.0],
            dense_layout_rings: vec![0.5, 1.0, 1.5, 2.0, 3.0],
            layout_heights: vec![0.3, 0.9, 1.6, 2.5],
            layout_sectors: 16,
            layout_weight: 1.0,
            point_wavelengths: (1.0, 100.0),
            pixel_wavelengths: (2.0, 128.0),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.voxel_sizes.is_empty() {
            return Err(Error::invalid("at least one pyramid level is required"));
        }
        if self.voxel_sizes.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("voxel sizes must be positive"));
        }
        if self.voxel_sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("voxel sizes must be strictly increasing"));
        }
        for (name, radii) in [
            ("dense", &self.dense_radii),
            ("superpoint", &self.super_radii),
        ] {
            if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0)) {
                return Err(Error::invalid(format!(
                    "{name} radii must be non-empty and positive"
                )));
            }
        }
        for (name, d, channels) in [
            (
                "dense",
                self.dense_dim,
                self.dense_radii.len() * RAW_CHANNELS
                    + self.layout_channels(&self.dense_layout_rings),
            ),
            (
                "superpoint",
                self.super_dim,
                self.super_radii.len() * RAW_CHANNELS + self.layout_channels(&self.layout_rings),
            ),
            ("image", self.image_dim, MIN_FEATURE_DIM),
        ] {
            if d < MIN_FEATURE_DIM || d < channels {
                return Err(Error::invalid(format!(
                    "{name} feature dim {d} must be at least {}",
                    channels.max(MIN_FEATURE_DIM)
                )));
            }
        }
        if self.image_scales.is_empty() || self.image_scales.contains(&0) {
            return Err(Error::invalid(
                "image scales must be non-empty and positive",
            ));
        }
        if !(self.height_scale > 0.0) {
            return Err(Error::invalid("height scale must be positive"));
        }
        if self.outlier_min_neighbors > 0 && !(self.outlier_radius > 0.0) {
            return Err(Error::invalid("outlier radius must be positive"));
        }
        if !self.layout_rings.is_empty() || !self.dense_layout_rings.is_empty() {
            let increasing =
                |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]) && v.first().is_none_or(|x| *x > 0.0);
            if !increasing(&self.layout_rings)
                || !increasing(&self.dense_layout_rings)
                || !increasing(&self.layout_heights)
                || self.layout_heights.len() < 2
            {
                return Err(Error::invalid(
                    "layout rings and heights must be positive and increasing",
                ));
            }
            if self.layout_sectors == 0 || !(self.layout_weight >= 0.0) {
                return Err(Error::invalid(
                    "layout needs sectors and a non-negative weight",
                ));
            }
        }
        Ok(())
    }

    /// Number of layout channels produced over the given annuli.
    pub fn layout_channels(&self, rings: &[f64]) -> usize {
        rings.len() * self.layout_heights.len().saturating_sub(1)
    }
}
