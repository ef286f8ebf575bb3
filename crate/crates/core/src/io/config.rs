//! Sectioned `key = value` configuration.
//!
//! ```text
//! # comment
//! [suite]
//! pairs = 50
//! overlap_range = 0.4, 0.9
//! ```
//!
//! Every diagnostic names the file and the 1-based line. Keys left out keep
//! their defaults, so an empty file is the default configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::pipeline::{MaskSource, PipelineConfig, Thresholds};
use crate::simgen::SuiteConfig;
use crate::vgam::AttentionMode;

use super::{read_bytes, Lines};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigEntry {
    pub section: String,
    pub key: String,
    pub value: String,
    /// 1-based.
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigDoc {
    pub entries: Vec<ConfigEntry>,
}

/// Splits text into entries. Checks syntax and duplicate keys only.
pub fn parse_config_text(text: &str, path: &Path) -> Result<ConfigDoc> {
    let err = |line: usize, message: String| Error::Config {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut section = String::new();
    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(line, "unterminated section header".into()))?
                .trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(err(line, format!("bad section name {name:?}")));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `key = value`, found {body:?}")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(err(line, "empty key".into()));
        }
        if section.is_empty() {
            return Err(err(
                line,
                format!("key {key:?} appears before any [section]"),
            ));
        }
        if !seen.insert((section.clone(), key.to_string())) {
            return Err(err(line, format!("duplicate key {key:?} in [{section}]")));
        }
        entries.push(ConfigEntry {
            section: section.clone(),
            key: key.to_string(),
            value: value.trim().to_string(),
            line,
        });
    }
    Ok(ConfigDoc { entries })
}

/// Everything a command needs: suite generation, pipeline and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub suite: SuiteConfig,
    pub pipeline: PipelineConfig,
    pub thresholds: Thresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            suite: SuiteConfig::standard(),
            pipeline: PipelineConfig::default(),
            thresholds: Thresholds::default(),
        }
    }
}

trait ConfigValue: Sized {
    fn render(&self) -> String;
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn render(&self) -> String {
                self.to_string()
            }
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
        }
    )*};
}

from_str_value!(usize, u64, u32, bool);

impl ConfigValue for f64 {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "-inf" => Ok(f64::NEG_INFINITY),
            _ => s.parse().map_err(|e| format!("{e}")),
        }
    }
}

macro_rules! named_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn render(&self) -> String {
                self.name().to_string()
            }
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e: Error| e.to_string())
            }
        }
    )*};
}

named_value!(EstimatorKind, AttentionMode, MaskSource);

fn split_list<T: ConfigValue>(s: &str) -> std::result::Result<Vec<T>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| T::parse_value(p.trim())).collect()
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn render(&self) -> String {
        self.iter().map(T::render).collect::<Vec<_>>().join(", ")
    }
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        split_list(s)
    }
}

impl ConfigValue for (f64, f64) {
    fn render(&self) -> String {
        format!("{}, {}", self.0, self.1)
    }
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match split_list::<f64>(s)?.as_slice() {
            [a, b] => Ok((*a, *b)),
            v => Err(format!("expected two values, found {}", v.len())),
        }
    }
}

/// Empty means unset.
impl ConfigValue for Option<PathBuf> {
    fn render(&self) -> String {
        self.as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default()
    }
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok((!s.is_empty()).then(|| PathBuf::from(s)))
    }
}

/// `auto` means unset.
impl ConfigValue for Option<usize> {
    fn render(&self) -> String {
        self.map_or_else(|| "auto".into(), |v| v.to_string())
    }
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(None),
            _ => s.parse().map(Some).map_err(|e| format!("{e}")),
        }
    }
}

struct Field {
    section: &'static str,
    key: &'static str,
    get: fn(&RunConfig) -> String,
    set: fn(&mut RunConfig, &str) -> std::result::Result<(), String>,
}

macro_rules! field {
    ($section:literal, $key:literal, $($path:ident).+) => {
        Field {
            section: $section,
            key: $key,
            get: |c: &RunConfig| ConfigValue::render(&c.$($path).+),
            set: |c: &mut RunConfig, v: &str| {
                c.$($path).+ = ConfigValue::parse_value(v)?;
                Ok(())
            },
        }
    };
}

fn fields() -> Vec<Field> {
    vec![
        field!("suite", "pairs", suite.pairs),
        field!("suite", "seed", suite.seed),
        field!("suite", "noise_sigma", suite.noise_sigma),
        field!("suite", "outlier_fraction", suite.outlier_fraction),
        field!("suite", "dropout_fraction", suite.dropout_fraction),
        field!("suite", "overlap_range", suite.overlap_range),
        field!("suite", "gt_translation", suite.gt_translation),
        field!("suite", "gt_max_yaw_deg", suite.gt_max_yaw_deg),
        field!("suite", "placement_attempts", suite.placement_attempts),
        field!("suite", "gt_attempts", suite.gt_attempts),
        field!("scene", "half_extent", suite.scene.half_extent),
        field!("scene", "ground_radius", suite.scene.ground_radius),
        field!("scene", "boxes", suite.scene.boxes),
        field!("scene", "box_footprint", suite.scene.box_footprint),
        field!("scene", "box_height", suite.scene.box_height),
        field!("scene", "walls", suite.scene.walls),
        field!("scene", "wall_length", suite.scene.wall_length),
        field!("scene", "cylinders", suite.scene.cylinders),
        field!("scene", "cylinder_radius", suite.scene.cylinder_radius),
        field!("scene", "cylinder_height", suite.scene.cylinder_height),
        field!("ring", "beams", suite.ring.beams),
        field!("ring", "elevation_min_deg", suite.ring.elevation_min_deg),
        field!("ring", "elevation_max_deg", suite.ring.elevation_max_deg),
        field!(
            "ring",
            "azimuth_resolution_deg",
            suite.ring.azimuth_resolution_deg
        ),
        field!("ring", "max_range", suite.ring.max_range),
        field!("fan", "h_fov_deg", suite.fan.h_fov_deg),
        field!("fan", "v_fov_deg", suite.fan.v_fov_deg),
        field!("fan", "petals", suite.fan.petals),
        field!("fan", "angular_rate", suite.fan.angular_rate),
        field!("fan", "precession_rate", suite.fan.precession_rate),
        field!("fan", "samples", suite.fan.samples),
        field!("fan", "max_range", suite.fan.max_range),
        field!("camera", "height", suite.camera.height),
        field!("camera", "width", suite.camera.width),
        field!("camera", "hfov_deg", suite.camera.hfov_deg),
        field!("camera", "yaw_jitter_deg", suite.camera.yaw_jitter_deg),
        field!("camera", "near", suite.camera.near),
        field!("camera", "max_range", suite.camera.max_range),
        field!("encoder", "voxel_sizes", pipeline.encoder.voxel_sizes),
        field!("encoder", "dense_radii", pipeline.encoder.dense_radii),
        field!("encoder", "super_radii", pipeline.encoder.super_radii),
        field!("encoder", "dense_dim", pipeline.encoder.dense_dim),
        field!("encoder", "super_dim", pipeline.encoder.super_dim),
        field!("encoder", "image_scales", pipeline.encoder.image_scales),
        field!("encoder", "image_dim", pipeline.encoder.image_dim),
        field!("encoder", "sensor_height", pipeline.encoder.sensor_height),
        field!("encoder", "height_scale", pipeline.encoder.height_scale),
        field!(
            "encoder",
            "outlier_min_neighbors",
            pipeline.encoder.outlier_min_neighbors
        ),
        field!("encoder", "outlier_radius", pipeline.encoder.outlier_radius),
        field!("encoder", "layout_rings", pipeline.encoder.layout_rings),
        field!(
            "encoder",
            "dense_layout_rings",
            pipeline.encoder.dense_layout_rings
        ),
        field!("encoder", "layout_heights", pipeline.encoder.layout_heights),
        field!("encoder", "layout_sectors", pipeline.encoder.layout_sectors),
        field!("encoder", "layout_weight", pipeline.encoder.layout_weight),
        field!(
            "encoder",
            "point_wavelengths",
            pipeline.encoder.point_wavelengths
        ),
        field!(
            "encoder",
            "pixel_wavelengths",
            pipeline.encoder.pixel_wavelengths
        ),
        field!("omp", "enabled", pipeline.use_omp),
        field!("omp", "mask_source", pipeline.mask_source),
        field!("omp", "weights", pipeline.omp_weights),
        field!("omp", "threshold", pipeline.omp.threshold),
        field!("omp", "heads", pipeline.omp.heads),
        field!("omp", "gt_radius", pipeline.omp.gt_radius),
        field!("omp", "shared_weights", pipeline.omp.shared_weights),
        field!("vgam", "attention", pipeline.attention_mode),
        field!("vgam", "weights", pipeline.vgam_weights),
        field!("vgam", "repeats", pipeline.vgam.repeats),
        field!("vgam", "k_max", pipeline.vgam.k_max),
        field!("vgam", "k_fraction", pipeline.vgam.k_fraction),
        field!("vgam", "distance_bands", pipeline.vgam.distance_bands),
        field!("vgam", "distance_period", pipeline.vgam.distance_period),
        field!("vgam", "locality_sigma", pipeline.vgam.locality_sigma),
        field!("vgam", "locality_strength", pipeline.vgam.locality_strength),
        field!("vgam", "query_scale", pipeline.vgam.query_scale),
        field!("vgam", "cross_value_scale", pipeline.vgam.cross_value_scale),
        field!("vgam", "self_value_scale", pipeline.vgam.self_value_scale),
        field!("vgam", "geo_value_scale", pipeline.vgam.geo_value_scale),
        field!("matching", "slack", pipeline.matching.slack),
        field!("matching", "iterations", pipeline.matching.iterations),
        field!("matching", "top_k", pipeline.matching.top_k),
        field!(
            "matching",
            "min_confidence",
            pipeline.matching.min_confidence
        ),
        field!(
            "matching",
            "dense_feature_gain",
            pipeline.dense_feature_gain
        ),
        field!("estimator", "kind", pipeline.estimator.kind),
        field!("estimator", "seed", pipeline.estimator.seed),
        field!(
            "estimator",
            "ransac_iterations",
            pipeline.estimator.ransac_iterations
        ),
        field!(
            "estimator",
            "ransac_threshold",
            pipeline.estimator.ransac_threshold
        ),
        field!("estimator", "sample_size", pipeline.estimator.sample_size),
        field!(
            "estimator",
            "lgr_iterations",
            pipeline.estimator.lgr_iterations
        ),
        field!(
            "estimator",
            "lgr_threshold",
            pipeline.estimator.lgr_threshold
        ),
        field!(
            "estimator",
            "lgr_coarse_threshold",
            pipeline.estimator.lgr_coarse_threshold
        ),
        field!("run", "workers", pipeline.workers),
        field!("eval", "rre_deg", thresholds.rre_deg),
        field!("eval", "rte_m", thresholds.rte_m),
    ]
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        // reuse the UTF-8 check and its offset reporting
        Lines::new(&bytes, path)?;
        Self::from_text(&String::from_utf8_lossy(&bytes), path)
    }

    /// Applies `text` over the defaults and validates the result.
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let doc = parse_config_text(text, path)?;
        let table = fields();
        let mut cfg = RunConfig::default();
        for e in &doc.entries {
            let err = |message: String| Error::Config {
                path: path.to_path_buf(),
                line: e.line,
                message,
            };
            if !table.iter().any(|f| f.section == e.section) {
                return Err(err(format!("unknown section [{}]", e.section)));
            }
            let f = table
                .iter()
                .find(|f| f.section == e.section && f.key == e.key)
                .ok_or_else(|| err(format!("unknown key {:?} in [{}]", e.key, e.section)))?;
            (f.set)(&mut cfg, &e.value)
                .map_err(|m| err(format!("{}.{}: {m}", e.section, e.key)))?;
        }
        cfg.validate().map_err(|e| Error::Config {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.suite.validate()?;
        self.pipeline.validate()?;
        self.thresholds.validate()
    }

    /// Canonical text listing every key; parses back to an equal value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for f in fields() {
            if f.section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{}]\n", f.section));
                current = f.section;
            }
            out.push_str(&format!("{} = {}\n", f.key, (f.get)(self)));
        }
        out
    }
}
