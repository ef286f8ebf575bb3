//! `meta.txt`: ground truth, overlap estimate and the seed of a pair.
//!
//! ```text
//! gt r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz
//! overlap 0.71
//! seed 1234
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::simgen::ScenePair;

use super::{read_bytes, write_bytes, Lines};

/// Rotations read from disk must be orthonormal to this tolerance.
pub const META_ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMeta {
    /// Maps source coordinates into the target frame.
    pub gt: RigidTransform,
    pub overlap: f64,
    pub seed: u64,
}

impl PairMeta {
    pub fn of(pair: &ScenePair) -> Self {
        Self {
            gt: pair.gt,
            overlap: pair.overlap,
            seed: pair.seed,
        }
    }
}

pub fn format_meta(m: &PairMeta) -> String {
    let gt: Vec<String> = m.gt.to_row_major().iter().map(|v| v.to_string()).collect();
    format!(
        "gt {}\noverlap {}\nseed {}\n",
        gt.join(" "),
        m.overlap,
        m.seed
    )
}

pub fn write_meta(path: &Path, m: &PairMeta) -> Result<()> {
    write_bytes(path, format_meta(m).as_bytes())
}

pub fn read_meta(path: &Path) -> Result<PairMeta> {
    parse_meta(&read_bytes(path)?, path)
}

pub fn parse_meta(bytes: &[u8], path: &Path) -> Result<PairMeta> {
    let err = |offset: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        offset,
        message,
    };
    let mut lines = Lines::new(bytes, path)?;
    let (mut gt, mut overlap, mut seed) = (None, None, None);
    while let Some((off, line)) = lines.next_line() {
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        let floats = || -> Result<Vec<f64>> {
            values
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| err(off, format!("{key}: bad number {v:?}")))
                })
                .collect()
        };
        match key {
            "gt" => {
                let v: [f64; 12] = floats()?.try_into().map_err(|v: Vec<f64>| {
                    err(off, format!("gt needs 12 numbers, found {}", v.len()))
                })?;
                let t = RigidTransform::from_row_major(&v)
                    .ok()
                    .filter(|t| t.is_valid(META_ROTATION_TOLERANCE))
                    .ok_or_else(|| err(off, "gt rotation is not orthonormal".into()))?;
                gt = Some(t);
            }
            "overlap" => match floats()?.as_slice() {
                [v] if (0.0..=1.0).contains(v) => overlap = Some(*v),
                _ => return Err(err(off, "overlap needs one value in [0, 1]".into())),
            },
            "seed" => match values.as_slice() {
                [v] => seed = Some(v.parse().map_err(|_| err(off, format!("bad seed {v:?}")))?),
                _ => return Err(err(off, "seed needs one value".into())),
            },
            other => return Err(err(off, format!("unknown key {other:?}"))),
        }
    }
    let end = bytes.len();
    Ok(PairMeta {
        gt: gt.ok_or_else(|| err(end, "missing gt".into()))?,
        overlap: overlap.ok_or_else(|| err(end, "missing overlap".into()))?,
        seed: seed.ok_or_else(|| err(end, "missing seed".into()))?,
    })
}
