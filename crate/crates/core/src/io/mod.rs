//! On-disk formats: ASCII PLY clouds, plain PGM view images, pair metadata,
//! sectioned `key = value` configuration and tab-separated result records.

mod config;
mod meta;
mod pgm;
mod ply;
mod records;

use std::fs;
use std::path::{Path, PathBuf};

pub use config::{parse_config_text, ConfigDoc, ConfigEntry, RunConfig};
pub use meta::{format_meta, parse_meta, read_meta, write_meta, PairMeta};
pub use pgm::{format_pgm, parse_pgm, read_pgm, write_pgm, PGM_MAXVAL};
pub use ply::{format_ply, parse_ply, read_ply, write_ply};
pub use records::{format_records, parse_records, read_records, write_records};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::pipeline::BenchmarkPair;
use crate::simgen::{ScenePair, ViewImage};

pub const SOURCE_FILE: &str = "source.ply";
pub const TARGET_FILE: &str = "target.ply";
pub const IMAGE_FILE: &str = "view.pgm";
pub const META_FILE: &str = "meta.txt";

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Newline-split view of a UTF-8 buffer that remembers byte offsets.
pub(crate) struct Lines<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Lines<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &Path) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            offset: e.valid_up_to(),
            message: "invalid UTF-8".into(),
        })?;
        Ok(Self { text, pos: 0 })
    }

    /// Offset of the next unread byte.
    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    /// The next line without its terminator, and its starting offset.
    pub(crate) fn next_line(&mut self) -> Option<(usize, &'a str)> {
        if self.pos >= self.text.len() {
            return None;
        }
        let start = self.pos;
        let rest = &self.text[start..];
        let (line, advance) = match rest.find('\n') {
            Some(i) => (&rest[..i], i + 1),
            None => (rest, rest.len()),
        };
        self.pos += advance;
        Some((start, line.strip_suffix('\r').unwrap_or(line)))
    }
}

/// A pair directory loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPair {
    pub name: String,
    pub source: PointCloud,
    pub target: PointCloud,
    pub image: Option<ViewImage>,
    pub meta: Option<PairMeta>,
}

impl LoadedPair {
    /// Converts to a [`ScenePair`]; requires an image and metadata.
    pub fn into_scene_pair(self) -> Result<ScenePair> {
        let (Some(image), Some(meta)) = (self.image, self.meta) else {
            return Err(Error::invalid(format!(
                "{}: image or metadata missing",
                self.name
            )));
        };
        Ok(ScenePair {
            source: self.source,
            target: self.target,
            image,
            gt: meta.gt,
            overlap: meta.overlap,
            seed: meta.seed,
        })
    }
}

impl From<LoadedPair> for BenchmarkPair {
    fn from(p: LoadedPair) -> Self {
        Self {
            name: p.name,
            source: p.source,
            target: p.target,
            image: p.image,
            gt: p.meta.map(|m| m.gt),
        }
    }
}

/// Writes `source.ply`, `target.ply`, `view.pgm` and `meta.txt` into `dir`,
/// creating it if needed.
pub fn write_pair_dir(dir: &Path, pair: &ScenePair) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_ply(&dir.join(SOURCE_FILE), &pair.source)?;
    write_ply(&dir.join(TARGET_FILE), &pair.target)?;
    write_pgm(&dir.join(IMAGE_FILE), &pair.image)?;
    write_meta(&dir.join(META_FILE), &PairMeta::of(pair))
}

/// Reads a pair directory. The clouds are required; the image and metadata
/// are optional.
pub fn read_pair_dir(dir: &Path) -> Result<LoadedPair> {
    let optional = |name: &str| {
        let p = dir.join(name);
        p.is_file().then_some(p)
    };
    Ok(LoadedPair {
        name: dir.file_name().map_or_else(
            || dir.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        ),
        source: read_ply(&dir.join(SOURCE_FILE))?,
        target: read_ply(&dir.join(TARGET_FILE))?,
        image: optional(IMAGE_FILE).map(|p| read_pgm(&p)).transpose()?,
        meta: optional(META_FILE).map(|p| read_meta(&p)).transpose()?,
    })
}

pub fn is_pair_dir(dir: &Path) -> bool {
    dir.join(SOURCE_FILE).is_file() && dir.join(TARGET_FILE).is_file()
}

/// Pair directories under `root` in name order, or `root` itself if it is one.
pub fn list_pair_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if is_pair_dir(root) {
        return Ok(vec![root.to_path_buf()]);
    }
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() && is_pair_dir(&path) {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Directory name of generated pair `index`.
pub fn pair_dir_name(index: usize) -> String {
    format!("pair_{index:04}")
}
