//! Provenance written next to every output directory.
//!
//! The manifest holds wall-clock timings, so it is kept out of the
//! byte-for-byte reproducible artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crossreg::io::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: &'static str,
    pub config_path: Option<PathBuf>,
    pub config: RunConfig,
    pub seeds: Vec<(String, u64)>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub timings: Vec<(String, f64)>,
}

impl RunManifest {
    pub fn new(command: &'static str, config_path: Option<&Path>, config: &RunConfig) -> Self {
        Self {
            command,
            config_path: config_path.map(Path::to_path_buf),
            config: config.clone(),
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# crossreg run manifest");
        let _ = writeln!(s, "version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "command = {}", self.command);
        let config = self
            .config_path
            .as_ref()
            .map_or("(defaults)".into(), |p| p.display().to_string());
        let _ = writeln!(s, "config = {config}");
        for (name, seed) in &self.seeds {
            let _ = writeln!(s, "seed.{name} = {seed}");
        }
        for p in &self.inputs {
            let _ = writeln!(s, "input = {}", p.display());
        }
        for p in &self.outputs {
            let _ = writeln!(s, "output = {}", p.display());
        }
        for (stage, ms) in &self.timings {
            let _ = writeln!(s, "time_ms.{stage} = {ms:.1}");
        }
        let _ = writeln!(s, "\n# effective configuration");
        s.push_str(&self.config.to_text());
        s
    }
}
