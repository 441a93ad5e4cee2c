//! Run manifest written next to every produced output directory so results
//! can be traced back to their inputs.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub inputs: Vec<String>,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub wall_ms: f64,
}

pub struct RunTimer {
    start: Instant,
    subcommand: String,
    inputs: Vec<String>,
    seed: Option<u64>,
}

impl RunTimer {
    pub fn new(subcommand: &str) -> Self {
        Self {
            start: Instant::now(),
            subcommand: subcommand.to_string(),
            inputs: Vec::new(),
            seed: None,
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    /// Writes `run_manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let manifest = RunManifest {
            subcommand: self.subcommand.clone(),
            argv: std::env::args().collect(),
            inputs: self.inputs.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
        };
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("run_manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
    }
}
