//! Per-run manifests (`run.json`): what ran, with which settings, and how long it took.
//!
//! Everything else a command writes is a function of its inputs and seed; `run.json` is the one
//! file that records wall-clock facts.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::LoadedConfig;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"), "-", env!("SE3FM_GIT_DESCRIBE"));

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'static str,
    seed: u64,
    threads: usize,
    args: Vec<String>,
    config_path: Option<String>,
    /// The config file, byte for byte.
    config_text: &'a str,
    effective_config: String,
    started_unix_s: f64,
    wall_clock_s: f64,
    outputs: Vec<String>,
}

pub struct RunTimer {
    command: &'static str,
    started: Instant,
    started_unix: f64,
    outputs: Vec<PathBuf>,
}

impl RunTimer {
    pub fn start(command: &'static str) -> Self {
        RunTimer {
            command,
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
            outputs: Vec::new(),
        }
    }

    /// Writes `bytes` to `path` and remembers it for the manifest.
    pub fn write(&mut self, path: PathBuf, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
        std::fs::write(&path, bytes)?;
        self.outputs.push(path);
        Ok(())
    }

    pub fn record(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn finish(self, dir: &Path, config: &LoadedConfig) -> anyhow::Result<()> {
        let manifest = RunManifest {
            command: self.command,
            version: VERSION,
            seed: config.config.seed,
            threads: rayon::current_num_threads(),
            args: std::env::args().collect(),
            config_path: config.path.as_ref().map(|p| p.display().to_string()),
            config_text: &config.text,
            effective_config: config.effective()?,
            started_unix_s: self.started_unix,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
            outputs: self
                .outputs
                .iter()
                .map(|p| {
                    p.file_name()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default()
                })
                .collect(),
        };
        std::fs::write(dir.join("run.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        log::info!("{} finished in {:.1} s", self.command, manifest.wall_clock_s);
        Ok(())
    }
}
