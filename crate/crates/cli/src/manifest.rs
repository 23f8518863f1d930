use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use handforge::scene_synth::write_atomic;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Provenance of one command run. Timestamps live only here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    /// `flag`, `config` or `default`.
    pub seed_source: Option<String>,
    pub rig: Option<String>,
    pub jobs: usize,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub started_unix_ms: u128,
    pub duration_s: f64,
}

pub struct Recorder {
    started: Instant,
    started_unix_ms: u128,
    pub manifest: RunManifest,
}

impl Recorder {
    pub fn start(command: &str) -> Self {
        let started_unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        Self {
            started: Instant::now(),
            started_unix_ms,
            manifest: RunManifest {
                command: command.to_string(),
                config_hash: None,
                seed: None,
                seed_source: None,
                rig: None,
                jobs: rayon::current_num_threads(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix_ms,
                duration_s: 0.0,
            },
        }
    }

    pub fn finish(mut self, out_dir: &Path) -> Result<(), CliError> {
        self.manifest.started_unix_ms = self.started_unix_ms;
        self.manifest.duration_s = self.started.elapsed().as_secs_f64();
        write_json(&out_dir.join(MANIFEST_FILE), &self.manifest)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))
}
