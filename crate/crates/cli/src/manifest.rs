use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliResult, Failure};

pub const OUT_DIR_ENV: &str = "INTERLEAVE_OUT_DIR";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: BTreeMap<String, Value>,
    pub seed: Option<u64>,
    pub artifacts: Vec<Artifact>,
    pub timings: BTreeMap<String, f64>,
    pub version: String,
}

/// Collects artifacts and timings for one command and writes the manifest.
pub struct Run {
    dir: PathBuf,
    command: String,
    started: Instant,
    artifacts: Vec<Artifact>,
    timings: BTreeMap<String, f64>,
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `explicit`, else `$INTERLEAVE_OUT_DIR/<command>`, else `interleave-out/<command>`.
pub fn output_dir(explicit: Option<&Path>, command: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("interleave-out"))
            .join(command),
    }
}

impl Run {
    pub fn start(dir: PathBuf, command: &str) -> CliResult<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
        Ok(Self {
            dir,
            command: command.to_string(),
            started: Instant::now(),
            artifacts: Vec::new(),
            timings: BTreeMap::new(),
        })
    }

    /// Writes `bytes` to `<dir>/<name>` and records its hash.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Failure::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Failure::io(&path, e))?;
        self.record(name, bytes);
        Ok(path)
    }

    fn record(&mut self, name: &str, bytes: &[u8]) {
        self.artifacts.retain(|a| a.path != name);
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: hex_sha256(bytes),
            bytes: bytes.len() as u64,
        });
    }

    pub fn time(&mut self, label: &str, seconds: f64) {
        self.timings.insert(label.to_string(), seconds);
    }

    pub fn finish(mut self, config: BTreeMap<String, Value>, seed: Option<u64>) -> CliResult<RunManifest> {
        self.timings.insert("total_seconds".into(), self.started.elapsed().as_secs_f64());
        let manifest = RunManifest {
            command: self.command,
            args: std::env::args().collect(),
            config,
            seed,
            artifacts: self.artifacts,
            timings: self.timings,
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let path = self.dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, json).map_err(|e| Failure::io(&path, e))?;
        Ok(manifest)
    }
}
