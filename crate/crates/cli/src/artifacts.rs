//! Output directory bookkeeping and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct SolverStats {
    pub solves: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
}

impl SolverStats {
    pub fn record(&mut self, iterations: usize) {
        self.solves += 1;
        self.total_iterations += iterations;
        self.max_iterations = self.max_iterations.max(iterations);
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_file_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    data_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    data_sha256: Option<String>,
    config: &'a serde_json::Value,
    artifacts: &'a BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solver: Option<SolverStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_clock_seconds: Option<f64>,
}

/// Collects artifacts written under one output directory.
///
/// Everything but the optional wall-clock entry is a function of the inputs,
/// so re-running a command reproduces the directory byte for byte.
pub struct RunDir {
    root: PathBuf,
    command: &'static str,
    artifacts: BTreeMap<String, String>,
    config_file: Option<Vec<u8>>,
    data: Option<(String, String)>,
    pub solver: Option<SolverStats>,
    started: Option<Instant>,
}

impl RunDir {
    pub fn create(root: &Path, command: &'static str, timing: bool) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            command,
            artifacts: BTreeMap::new(),
            config_file: None,
            data: None,
            solver: None,
            started: timing.then(Instant::now),
        })
    }

    pub fn set_inputs(&mut self, config_file: Option<Vec<u8>>, data: Option<(&Path, &[u8])>) {
        self.config_file = config_file;
        self.data = data.map(|(p, bytes)| (p.display().to_string(), sha256_hex(bytes)));
    }

    /// Writes `bytes` to `rel` (forward-slash path) and records its hash.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    pub fn finish(self, config: &impl Serialize) -> Result<(), CliError> {
        let config = serde_json::to_value(config).map_err(|e| CliError::Usage(e.to_string()))?;
        let canonical = serde_json::to_vec(&config).map_err(|e| CliError::Usage(e.to_string()))?;
        let (data_file, data_sha256) = match self.data {
            Some((p, h)) => (Some(p), Some(h)),
            None => (None, None),
        };
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: sha256_hex(&canonical),
            config_file_sha256: self.config_file.as_deref().map(sha256_hex),
            data_file,
            data_sha256,
            config: &config,
            artifacts: &self.artifacts,
            solver: self.solver,
            wall_clock_seconds: self.started.map(|t| t.elapsed().as_secs_f64()),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Usage(e.to_string()))?;
        bytes.push(b'\n');
        let path = self.root.join("manifest.json");
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))
    }
}

/// Runs a CSV writer into memory.
pub fn render(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}
