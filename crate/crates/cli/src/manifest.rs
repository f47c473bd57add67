//! Run manifests and report files. Nothing here records wall-clock time or
//! absolute paths, so identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use efpc_core::eval::{ExampleScores, MetricsReport, TokenStats};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_digest(config: &RunConfig) -> String {
    sha256_hex(&serde_json::to_vec(&config.without_paths()).expect("config serializes"))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub run_id: String,
    pub config_digest: String,
    pub config: RunConfig,
    /// File name to SHA-256 of contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub versions: BTreeMap<String, String>,
}

/// Collects inputs as a command reads them and writes the manifest at the end.
pub struct RunRecorder {
    command: String,
    config: RunConfig,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl RunRecorder {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config: config.without_paths(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<Vec<u8>> {
        let bytes = std::fs::read(path)?;
        self.inputs.insert(file_name(path), sha256_hex(&bytes));
        Ok(bytes)
    }

    /// Digests a non-file input such as an instruction string.
    pub fn input_value(&mut self, name: &str, value: &[u8]) {
        self.inputs.insert(name.to_string(), sha256_hex(value));
    }

    pub fn config_digest(&self) -> String {
        config_digest(&self.config)
    }

    /// Stable id: digest of command, config and inputs.
    pub fn run_id(&self) -> String {
        let key = serde_json::to_vec(&(&self.command, self.config_digest(), &self.inputs)).unwrap();
        sha256_hex(&key)[..16].to_string()
    }

    pub fn write_output(&mut self, path: &Path, bytes: &[u8]) -> std::io::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, bytes)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    /// Writes `<primary>.manifest.json` and returns its path.
    pub fn finish(self, primary: &Path) -> std::io::Result<PathBuf> {
        let mut outputs = BTreeMap::new();
        for p in &self.outputs {
            outputs.insert(file_name(p), sha256_hex(&std::fs::read(p)?));
        }
        let manifest = Manifest {
            run_id: self.run_id(),
            config_digest: self.config_digest(),
            command: self.command,
            config: self.config,
            inputs: self.inputs,
            outputs,
            versions: BTreeMap::from([
                ("efpc".to_string(), env!("CARGO_PKG_VERSION").to_string()),
                (
                    "checkpoint_format".to_string(),
                    efpc_core::encoder::checkpoint::FORMAT_VERSION.to_string(),
                ),
            ]),
        };
        let mut name = primary.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        std::fs::write(&path, to_pretty(&manifest))?;
        Ok(path)
    }
}

pub fn to_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable");
    v.push(b'\n');
    v
}

/// Report file: `{run_id, config_digest, metrics, per_example, ...}`.
#[derive(Debug, Serialize)]
pub struct ReportFile<'a> {
    pub run_id: String,
    pub config_digest: String,
    pub metrics: &'a BTreeMap<String, f64>,
    pub per_example: &'a [ExampleScores],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tokens: Option<TokenStats>,
    pub n_items: usize,
    pub n_scored: usize,
    pub n_failed: usize,
}

impl<'a> ReportFile<'a> {
    pub fn new(recorder: &RunRecorder, report: &'a MetricsReport) -> Self {
        Self {
            run_id: recorder.run_id(),
            config_digest: recorder.config_digest(),
            metrics: &report.metrics,
            per_example: &report.per_example,
            tokens: report.tokens,
            n_items: report.n_items,
            n_scored: report.n_scored,
            n_failed: report.n_failed,
        }
    }
}
