//! Run manifests written beside outputs.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: String,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_entry(path: &Path) -> Result<FileEntry, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(FileEntry {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

/// `<out>.manifest.json`
pub fn path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub struct Run {
    command: String,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(command: &str, config: &impl Serialize) -> Self {
        Run {
            command: command.into(),
            seed: None,
            config: serde_json::to_value(config).expect("config serializes"),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    /// Hashes every listed file and writes the manifest to `at`.
    pub fn write(self, at: &Path) -> Result<(), CliError> {
        let entries = |ps: &[PathBuf]| ps.iter().map(|p| file_entry(p)).collect::<Result<Vec<_>, _>>();
        let manifest = Manifest {
            format_version: trajaudit::FORMAT_VERSION,
            tool: "trajaudit",
            tool_version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed: self.seed,
            config_sha256: sha256_hex(&serde_json::to_vec(&self.config).expect("value serializes")),
            config: self.config,
            inputs: entries(&self.inputs)?,
            outputs: entries(&self.outputs)?,
        };
        trajaudit::format::write_json(at, &manifest)?;
        Ok(())
    }
}
