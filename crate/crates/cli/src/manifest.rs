//! Per-run manifest: resolved config, seed and content hashes of every input
//! and output file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// SHA-256 over `"blob <len>\0" ‖ bytes`, git's object framing.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()));
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(content_hash(&bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub hash: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config_hash: Option<String>,
    pub config: Option<serde_json::Value>,
    pub options: BTreeMap<String, String>,
    pub inputs: Vec<FileEntry>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileEntry>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            seed,
            config_hash: None,
            config: None,
            options: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn set_config<T: Serialize>(&mut self, cfg: &T) {
        let value = serde_json::to_value(cfg).expect("config serialises");
        let canonical = serde_json::to_vec(&value).expect("json");
        self.config_hash = Some(content_hash(&canonical));
        self.config = Some(value);
    }

    pub fn option(&mut self, key: &str, value: impl ToString) {
        self.options.insert(key.into(), value.to_string());
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push(FileEntry {
            path: path.display().to_string(),
            hash: file_hash(path)?,
        });
        Ok(())
    }

    /// Hashes the outputs and writes `manifest.json` into `out_dir`.
    pub fn finish(mut self, out_dir: &Path, outputs: &[PathBuf]) -> Result<(), CliError> {
        let mut outputs = outputs.to_vec();
        outputs.sort();
        for p in outputs {
            let rel = p.strip_prefix(out_dir).unwrap_or(&p).display().to_string();
            self.outputs.push(FileEntry {
                path: rel,
                hash: file_hash(&p)?,
            });
        }
        let text = serde_json::to_string_pretty(&self).expect("manifest serialises");
        let path = out_dir.join("manifest.json");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_git_blob_framing() {
        // printf 'blob 0\0' | sha256sum
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }
}
