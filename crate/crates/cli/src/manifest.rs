//! Run manifests: every command records its parameters, input digests, and
//! outputs so that reruns are auditable and byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    /// Flag values that shaped the run, sorted by name.
    pub parameters: BTreeMap<String, String>,
    /// SHA-256 of every input file, keyed by the path as given.
    pub input_digests: BTreeMap<String, String>,
    /// SHA-256 of the effective (merged) configuration, when one exists.
    pub config_digest: Option<String>,
    /// Output files written by the run, relative to the manifest.
    pub outputs: Vec<String>,
    pub convergence: Option<rt_estim::sampler::ConvergenceVerdict>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            seed,
            parameters: BTreeMap::new(),
            input_digests: BTreeMap::new(),
            config_digest: None,
            outputs: Vec::new(),
            convergence: None,
            notes: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.parameters.insert(key.to_string(), value.to_string());
        self
    }

    pub fn digest_input(&mut self, path: &Path) -> Result<&mut Self> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("reading input {}", path.display()))?;
        self.input_digests
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(self)
    }

    pub fn set_config_digest(&mut self, bytes: &[u8]) -> &mut Self {
        self.config_digest = Some(hex::encode(Sha256::digest(bytes)));
        self
    }

    pub fn note(&mut self, message: impl ToString) -> &mut Self {
        self.notes.push(message.to_string());
        self
    }

    pub fn record_output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self.outputs.sort();
        self
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

/// Deterministic pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
