//! Run manifests: the audit trail of one experiment. The manifest digest
//! is a pure function of the effective configuration, the input file
//! contents, and the bytes of every produced artifact; the output
//! directory's location never enters it.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ResolvedConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl ToolInfo {
    pub fn current() -> Self {
        Self {
            name: "gauntlet".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputEntry {
    pub label: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: ToolInfo,
    pub experiment: String,
    pub seed: u64,
    pub config_digest: String,
    pub resolved_config: serde_json::Value,
    pub output_dir: String,
    pub inputs: Vec<InputEntry>,
    pub outputs: Vec<OutputEntry>,
    pub digest: String,
}

pub fn hex_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the effective run parameters: the resolved config with the
/// output directory cleared, plus the content digests of every input
/// file as written in the config. Stable across machines and output
/// locations.
pub fn config_digest(cfg: &ResolvedConfig) -> Result<(String, Vec<InputEntry>)> {
    let mut inputs = Vec::new();
    for (label, as_written, resolved) in cfg.input_files() {
        let bytes = fs::read(&resolved)
            .with_context(|| format!("reading {label} input {}", resolved.display()))?;
        inputs.push(InputEntry {
            label,
            path: as_written,
            sha256: hex_digest(&bytes),
        });
    }
    let mut scrubbed = cfg.raw.clone();
    scrubbed.output_dir = PathBuf::new();
    let payload = serde_json::json!({
        "config": scrubbed,
        "inputs": inputs,
    });
    Ok((hex_digest(payload.to_string().as_bytes()), inputs))
}

/// Collects output files as they are written, then seals the manifest.
pub struct OutputWriter {
    dir: PathBuf,
    entries: Vec<OutputEntry>,
}

impl OutputWriter {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.entries.push(OutputEntry {
            name: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex_digest(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Seals the run: computes the manifest digest over tool identity,
    /// experiment, seed, config digest and output digests, then writes
    /// manifest.json alongside the artifacts.
    pub fn finish(
        mut self,
        cfg: &ResolvedConfig,
        config_digest: String,
        inputs: Vec<InputEntry>,
    ) -> Result<RunManifest> {
        self.entries.sort_by(|a, b| a.name.cmp(&b.name));
        let tool = ToolInfo::current();
        let experiment = cfg.raw.experiment.name().to_string();
        let payload = serde_json::json!({
            "tool": tool,
            "experiment": experiment,
            "seed": cfg.raw.seed,
            "config_digest": config_digest,
            "outputs": self.entries,
        });
        let digest = hex_digest(payload.to_string().as_bytes());
        let manifest = RunManifest {
            tool,
            experiment,
            seed: cfg.raw.seed,
            config_digest,
            resolved_config: serde_json::to_value(&cfg.raw)?,
            output_dir: cfg.output_dir.display().to_string(),
            inputs,
            outputs: self.entries,
            digest,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join(MANIFEST_FILE), text)
            .with_context(|| format!("writing manifest in {}", self.dir.display()))?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text =
        fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}
