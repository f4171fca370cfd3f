use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
struct Output {
    file: String,
    bytes: u64,
    sha256: String,
}

/// Record of one invocation. Holds no paths or clock readings, so identical
/// runs produce identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    parameters: serde_json::Value,
    outputs: Vec<Output>,
}

impl Manifest {
    pub fn new(command: &'static str, parameters: serde_json::Value) -> Self {
        Self {
            tool: "iqal",
            version: env!("CARGO_PKG_VERSION"),
            command,
            parameters,
            outputs: Vec::new(),
        }
    }

    pub fn add(&mut self, dir: &Path, name: &str) -> Result<()> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).with_context(|| format!("hashing {}", path.display()))?;
        let sha256 = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        self.outputs.retain(|o| o.file != name);
        self.outputs.push(Output {
            file: name.to_string(),
            bytes: bytes.len() as u64,
            sha256,
        });
        Ok(())
    }

    pub fn add_path(&mut self, dir: &Path, path: &Path) -> Result<()> {
        let name = path
            .strip_prefix(dir)
            .unwrap_or(path)
            .to_str()
            .context("non UTF-8 output name")?;
        self.add(dir, name)
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.outputs.sort_by(|a, b| a.file.cmp(&b.file));
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        std::fs::write(dir.join(MANIFEST_FILE), text).with_context(|| format!("writing manifest in {}", dir.display()))
    }
}
