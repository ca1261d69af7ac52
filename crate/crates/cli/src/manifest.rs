use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub seed: u64,
    pub args: Vec<String>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    /// Hash over the arguments, config text and input hashes.
    pub input_hash: String,
    pub elapsed_seconds: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn start(command: &str, config: Option<&Path>, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config: config.map(|p| p.display().to_string()),
            seed,
            args: std::env::args().skip(1).collect(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            input_hash: String::new(),
            elapsed_seconds: 0.0,
            started: Some(Instant::now()),
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(Artifact {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        self.outputs.push(Artifact {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Finalises hashes and timing and writes `path`.
    pub fn write(mut self, path: &Path) -> CliResult<PathBuf> {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update(self.seed.to_le_bytes());
        for a in &self.args {
            h.update(a.as_bytes());
            h.update([0]);
        }
        if let Some(c) = &self.config {
            if let Ok(text) = std::fs::read(c) {
                h.update(&text);
            }
        }
        for i in &self.inputs {
            h.update(i.sha256.as_bytes());
        }
        self.input_hash = hex(&h.finalize());
        self.elapsed_seconds = self.started.map_or(0.0, |s| s.elapsed().as_secs_f64());
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(path, json + "\n")?;
        Ok(path.to_path_buf())
    }
}
