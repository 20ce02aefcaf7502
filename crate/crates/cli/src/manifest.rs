//! Run manifests: enough to repeat a command bit-exactly.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    /// `path -> sha256` for each input file (config, grid, checkpoint).
    pub inputs: Vec<(String, String)>,
    pub seeds: Vec<u64>,
    pub rng: &'static str,
    pub workers: usize,
    pub wall_seconds: f64,
    pub outputs: Vec<String>,
    pub results: Value,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            inputs: Vec::new(),
            seeds: Vec::new(),
            rng: dropattack::rng::ALGORITHM,
            workers: 1,
            wall_seconds: 0.0,
            outputs: Vec::new(),
            results: Value::Null,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let hash = file_sha256(path)?;
        self.inputs.push((path.display().to_string(), hash));
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Other(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}
