//! Run manifests: every command records its full parameter set, master
//! seed, and SHA-256 digests of the files it emitted. Re-running the same
//! build with the manifest's parameters reproduces those files byte for
//! byte at any thread count; only the manifest's own timestamps vary.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
pub struct OutputDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub parameters: serde_json::Value,
    pub master_seed: u64,
    pub artifact_version: String,
    pub threads: usize,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<OutputDigest>,
}

/// Collects emitted files and assembles the manifest.
pub struct ManifestBuilder {
    dir: PathBuf,
    command: String,
    parameters: serde_json::Value,
    master_seed: u64,
    threads: usize,
    started_at: String,
    outputs: Vec<OutputDigest>,
}

impl ManifestBuilder {
    pub fn new(
        dir: &Path,
        command: &str,
        parameters: serde_json::Value,
        master_seed: u64,
        threads: usize,
    ) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            parameters,
            master_seed,
            threads,
            started_at: chrono::Utc::now().to_rfc3339(),
            outputs: Vec::new(),
        })
    }

    /// Write one output file and record its digest.
    pub fn emit(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)?;
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        self.outputs.push(OutputDigest {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: format!("{:x}", hasher.finalize()),
        });
        Ok(path)
    }

    /// Write `<command>_manifest.json` and finish.
    pub fn finish(self) -> std::io::Result<()> {
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            command: self.command.clone(),
            parameters: self.parameters,
            master_seed: self.master_seed,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            threads: self.threads,
            started_at: self.started_at,
            finished_at: chrono::Utc::now().to_rfc3339(),
            outputs: self.outputs,
        };
        let path = self.dir.join(format!("{}_manifest.json", self.command));
        std::fs::write(path, serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }
}
