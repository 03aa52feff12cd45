//! Run manifests: resolved config, seeds, version and content hashes of
//! every input and output file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

/// SHA-256 over `"blob <len>\0" + bytes`, the git object layout.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub experiment: String,
    pub seed: u64,
    pub workers: usize,
    pub config_hash: String,
    pub config: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let config = cfg.to_toml()?;
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: cfg.experiment.name().to_string(),
            seed: cfg.seed,
            workers: cfg.workers,
            config_hash: blob_hash(config.as_bytes()),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(FileHash {
            path: path.display().to_string(),
            hash: blob_hash(&bytes),
        });
        Ok(())
    }

    /// Writes `config.toml`, then hashes every file under `dir` and writes
    /// the manifest last.
    pub fn finish(mut self, dir: &Path) -> Result<Self, CliError> {
        fs::write(dir.join(CONFIG_FILE), &self.config)?;
        let mut files = Vec::new();
        walk(dir, &mut files)?;
        files.sort();
        self.outputs.clear();
        for f in files {
            let rel = f.strip_prefix(dir).unwrap_or(&f);
            if rel == Path::new(MANIFEST_FILE) {
                continue;
            }
            self.outputs.push(FileHash {
                path: rel.to_string_lossy().replace('\\', "/"),
                hash: blob_hash(&fs::read(&f)?),
            });
        }
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&self)? + "\n",
        )?;
        Ok(self)
    }
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}
