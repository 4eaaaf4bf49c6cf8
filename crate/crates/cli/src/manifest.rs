//! Run manifests: what was run, with which inputs, producing which files.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use bo4io::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Experiment;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub created_unix_s: u64,
    pub input: Vec<FileDigest>,
    pub output: Vec<FileDigest>,
    pub config: Experiment,
}

impl Manifest {
    pub fn new(command: &str, config: &Experiment) -> Self {
        Self {
            version: format!("bo4io {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            seed: config.seed,
            created_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            input: Vec::new(),
            output: Vec::new(),
            config: config.clone(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.input.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.output.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Writes `manifest-<command>.toml` into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("manifest-{}.toml", self.command));
        let text = toml::to_string(self).map_err(|e| Error::format("manifest", e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
