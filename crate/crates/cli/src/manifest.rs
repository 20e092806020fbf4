use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rmsh_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, Error> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// Written next to every run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timestamp_unix: u64,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Error> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), Error> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, Error> {
        let path = dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        Ok(path)
    }
}
