//! Artifact staging and the run manifest.
//!
//! Commands build all their artifacts in memory and hand them to
//! [`Outputs::commit`], which writes each one to a temporary file in the
//! output directory and renames it into place. A failing command therefore
//! leaves no partial artifacts behind, only a manifest that says it failed.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mmd_glm::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn commit(&self, dir: &Path) -> Result<()> {
        for (name, bytes) in &self.files {
            write_atomic(&dir.join(name), bytes)?;
        }
        Ok(())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Ok,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: Option<u128>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn start(command: &str, seed: Option<u64>, config: serde_json::Value, inputs: &[PathBuf]) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputDigest {
                    path: p.clone(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            command: command.to_string(),
            status: Status::Running,
            error: None,
            exit_code: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs,
            started_unix_ms: unix_ms(),
            finished_unix_ms: None,
            outputs: Vec::new(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))?;
        write_atomic(&dir.join(MANIFEST), format!("{json}\n").as_bytes())
    }

    pub fn finish(&mut self, outputs: Vec<String>, err: Option<(&Error, i32)>) {
        self.finished_unix_ms = Some(unix_ms());
        self.outputs = outputs;
        match err {
            None => self.status = Status::Ok,
            Some((e, code)) => {
                self.status = Status::Failed;
                self.error = Some(e.to_string());
                self.exit_code = Some(code);
            }
        }
    }
}
