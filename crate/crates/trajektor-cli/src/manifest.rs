//! Deterministic run manifest: config snapshot, seeds, versions, and a
//! content checksum per stage artifact.
//!
//! Wall-clock timing goes to a separate run log so that identical inputs
//! produce byte-identical manifests.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: String,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    /// Observation span of the parsed corpus, filled by the ingest stage.
    pub data_span: Option<(i64, i64)>,
    pub stages: Vec<StageEntry>,
    /// Stage name and error when the run stopped early.
    pub failure: Option<(String, String)>,
}

impl RunManifest {
    pub fn new(seed: u64, config: BTreeMap<String, String>) -> Self {
        RunManifest {
            tool: "trajektor".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            data_span: None,
            stages: Vec::new(),
            failure: None,
        }
    }

    /// Record a completed stage by hashing its artifacts on disk.
    pub fn record_stage(
        &mut self,
        out_dir: &Path,
        stage: &str,
        artifacts: &[PathBuf],
    ) -> Result<(), CliError> {
        let mut entries = Vec::with_capacity(artifacts.len());
        for path in artifacts {
            let bytes = std::fs::read(path)?;
            let digest: String = Sha256::digest(&bytes)
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect();
            let rel = path
                .strip_prefix(out_dir)
                .unwrap_or(path)
                .to_string_lossy()
                .to_string();
            entries.push(ArtifactEntry {
                path: rel,
                sha256: digest,
                bytes: bytes.len() as u64,
            });
        }
        self.stages.push(StageEntry {
            stage: stage.to_string(),
            artifacts: entries,
        });
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf, CliError> {
        let path = out_dir.join("run_manifest.json");
        let mut file = std::fs::File::create(&path)?;
        serde_json::to_writer_pretty(&mut file, self)
            .map_err(|e| CliError::Stage(format!("manifest: {e}")))?;
        file.write_all(b"\n")?;
        Ok(path)
    }
}

/// Exclusive lock on an output directory; at most one run at a time.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(out_dir: &Path) -> Result<Self, CliError> {
        let path = out_dir.join(".lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Validation(format!(
                    "output directory is locked by another run ({}); remove the stale lock if no run is active",
                    path.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksums_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let artifact = dir.path().join("a.csv");
        std::fs::write(&artifact, "x,y\n1,2\n").unwrap();
        let mut m1 = RunManifest::new(1, BTreeMap::new());
        m1.record_stage(dir.path(), "demo", &[artifact.clone()]).unwrap();
        let mut m2 = RunManifest::new(1, BTreeMap::new());
        m2.record_stage(dir.path(), "demo", &[artifact]).unwrap();
        assert_eq!(
            serde_json::to_string(&m1).unwrap(),
            serde_json::to_string(&m2).unwrap()
        );
        assert_eq!(m1.stages[0].artifacts[0].path, "a.csv");
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }
}
