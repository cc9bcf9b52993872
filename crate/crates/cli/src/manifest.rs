use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub group: String,
    pub stage: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Content hashes of every artifact written into an output directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: Vec<String>,
    pub artifacts: Vec<ArtifactEntry>,
    pub diagnostics: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<(String, u64)> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    let hex = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok((hex, total))
}

impl Manifest {
    pub fn load(dir: &Path) -> std::io::Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map(Some).map_err(std::io::Error::other)
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")
    }

    /// Hashes `dir/rel` and records it, replacing an earlier entry for the
    /// same path.
    pub fn record(&mut self, dir: &Path, rel: &str, group: &str, stage: &str) -> std::io::Result<()> {
        let (sha256, bytes) = sha256_file(&dir.join(rel))?;
        let entry = ArtifactEntry {
            path: rel.to_string(),
            group: group.to_string(),
            stage: stage.to_string(),
            bytes,
            sha256,
        };
        match self.artifacts.iter_mut().find(|a| a.path == rel) {
            Some(slot) => *slot = entry,
            None => self.artifacts.push(entry),
        }
        Ok(())
    }

    /// Marks a stage as complete and drops diagnostics from an earlier run
    /// of it.
    pub fn begin_stage(&mut self, stage: &str) {
        let prefix = format!("{stage}: ");
        self.diagnostics.retain(|d| !d.starts_with(&prefix));
        self.failed_stage = None;
    }

    pub fn finish_stage(&mut self, stage: &str) {
        if !self.stages.iter().any(|s| s == stage) {
            self.stages.push(stage.to_string());
        }
    }

    pub fn groups(&self) -> Vec<&str> {
        let mut g: Vec<&str> = self.artifacts.iter().map(|a| a.group.as_str()).collect();
        g.sort_unstable();
        g.dedup();
        g
    }

    pub fn entry(&self, rel: &str) -> Option<&ArtifactEntry> {
        self.artifacts.iter().find(|a| a.path == rel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"abc").unwrap();
        let (h, n) = sha256_file(&dir.path().join("a.txt")).unwrap();
        assert_eq!(n, 3);
        assert_eq!(h, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn record_replaces_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"one").unwrap();
        let mut m = Manifest::default();
        m.record(dir.path(), "a.txt", "g", "s").unwrap();
        std::fs::write(dir.path().join("a.txt"), b"two").unwrap();
        m.record(dir.path(), "a.txt", "g", "s").unwrap();
        assert_eq!(m.artifacts.len(), 1);
        m.finish_stage("s");
        m.save(dir.path()).unwrap();
        assert_eq!(Manifest::load(dir.path()).unwrap(), Some(m));
    }
}
