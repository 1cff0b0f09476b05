use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<String>,
    pub master_seed: u64,
    pub artifact_version: String,
    /// SHA-256 of every input file, keyed by the path as given.
    pub input_digests: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub timestamp_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, master_seed: u64) -> Self {
        Self {
            command: command.to_string(),
            args,
            config_path: None,
            master_seed,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            input_digests: BTreeMap::new(),
            outputs: Vec::new(),
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.input_digests
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join("manifest.json");
        let mut body = serde_json::to_string_pretty(self).map_err(|e| CliError::Other(e.to_string()))?;
        body.push('\n');
        fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// Equality ignoring the timestamp.
    pub fn same_run(&self, other: &Self) -> bool {
        Self {
            timestamp_unix: 0,
            ..self.clone()
        } == Self {
            timestamp_unix: 0,
            ..other.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        fs::write(&p, "abc").unwrap();
        let mut m = RunManifest::new("x", vec![], 1);
        m.add_input(&p).unwrap();
        assert_eq!(
            m.input_digests[&p.display().to_string()],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let mut later = m.clone();
        later.timestamp_unix += 100;
        assert!(m.same_run(&later));
    }
}
