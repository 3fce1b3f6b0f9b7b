//! Run manifests: resolved parameters plus digests of every input and
//! output, enough to re-run a command and check the outputs byte for byte.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CliError, Command};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Resolved parameters, tagged with the command name.
    pub invocation: Command,
    pub threads: usize,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Wall-clock seconds; the only field that differs between replays.
    pub duration_secs: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

pub fn load_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: not a run manifest: {e}", path.display())))
}

/// Inputs whose current content no longer matches the recorded digest.
pub fn changed_inputs(manifest: &RunManifest) -> Result<Vec<String>, CliError> {
    let mut changed = Vec::new();
    for input in &manifest.inputs {
        let now = digest_file(&PathBuf::from(&input.path))?;
        if now.sha256 != input.sha256 {
            changed.push(input.path.clone());
        }
    }
    Ok(changed)
}

/// Outputs whose digest differs from the manifest, or that are missing on
/// either side.
pub fn mismatched_outputs(manifest: &RunManifest, produced: &[FileDigest]) -> Vec<String> {
    let mut bad: Vec<String> = manifest
        .outputs
        .iter()
        .filter(|o| !produced.contains(o))
        .map(|o| o.path.clone())
        .collect();
    for p in produced {
        if !manifest.outputs.iter().any(|o| o.path == p.path) {
            bad.push(p.path.clone());
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn output_comparison() {
        let d = |p: &str, h: &str| FileDigest { path: p.into(), sha256: h.into() };
        let m = RunManifest {
            command: "capacity".into(),
            tool_version: "0".into(),
            invocation: Command::Capacity(super::super::CapacityArgs {
                channel: "c".into(),
                tol: 1e-9,
                max_iter: 10,
            }),
            threads: 1,
            seed: None,
            inputs: vec![],
            outputs: vec![d("a", "1"), d("b", "2")],
            duration_secs: 0.0,
        };
        assert!(mismatched_outputs(&m, &[d("a", "1"), d("b", "2")]).is_empty());
        assert_eq!(mismatched_outputs(&m, &[d("a", "1"), d("b", "3")]), vec!["b"]);
        assert_eq!(mismatched_outputs(&m, &[d("a", "1")]), vec!["b"]);
    }
}
