//! Run manifests: everything needed to repeat a training run.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub role: &'static str,
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(role: &'static str, path: &Path, contents: &[u8]) -> Self {
        let digest = Sha256::digest(contents);
        FileDigest {
            role,
            path: path.display().to_string(),
            bytes: contents.len() as u64,
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub load_seconds: f64,
    pub train_seconds: f64,
    pub write_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub method: &'static str,
    /// Complete training configuration, seeds included.
    pub config: serde_json::Value,
    pub dimension: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub split_manifest: Option<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timings: Timings,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
