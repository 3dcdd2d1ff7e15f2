//! Run manifests: what was run, on which inputs, producing which bytes.

use crate::fmt::write_atomic;
use crate::models::MODELPARAMS_SCHEMA;
use crate::toygen::TOYPROCESS_SCHEMA;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

pub const RUNMANIFEST_SCHEMA: &str = "runmanifest-v1";
pub const CSV_SCHEMA: &str = "csv-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> std::io::Result<Self> {
        Ok(FileRecord {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Toolchain {
    pub rustc: String,
    pub target: String,
    pub profile: String,
    pub package: String,
}

impl Toolchain {
    pub fn current() -> Self {
        Toolchain {
            rustc: env!("RD_LENS_RUSTC").to_string(),
            target: env!("RD_LENS_TARGET").to_string(),
            profile: env!("RD_LENS_PROFILE").to_string(),
            package: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    /// Arguments exactly as given on the command line.
    pub argv: Vec<String>,
    /// The fully resolved command, defaults filled in; replay reads this.
    pub invocation: serde_json::Value,
    /// Library-level configuration derived from the invocation.
    pub config: serde_json::Value,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub schema_versions: BTreeMap<String, String>,
    pub wall_time_secs: f64,
    pub toolchain: Toolchain,
}

pub fn schema_versions() -> BTreeMap<String, String> {
    [
        ("runmanifest", RUNMANIFEST_SCHEMA),
        ("toyprocess", TOYPROCESS_SCHEMA),
        ("modelparams", MODELPARAMS_SCHEMA),
        ("csv", CSV_SCHEMA),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot read manifest: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed manifest: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("expected schema {RUNMANIFEST_SCHEMA}, found {0}")]
    Schema(String),
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path)?;
        let m: RunManifest = serde_json::from_str(&text)?;
        if m.schema != RUNMANIFEST_SCHEMA {
            return Err(ManifestError::Schema(m.schema));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest {
            schema: RUNMANIFEST_SCHEMA.into(),
            command: "calibrate".into(),
            argv: vec!["calibrate".into()],
            invocation: serde_json::json!({"command": "calibrate"}),
            config: serde_json::Value::Null,
            inputs: vec![],
            outputs: vec![],
            schema_versions: schema_versions(),
            wall_time_secs: 0.25,
            toolchain: Toolchain::current(),
        };
        let p = dir.path().join("manifest.json");
        m.write(&p).unwrap();
        assert_eq!(RunManifest::read(&p).unwrap(), m);
    }
}
