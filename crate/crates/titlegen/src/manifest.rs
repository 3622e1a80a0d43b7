//! Run manifests: every pipeline command records its resolved configuration,
//! inputs, outputs, seed, and output hashes so any run can be reproduced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::sha256_file;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest io error {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {msg}")]
    Malformed { path: String, msg: String },
    #[error("failed to hash output {0}")]
    Hash(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    /// sha256 of each output file, keyed like `outputs`.
    pub artifact_sha256: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed,
            started_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            finished_at: String::new(),
            artifact_sha256: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, label: &str, path: &Path) {
        self.inputs
            .insert(label.to_string(), path.display().to_string());
    }

    pub fn add_output(&mut self, label: &str, path: &Path) {
        self.outputs
            .insert(label.to_string(), path.display().to_string());
    }

    /// Hashes every recorded output and stamps the finish time. Call after
    /// all outputs exist.
    pub fn finalize(&mut self) -> Result<(), ManifestError> {
        for (label, path) in &self.outputs {
            let hash = sha256_file(Path::new(path))
                .map_err(|_| ManifestError::Hash(path.clone()))?;
            self.artifact_sha256.insert(label.clone(), hash);
        }
        self.finished_at = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
        Ok(())
    }

    /// Writes atomically: a temporary file in the target directory is
    /// renamed over the destination.
    pub fn write(&self, path: &Path) -> Result<(), ManifestError> {
        let io_err = |source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let tmp: PathBuf = dir.join(format!(
            ".{}.tmp",
            path.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "manifest.json".to_string())
        ));
        std::fs::write(&tmp, text).map_err(io_err)?;
        std::fs::rename(&tmp, path).map_err(io_err)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ManifestError::Malformed {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    /// Standard manifest path for an output file: `<output>.manifest.json`.
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".to_string());
        name.push_str(".manifest.json");
        output.with_file_name(name)
    }

    /// Everything except the wall-clock timestamps, for reproducibility
    /// comparisons across runs.
    pub fn reproducible_view(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("started_at");
            map.remove("finished_at");
        }
        v
    }
}
