//! JSON run manifests: everything needed to repeat a training run.

use std::fs;
use std::path::{Path, PathBuf};

use flowbench_core::models::{FrameGeometry, ModelKind};
use flowbench_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_at, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub dropout_p: f64,
    pub shuffle: bool,
    pub height: usize,
    pub width: usize,
}

impl From<&TrainConfig> for TrainSettings {
    fn from(c: &TrainConfig) -> Self {
        TrainSettings {
            batch_size: c.batch_size,
            epochs: c.epochs,
            lr: c.lr,
            seed: c.seed,
            dropout_p: c.dropout_p,
            shuffle: c.shuffle,
            height: c.geometry.height,
            width: c.geometry.width,
        }
    }
}

impl TrainSettings {
    pub fn to_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            seed: self.seed,
            dropout_p: self.dropout_p,
            shuffle: self.shuffle,
            geometry: FrameGeometry::new(self.height, self.width)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub model: String,
    pub hyperparameters: Vec<(String, f64)>,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProvenance {
    pub path: PathBuf,
    pub sha256: String,
    pub frames: usize,
    /// Original range mapped onto `[-1, 1]`, from the training block.
    pub norm_lo: f64,
    pub norm_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub train: TrainSettings,
    pub models: Vec<ModelEntry>,
    pub dataset: DatasetProvenance,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn kinds(&self) -> Result<Vec<ModelKind>> {
        self.models.iter().map(|m| Ok(m.model.parse()?)).collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(io_at(path))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(serde_json::from_str(&fs::read_to_string(path).map_err(io_at(path))?)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Reads `path` and fails unless its digest equals `expected`.
pub fn verify_digest(path: &Path, expected: &str) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    let got = sha256_hex(&bytes);
    if got != expected {
        return Err(Error::Format(format!(
            "{} has sha256 {got}, manifest expects {expected}",
            path.display()
        )));
    }
    Ok(bytes)
}
