//! Seeded, reproducible experiment manifests.
//!
//! A manifest is a structured key-value TOML file describing a dataset/run:
//! solver parameters, sensor configuration, splits and training
//! hyperparameters. Every CLI run writes its fully resolved manifest into the
//! output directory so the run can be reproduced byte-for-byte.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::swe::SWEScenario;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitSpec {
    pub train_count: usize,
    pub test_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SensorSpec {
    /// k distinct cells drawn uniformly per timestep.
    Random { k: usize },
    /// Near-square lattice of `base_count` sensors, jittered per timestep by
    /// integer offsets in [-jitter, jitter]^2.
    Jittered { base_count: usize, jitter: i64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainingSpec {
    pub s_in: usize,
    pub s_out: usize,
    pub lambda_energy: f64,
    pub n_init: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Stride between successive training window start indices (1 = every window).
    #[serde(default = "default_window_stride")]
    pub window_stride: usize,
    /// Keep every n-th frame of each simulation for training (1 = all frames).
    #[serde(default = "default_frame_stride")]
    pub frame_stride: usize,
}

fn default_window_stride() -> usize {
    1
}
fn default_frame_stride() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelSpec {
    /// Latent size for the CED / latent LSTM family.
    pub latent: usize,
    #[serde(default = "default_lstm_layers")]
    pub lstm_layers: usize,
    #[serde(default = "default_lstm_hidden")]
    pub lstm_hidden: usize,
    #[serde(default = "default_convlstm_layers")]
    pub convlstm_layers: usize,
    #[serde(default = "default_convlstm_filters")]
    pub convlstm_filters: usize,
}

fn default_lstm_layers() -> usize {
    2
}
fn default_lstm_hidden() -> usize {
    256
}
fn default_convlstm_layers() -> usize {
    2
}
fn default_convlstm_filters() -> usize {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceSpec {
    /// Shallow-water simulation parameters for data generation.
    Solver(SWEScenario),
    /// Pre-existing gridded series ingestion.
    Ingestion {
        path: PathBuf,
        #[serde(default)]
        mask_value: Option<f32>,
    },
}

/// Per-simulation record written by dataset generation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimEntry {
    pub path: PathBuf,
    pub seed: u64,
    pub delta_h: f64,
    pub radius: f64,
    pub center: (usize, usize),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentManifest {
    pub seed: u64,
    pub split: SplitSpec,
    pub source: SourceSpec,
    pub sensors: SensorSpec,
    pub model: ModelSpec,
    pub training: TrainingSpec,
    #[serde(default)]
    pub train_sims: Vec<SimEntry>,
    #[serde(default)]
    pub test_sims: Vec<SimEntry>,
}

impl ExperimentManifest {
    pub fn validate(&self, base: Option<&Path>) -> Result<()> {
        let t = &self.training;
        if t.s_in < 1 || t.s_out < 1 {
            return Err(Error::Validation("s_in and s_out must be >= 1".into()));
        }
        if t.lambda_energy < 0.0 {
            return Err(Error::Validation("lambda_energy must be >= 0".into()));
        }
        if t.window_stride < 1 || t.frame_stride < 1 {
            return Err(Error::Validation("strides must be >= 1".into()));
        }
        for entry in self.train_sims.iter().chain(&self.test_sims) {
            let path = resolve(base, &entry.path);
            if !path.exists() {
                return Err(Error::Validation(format!(
                    "referenced dataset path {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::data::write_text(path, &self.to_toml())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self =
            toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        manifest.validate(path.parent())?;
        Ok(manifest)
    }

    /// Applies a `key=value` override using dotted TOML paths
    /// (e.g. `training.epochs=20`).
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            Error::Usage(format!("override {assignment:?} is not key=value"))
        })?;
        let mut doc: toml::Value = toml::Value::try_from(&*self)
            .map_err(|e| Error::Validation(e.to_string()))?;
        let mut cursor = &mut doc;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            cursor = cursor
                .get_mut(part)
                .ok_or_else(|| Error::Usage(format!("unknown manifest key {key:?}")))?;
        }
        let leaf = parts.last().unwrap();
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| Error::Usage(format!("{key:?} is not a table path")))?;
        let parsed = if let Ok(i) = value.parse::<i64>() {
            toml::Value::Integer(i)
        } else if let Ok(f) = value.parse::<f64>() {
            toml::Value::Float(f)
        } else if let Ok(b) = value.parse::<bool>() {
            toml::Value::Boolean(b)
        } else {
            toml::Value::String(value.to_string())
        };
        table.insert(leaf.to_string(), parsed);
        *self = doc
            .try_into()
            .map_err(|e| Error::Usage(format!("override {assignment:?}: {e}")))?;
        Ok(())
    }
}

/// Resolves a manifest-relative path against the manifest's directory.
pub fn resolve(base: Option<&Path>, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        match base {
            Some(b) => b.join(path),
            None => path.to_path_buf(),
        }
    }
}
