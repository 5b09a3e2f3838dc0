use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    chronological_split_indices, filter_min_interactions, load_log, CatalogError, DatasetSplit,
    InteractionRecord, LoadedLog, Schema, TrainParams,
};

/// Dataset manifest: where the log lives, how to read it, and how to filter
/// and split it. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub log: PathBuf,
    pub schema: Schema,
    #[serde(default = "default_min")]
    pub min_user: usize,
    #[serde(default = "default_min")]
    pub min_item: usize,
    #[serde(default)]
    pub split: SplitRule,
    #[serde(default)]
    pub scorer: ScorerParams,
}

fn default_min() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRule {
    #[default]
    Chronological,
}

/// Scorer hyperparameters; the seed comes from the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerParams {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub reg: f64,
}

impl Default for ScorerParams {
    fn default() -> Self {
        let d = TrainParams::default();
        Self { dim: d.dim, epochs: d.epochs, lr: d.lr, reg: d.reg }
    }
}

impl ScorerParams {
    pub fn with_seed(&self, seed: u64) -> TrainParams {
        TrainParams { dim: self.dim, epochs: self.epochs, lr: self.lr, reg: self.reg, seed }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedDataset {
    /// Loaded log with `records` replaced by the filtered records.
    pub log: LoadedLog,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub split: DatasetSplit,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CatalogError::Io { path: path.to_path_buf(), source })?;
        let mut m: Self = toml::from_str(&text).map_err(|e| CatalogError::InvalidParameter(e.to_string()))?;
        if m.log.is_relative() {
            if let Some(dir) = path.parent() {
                m.log = dir.join(&m.log);
            }
        }
        Ok(m)
    }
}

/// Load, transform (for playtime schemas), filter, then split.
pub fn prepare_dataset(manifest: &DatasetManifest) -> Result<PreparedDataset, CatalogError> {
    let mut log = load_log(&manifest.log, manifest.schema)?;
    if !log.malformed.is_empty() {
        log::warn!("{} malformed rows skipped in {}", log.malformed.len(), manifest.log.display());
    }
    let filtered: Vec<InteractionRecord> = filter_min_interactions(&log.records, manifest.min_user, manifest.min_item)?;
    let (train_indices, test_indices) = chronological_split_indices(&filtered);
    let split = DatasetSplit {
        train: train_indices.iter().map(|&i| filtered[i].clone()).collect(),
        test: test_indices.iter().map(|&i| filtered[i].clone()).collect(),
    };
    let kept: std::collections::HashSet<&str> = filtered.iter().map(|r| r.item_id.as_str()).collect();
    log.items.retain(|id, _| kept.contains(id.as_str()));
    log.records = filtered;
    Ok(PreparedDataset { log, train_indices, test_indices, split })
}
