//! Offline log ingestion, item catalog, chronological split and reward scorer.

mod ingest;
mod manifest;
mod scorer;
mod snapshot;
mod split;

use std::collections::HashMap;
use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ingest::{
    filter_min_interactions, load_log, transform_steam_ratings, Ingested, LoadedLog, PlaytimeRecord,
    RowError, Schema,
};
pub use manifest::{prepare_dataset, DatasetManifest, PreparedDataset, ScorerParams};
pub use scorer::{train_scorer, MAX_REWARD, MIN_REWARD, FactorizationScorer, Scorer, TableScorer, TrainParams, TrainingReport};
pub use snapshot::{load_world_snapshot, save_world_snapshot, write_split_index, WorldSnapshot};
pub use split::{chronological_split, chronological_split_indices, DatasetSplit};

/// Category tag given to items that arrive without one.
pub const UNKNOWN_CATEGORY: &str = "unknown";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("duplicate item id `{0}`")]
    DuplicateItem(String),
    #[error("item `{item}` has embedding dimension {got}, catalog dimension is {expected}")]
    DimensionMismatch { item: String, expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("training diverged at epoch {epoch} (rmse is not finite)")]
    Diverged { epoch: usize },
    #[error("invalid snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub title: String,
    pub categories: Vec<String>,
    pub embedding: Vec<f64>,
}

/// One row of an offline interaction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    /// In `[1, 5]`.
    pub rating: f64,
    /// Epoch seconds, strictly positive.
    pub timestamp: i64,
}

/// Title and categories of an item as found in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub title: String,
    pub categories: Vec<String>,
}

/// Immutable item catalog. Items are kept sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemCatalog {
    dim: usize,
    items: Vec<ItemRecord>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl ItemCatalog {
    pub fn new(mut items: Vec<ItemRecord>) -> Result<Self, CatalogError> {
        items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        let dim = items.first().map(|i| i.embedding.len()).unwrap_or(0);
        if !items.is_empty() && dim == 0 {
            return Err(CatalogError::InvalidParameter("embedding dimension must be positive".into()));
        }
        let mut index = HashMap::with_capacity(items.len());
        for (pos, item) in items.iter_mut().enumerate() {
            if item.embedding.len() != dim {
                return Err(CatalogError::DimensionMismatch {
                    item: item.item_id.clone(),
                    expected: dim,
                    got: item.embedding.len(),
                });
            }
            if item.categories.is_empty() {
                item.categories.push(UNKNOWN_CATEGORY.to_string());
            }
            if index.insert(item.item_id.clone(), pos).is_some() {
                return Err(CatalogError::DuplicateItem(item.item_id.clone()));
            }
        }
        Ok(Self { dim, items, index })
    }

    /// Builds a catalog whose embeddings are the scorer's learned item vectors.
    /// Items the scorer has never seen are left out.
    pub fn from_scorer(
        meta: &std::collections::BTreeMap<String, ItemMeta>,
        scorer: &FactorizationScorer,
    ) -> Result<Self, CatalogError> {
        let items = scorer
            .item_ids()
            .map(|id| {
                let m = meta.get(id);
                ItemRecord {
                    item_id: id.to_string(),
                    title: m.map(|m| m.title.clone()).unwrap_or_else(|| id.to_string()),
                    categories: m.map(|m| m.categories.clone()).unwrap_or_default(),
                    embedding: scorer.item_embedding(id).expect("id from scorer").to_vec(),
                }
            })
            .collect();
        Self::new(items)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn get(&self, item_id: &str) -> Option<&ItemRecord> {
        self.position(item_id).map(|p| &self.items[p])
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.position(item_id).is_some()
    }

    fn position(&self, item_id: &str) -> Option<usize> {
        if self.index.len() == self.items.len() {
            self.index.get(item_id).copied()
        } else {
            // index is skipped by serde; fall back to binary search on the sorted ids
            self.items.binary_search_by(|i| i.item_id.as_str().cmp(item_id)).ok()
        }
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.index = self.items.iter().enumerate().map(|(p, i)| (i.item_id.clone(), p)).collect();
    }
}

/// Euclidean distance between two items' catalog embeddings.
pub fn item_distance(catalog: &ItemCatalog, i: &str, j: &str) -> Result<f64, CatalogError> {
    let a = catalog.get(i).ok_or_else(|| CatalogError::UnknownItem(i.to_string()))?;
    let b = catalog.get(j).ok_or_else(|| CatalogError::UnknownItem(j.to_string()))?;
    Ok(l2_distance(&a.embedding, &b.embedding))
}

pub(crate) fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
