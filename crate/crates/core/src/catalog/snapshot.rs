use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CatalogError, FactorizationScorer, ItemCatalog};

const SNAPSHOT_VERSION: u32 = 1;

/// Catalog plus the scorer that produced its embeddings, for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub version: u32,
    pub catalog: ItemCatalog,
    pub scorer: FactorizationScorer,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CatalogError + '_ {
    move |source| CatalogError::Io { path: path.to_path_buf(), source }
}

/// JSON with shortest round-trip float formatting; maps are ordered, so equal
/// snapshots serialize to equal bytes.
pub fn save_world_snapshot(path: &Path, catalog: &ItemCatalog, scorer: &FactorizationScorer) -> Result<(), CatalogError> {
    let snap = WorldSnapshot { version: SNAPSHOT_VERSION, catalog: catalog.clone(), scorer: scorer.clone() };
    let bytes = serde_json::to_vec(&snap).map_err(|e| CatalogError::Snapshot(e.to_string()))?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn load_world_snapshot(path: &Path) -> Result<WorldSnapshot, CatalogError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut snap: WorldSnapshot = serde_json::from_slice(&bytes).map_err(|e| CatalogError::Snapshot(e.to_string()))?;
    if snap.version != SNAPSHOT_VERSION {
        return Err(CatalogError::Snapshot(format!("unsupported version {}", snap.version)));
    }
    snap.catalog.rebuild_index();
    Ok(snap)
}

/// Writes one record index per line.
pub fn write_split_index(path: &Path, indices: &[usize]) -> Result<(), CatalogError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    for i in indices {
        writeln!(f, "{i}").map_err(io_err(path))?;
    }
    Ok(())
}
