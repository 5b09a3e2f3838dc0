//! Embedding-keyed experience stores with exact top-K and threshold retrieval.

mod encoder;
mod snapshot;
mod store;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use encoder::{normalize_text, HashingEncoder, TextEncoder, DEFAULT_DIM};
pub use store::{Hit, MemoryEntry, Payload, StoreKind, VectorStore};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("vector dimension {got} does not match store dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{payload} payload cannot go into a {store} store")]
    KindMismatch { store: &'static str, payload: &'static str },
    #[error("advantage flag must be 0 or 1, got {0}")]
    InvalidAdvantage(u8),
    #[error("threshold must be a non-negative number, got {0}")]
    InvalidThreshold(f64),
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
}

/// The three stores an agent learns into.
#[derive(Debug, Clone, PartialEq)]
pub struct Memories {
    pub planner: VectorStore,
    pub actor: VectorStore,
    pub critic: VectorStore,
}

const FILES: [(&str, StoreKind); 3] =
    [("planner.mem", StoreKind::Planner), ("actor.mem", StoreKind::Actor), ("critic.mem", StoreKind::Critic)];

impl Memories {
    pub fn new(dim: usize) -> Self {
        Self {
            planner: VectorStore::new(StoreKind::Planner, dim),
            actor: VectorStore::new(StoreKind::Actor, dim),
            critic: VectorStore::new(StoreKind::Critic, dim),
        }
    }

    pub fn store(&self, kind: StoreKind) -> &VectorStore {
        match kind {
            StoreKind::Planner => &self.planner,
            StoreKind::Actor => &self.actor,
            StoreKind::Critic => &self.critic,
        }
    }

    /// Writes `planner.mem`, `actor.mem` and `critic.mem` into `dir`.
    pub fn snapshot_dir(&self, dir: &Path) -> Result<(), MemoryError> {
        std::fs::create_dir_all(dir).map_err(|source| MemoryError::Io { path: dir.to_path_buf(), source })?;
        for (name, kind) in FILES {
            self.store(kind).snapshot(&dir.join(name))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self, MemoryError> {
        let planner = VectorStore::load(&dir.join(FILES[0].0))?;
        let actor = VectorStore::load(&dir.join(FILES[1].0))?;
        let critic = VectorStore::load(&dir.join(FILES[2].0))?;
        for (s, (_, kind)) in [&planner, &actor, &critic].into_iter().zip(FILES) {
            if s.kind() != kind {
                return Err(MemoryError::Corrupt(format!("expected a {} store", kind.name())));
            }
        }
        Ok(Self { planner, actor, critic })
    }

    /// Hex SHA-256 of each store's snapshot bytes, in planner/actor/critic order.
    pub fn content_hashes(&self) -> [String; 3] {
        [self.planner.content_hash(), self.actor.content_hash(), self.critic.content_hash()]
    }
}
