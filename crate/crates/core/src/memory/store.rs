use serde::{Deserialize, Serialize};

use super::{MemoryError, TextEncoder};
use crate::parallel::{map_slice, Execution};

/// Below this many entries a scan runs sequentially regardless of mode.
const PARALLEL_MIN_ENTRIES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreKind {
    Planner,
    Actor,
    Critic,
}

impl StoreKind {
    pub fn name(self) -> &'static str {
        match self {
            StoreKind::Planner => "planner",
            StoreKind::Actor => "actor",
            StoreKind::Critic => "critic",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            StoreKind::Planner => 0,
            StoreKind::Actor => 1,
            StoreKind::Critic => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(StoreKind::Planner),
            1 => Some(StoreKind::Actor),
            2 => Some(StoreKind::Critic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Reflection { text: String },
    ActorExp { state_digest: String, action_item_id: String, advantage_v: u8 },
    CriticExp { state_digest: String, value: f64 },
}

impl Payload {
    pub fn kind(&self) -> StoreKind {
        match self {
            Payload::Reflection { .. } => StoreKind::Planner,
            Payload::ActorExp { .. } => StoreKind::Actor,
            Payload::CriticExp { .. } => StoreKind::Critic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub key_text: String,
    pub payload: Payload,
    pub key_vec: Vec<f64>,
    pub insert_seq: u64,
}

/// A retrieval result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<'a> {
    pub entry: &'a MemoryEntry,
    pub distance: f64,
}

/// Append-only store with exact Euclidean search. Results are ordered by
/// ascending distance, then by insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    kind: StoreKind,
    dim: usize,
    entries: Vec<MemoryEntry>,
}

impl VectorStore {
    pub fn new(kind: StoreKind, dim: usize) -> Self {
        assert!(dim > 0, "store dimension must be positive");
        Self { kind, dim, entries: Vec::new() }
    }

    pub(crate) fn from_parts(kind: StoreKind, dim: usize, entries: Vec<MemoryEntry>) -> Self {
        Self { kind, dim, entries }
    }

    pub fn kind(&self) -> StoreKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    /// Appends an entry keyed by `key_vec`; returns its insertion sequence number.
    pub fn insert(&mut self, key_text: &str, key_vec: Vec<f64>, payload: Payload) -> Result<u64, MemoryError> {
        if key_vec.len() != self.dim {
            return Err(MemoryError::DimensionMismatch { expected: self.dim, got: key_vec.len() });
        }
        if payload.kind() != self.kind {
            return Err(MemoryError::KindMismatch { store: self.kind.name(), payload: payload.kind().name() });
        }
        if let Payload::ActorExp { advantage_v, .. } = &payload {
            if *advantage_v > 1 {
                return Err(MemoryError::InvalidAdvantage(*advantage_v));
            }
        }
        let insert_seq = self.entries.last().map_or(0, |e| e.insert_seq + 1);
        self.entries.push(MemoryEntry { key_text: key_text.to_string(), payload, key_vec, insert_seq });
        Ok(insert_seq)
    }

    /// Embeds `key_text` with `encoder` and appends.
    pub fn insert_text(&mut self, encoder: &dyn TextEncoder, key_text: &str, payload: Payload) -> Result<u64, MemoryError> {
        let v = encoder.embed(key_text)?;
        self.insert(key_text, v, payload)
    }

    fn default_exec(&self) -> Execution {
        if self.entries.len() >= PARALLEL_MIN_ENTRIES { Execution::Parallel } else { Execution::Sequential }
    }

    fn scored(&self, exec: Execution, query: &[f64]) -> Result<Vec<Hit<'_>>, MemoryError> {
        if query.len() != self.dim {
            return Err(MemoryError::DimensionMismatch { expected: self.dim, got: query.len() });
        }
        let distances = map_slice(exec, &self.entries, |e| crate::catalog::l2_distance(query, &e.key_vec));
        Ok(self.entries.iter().zip(distances).map(|(entry, distance)| Hit { entry, distance }).collect())
    }

    /// The `k` nearest entries to `query`.
    pub fn retrieve_topk(&self, query: &[f64], k: usize) -> Result<Vec<Hit<'_>>, MemoryError> {
        self.retrieve_topk_with(self.default_exec(), query, k)
    }

    pub fn retrieve_topk_with(&self, exec: Execution, query: &[f64], k: usize) -> Result<Vec<Hit<'_>>, MemoryError> {
        let mut hits = self.scored(exec, query)?;
        if k < hits.len() {
            if k == 0 {
                return Ok(Vec::new());
            }
            hits.select_nth_unstable_by(k - 1, hit_order);
            hits.truncate(k);
        }
        hits.sort_unstable_by(hit_order);
        Ok(hits)
    }

    /// Every entry strictly closer than `tau` to `query`.
    pub fn retrieve_threshold(&self, query: &[f64], tau: f64) -> Result<Vec<Hit<'_>>, MemoryError> {
        self.retrieve_threshold_with(self.default_exec(), query, tau)
    }

    pub fn retrieve_threshold_with(&self, exec: Execution, query: &[f64], tau: f64) -> Result<Vec<Hit<'_>>, MemoryError> {
        if !(tau >= 0.0) {
            return Err(MemoryError::InvalidThreshold(tau));
        }
        let mut hits: Vec<_> = self.scored(exec, query)?.into_iter().filter(|h| h.distance < tau).collect();
        hits.sort_unstable_by(hit_order);
        Ok(hits)
    }

    pub fn retrieve_topk_text(&self, encoder: &dyn TextEncoder, query: &str, k: usize) -> Result<Vec<Hit<'_>>, MemoryError> {
        self.retrieve_topk(&encoder.embed(query)?, k)
    }

    pub fn retrieve_threshold_text(
        &self,
        encoder: &dyn TextEncoder,
        query: &str,
        tau: f64,
    ) -> Result<Vec<Hit<'_>>, MemoryError> {
        self.retrieve_threshold(&encoder.embed(query)?, tau)
    }
}

fn hit_order(a: &Hit<'_>, b: &Hit<'_>) -> std::cmp::Ordering {
    a.distance.total_cmp(&b.distance).then(a.entry.insert_seq.cmp(&b.entry.insert_seq))
}
