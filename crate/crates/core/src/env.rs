//! Simulated user environment with the filter-bubble quit mechanism.
//!
//! An episode ends after the step on which any of these holds, checked in
//! this order: the recommended item lies closer than `beta` to one of the
//! last `window` recommendations, the reward is below `reward_floor`, or the
//! round limit is reached.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{item_distance, CatalogError, InteractionRecord, ItemCatalog, Scorer};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("user `{user}` has {have} logged interactions, warm start needs {need}")]
    InsufficientHistory { user: String, have: usize, need: usize },
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Scorer(#[from] CatalogError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// How many recent recommendations the similarity check looks at.
    pub window: usize,
    /// Distance threshold in scorer-embedding space.
    pub beta: f64,
    pub reward_floor: f64,
    pub max_rounds: usize,
    /// Remove already-recommended items from the candidate pool.
    pub exclude_repeats: bool,
    pub which_split: SplitKind,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            window: 4,
            beta: 0.0,
            reward_floor: 2.0,
            max_rounds: 100,
            exclude_repeats: true,
            which_split: SplitKind::Train,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.window == 0 {
            return Err(EnvError::InvalidConfig("window must be >= 1".into()));
        }
        if self.max_rounds == 0 {
            return Err(EnvError::InvalidConfig("max_rounds must be >= 1".into()));
        }
        if !(self.beta >= 0.0) || !self.reward_floor.is_finite() {
            return Err(EnvError::InvalidConfig("beta must be >= 0 and reward_floor finite".into()));
        }
        Ok(())
    }

    /// Largest episode value: every round at the maximum reward.
    pub fn max_value(&self) -> f64 {
        self.max_rounds as f64 * crate::catalog::MAX_REWARD
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consumed {
    pub item_id: String,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub user_id: String,
    /// Items recommended so far in this episode, oldest first.
    pub history: Vec<Consumed>,
    /// Always `history.len() + 1`.
    pub step_index: usize,
    /// Latest logged items describing the user before the episode, oldest first.
    pub warm_start: Vec<String>,
    pub done: bool,
}

impl State {
    /// Short stable hash of the state's content.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.user_id.as_bytes());
        for w in &self.warm_start {
            h.update([0u8]);
            h.update(w.as_bytes());
        }
        for c in &self.history {
            h.update([1u8]);
            h.update(c.item_id.as_bytes());
            h.update(c.reward.to_bits().to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn recommended(&self) -> impl Iterator<Item = &str> {
        self.history.iter().map(|c| c.item_id.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuitReason {
    #[default]
    None,
    SimilarityQuit,
    LowRewardQuit,
    MaxRounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub next_state: State,
    pub done: bool,
    pub quit_reason: QuitReason,
}

/// Chronological logged items per user, used for warm starts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserHistories {
    by_user: BTreeMap<String, Vec<String>>,
}

impl UserHistories {
    pub fn from_records(records: &[InteractionRecord]) -> Self {
        let mut tmp: BTreeMap<String, Vec<(i64, usize, String)>> = BTreeMap::new();
        for (pos, r) in records.iter().enumerate() {
            tmp.entry(r.user_id.clone()).or_default().push((r.timestamp, pos, r.item_id.clone()));
        }
        let by_user = tmp
            .into_iter()
            .map(|(u, mut v)| {
                v.sort();
                (u, v.into_iter().map(|(_, _, i)| i).collect())
            })
            .collect();
        Self { by_user }
    }

    pub fn insert(&mut self, user: impl Into<String>, items: Vec<String>) {
        self.by_user.insert(user.into(), items);
    }

    pub fn get(&self, user: &str) -> Option<&[String]> {
        self.by_user.get(user).map(Vec::as_slice)
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.by_user.keys().map(String::as_str)
    }
}

/// Shared, immutable simulated environment for one split. Each episode is a
/// sequence of [`State`] values threaded through [`Environment::step`].
#[derive(Debug, Clone)]
pub struct Environment {
    catalog: Arc<ItemCatalog>,
    scorer: Arc<dyn Scorer>,
    histories: Arc<UserHistories>,
    config: EnvConfig,
}

impl Environment {
    pub fn new(
        catalog: Arc<ItemCatalog>,
        scorer: Arc<dyn Scorer>,
        histories: Arc<UserHistories>,
        config: EnvConfig,
    ) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self { catalog, scorer, histories, config })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Arc<ItemCatalog> {
        &self.catalog
    }

    pub fn histories(&self) -> &UserHistories {
        &self.histories
    }

    /// Same environment with a different config (shares catalog and scorer).
    pub fn with_config(&self, config: EnvConfig) -> Result<Self, EnvError> {
        Self::new(self.catalog.clone(), self.scorer.clone(), self.histories.clone(), config)
    }

    /// Users with at least `warm_start_len` logged items.
    pub fn eligible_users(&self, warm_start_len: usize) -> Vec<String> {
        self.histories
            .by_user
            .iter()
            .filter(|(_, v)| v.len() >= warm_start_len)
            .map(|(u, _)| u.clone())
            .collect()
    }

    /// Fresh episode whose warm start is the user's last `warm_start_len` logged items.
    pub fn reset(&self, user_id: &str, warm_start_len: usize) -> Result<State, EnvError> {
        let logged = self.histories.get(user_id).ok_or_else(|| EnvError::UnknownUser(user_id.to_string()))?;
        if logged.len() < warm_start_len {
            return Err(EnvError::InsufficientHistory {
                user: user_id.to_string(),
                have: logged.len(),
                need: warm_start_len,
            });
        }
        Ok(State {
            user_id: user_id.to_string(),
            history: Vec::new(),
            step_index: 1,
            warm_start: logged[logged.len() - warm_start_len..].to_vec(),
            done: false,
        })
    }

    pub fn reward(&self, user_id: &str, item_id: &str) -> Result<f64, EnvError> {
        Ok(self.scorer.score(user_id, item_id)?)
    }

    pub fn step(&self, state: &State, action: &str) -> Result<StepOutcome, EnvError> {
        if state.done {
            return Err(EnvError::EpisodeFinished);
        }
        if !self.catalog.contains(action) {
            return Err(EnvError::UnknownItem(action.to_string()));
        }
        let reward = self.scorer.score(&state.user_id, action)?;
        let window_start = state.history.len().saturating_sub(self.config.window);
        let mut min_distance = f64::INFINITY;
        for c in &state.history[window_start..] {
            min_distance = min_distance.min(item_distance(&self.catalog, action, &c.item_id)?);
        }

        let quit_reason = if min_distance < self.config.beta {
            QuitReason::SimilarityQuit
        } else if reward < self.config.reward_floor {
            QuitReason::LowRewardQuit
        } else if state.step_index >= self.config.max_rounds {
            QuitReason::MaxRounds
        } else {
            QuitReason::None
        };
        let done = quit_reason != QuitReason::None;

        let mut next_state = state.clone();
        next_state.history.push(Consumed { item_id: action.to_string(), reward });
        next_state.step_index += 1;
        next_state.done = done;
        Ok(StepOutcome { reward, next_state, done, quit_reason })
    }

    /// Candidate pool for the next action, in catalog (id) order.
    pub fn legal_items(&self, state: &State) -> Vec<String> {
        let taken: BTreeSet<&str> =
            if self.config.exclude_repeats { state.recommended().collect() } else { BTreeSet::new() };
        self.catalog
            .items()
            .iter()
            .map(|i| i.item_id.as_str())
            .filter(|id| !taken.contains(id))
            .map(String::from)
            .collect()
    }
}

/// `p`-th percentile (0..=100) of pairwise item distances; a per-catalog way to
/// pick `beta` since raw distances depend on the scorer.
pub fn calibrate_beta(catalog: &ItemCatalog, percentile: f64) -> Result<f64, EnvError> {
    if !(0.0..=100.0).contains(&percentile) {
        return Err(EnvError::InvalidConfig(format!("percentile {percentile} outside [0, 100]")));
    }
    let items = catalog.items();
    let mut d = Vec::with_capacity(items.len() * items.len().saturating_sub(1) / 2);
    for (a, ia) in items.iter().enumerate() {
        for ib in &items[a + 1..] {
            d.push(crate::catalog::l2_distance(&ia.embedding, &ib.embedding));
        }
    }
    if d.is_empty() {
        return Ok(0.0);
    }
    d.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * (d.len() - 1) as f64).round() as usize;
    Ok(d[rank])
}

/// One line of the JSON-lines trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub episode: usize,
    pub user_id: String,
    pub step_index: usize,
    pub state_digest: String,
    pub thought: String,
    pub raw_action: String,
    pub action: String,
    pub reward: f64,
    pub done: bool,
    pub quit_reason: QuitReason,
}

pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, rows: &[T]) -> io::Result<()> {
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
