use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CatalogError, InteractionRecord};

pub const MIN_REWARD: f64 = 1.0;
pub const MAX_REWARD: f64 = 5.0;

/// Reward model behind a simulated user. Implementations are immutable after
/// construction and shared across episode workers.
pub trait Scorer: Send + Sync + fmt::Debug {
    /// Reward for showing `item_id` to `user_id`, clamped to `[1, 5]`.
    fn score(&self, user_id: &str, item_id: &str) -> Result<f64, CatalogError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub reg: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { dim: 16, epochs: 60, lr: 0.01, reg: 0.02, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Entry 0 is the RMSE before the first epoch.
    pub rmse_per_epoch: Vec<f64>,
    /// Epochs whose update raised the RMSE and were rolled back with a halved step.
    pub rejected_epochs: usize,
    pub final_lr: f64,
}

/// Biased matrix factorization: `mu + b_u + b_i + <p_u, q_i>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationScorer {
    dim: usize,
    global_bias: f64,
    user_index: BTreeMap<String, usize>,
    item_index: BTreeMap<String, usize>,
    user_bias: Vec<f64>,
    item_bias: Vec<f64>,
    /// Row-major, `dim` values per user.
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
}

impl FactorizationScorer {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.item_index.keys().map(String::as_str)
    }

    pub fn user_ids(&self) -> impl Iterator<Item = &str> {
        self.user_index.keys().map(String::as_str)
    }

    pub fn item_embedding(&self, item_id: &str) -> Option<&[f64]> {
        let i = *self.item_index.get(item_id)?;
        Some(&self.item_factors[i * self.dim..(i + 1) * self.dim])
    }

    pub fn user_embedding(&self, user_id: &str) -> Option<&[f64]> {
        let u = *self.user_index.get(user_id)?;
        Some(&self.user_factors[u * self.dim..(u + 1) * self.dim])
    }

    fn params_finite(&self) -> bool {
        self.global_bias.is_finite()
            && [&self.user_bias, &self.item_bias, &self.user_factors, &self.item_factors]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }

    fn raw(&self, u: usize, i: usize) -> f64 {
        let d = self.dim;
        let dot: f64 = self.user_factors[u * d..(u + 1) * d]
            .iter()
            .zip(&self.item_factors[i * d..(i + 1) * d])
            .map(|(a, b)| a * b)
            .sum();
        self.global_bias + self.user_bias[u] + self.item_bias[i] + dot
    }
}

impl Scorer for FactorizationScorer {
    fn score(&self, user_id: &str, item_id: &str) -> Result<f64, CatalogError> {
        let u = *self.user_index.get(user_id).ok_or_else(|| CatalogError::UnknownUser(user_id.to_string()))?;
        let i = *self.item_index.get(item_id).ok_or_else(|| CatalogError::UnknownItem(item_id.to_string()))?;
        Ok(self.raw(u, i).clamp(MIN_REWARD, MAX_REWARD))
    }
}

/// Trains a [`FactorizationScorer`] by SGD over shuffled records.
///
/// After each epoch the clamped training RMSE is measured. An epoch that
/// raises it is rolled back and the step size halved, so the reported RMSE
/// sequence never increases. A non-finite RMSE aborts training.
pub fn train_scorer(
    records: &[InteractionRecord],
    params: &TrainParams,
) -> Result<(FactorizationScorer, TrainingReport), CatalogError> {
    if records.is_empty() {
        return Err(CatalogError::EmptyTrainingSet);
    }
    if params.dim == 0 {
        return Err(CatalogError::InvalidParameter("dim must be >= 1".into()));
    }
    if !(params.lr > 0.0 && params.lr.is_finite()) || !(params.reg >= 0.0) {
        return Err(CatalogError::InvalidParameter("lr must be positive and reg non-negative".into()));
    }

    let mut user_index = BTreeMap::new();
    let mut item_index = BTreeMap::new();
    for r in records {
        user_index.entry(r.user_id.clone()).or_insert(0);
        item_index.entry(r.item_id.clone()).or_insert(0);
    }
    for (pos, v) in user_index.values_mut().enumerate() {
        *v = pos;
    }
    for (pos, v) in item_index.values_mut().enumerate() {
        *v = pos;
    }
    let triples: Vec<(usize, usize, f64)> =
        records.iter().map(|r| (user_index[&r.user_id], item_index[&r.item_id], r.rating)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let init = Normal::new(0.0, 0.1).expect("valid normal");
    let d = params.dim;
    let mut model = FactorizationScorer {
        dim: d,
        global_bias: triples.iter().map(|t| t.2).sum::<f64>() / triples.len() as f64,
        user_bias: vec![0.0; user_index.len()],
        item_bias: vec![0.0; item_index.len()],
        user_factors: (0..user_index.len() * d).map(|_| init.sample(&mut rng)).collect(),
        item_factors: (0..item_index.len() * d).map(|_| init.sample(&mut rng)).collect(),
        user_index,
        item_index,
    };

    let rmse = |m: &FactorizationScorer| -> f64 {
        let sse: f64 = triples
            .iter()
            .map(|&(u, i, r)| {
                let e = m.raw(u, i).clamp(MIN_REWARD, MAX_REWARD) - r;
                e * e
            })
            .sum();
        (sse / triples.len() as f64).sqrt()
    };

    let mut lr = params.lr;
    let mut history = vec![rmse(&model)];
    let mut rejected = 0;
    let mut order: Vec<usize> = (0..triples.len()).collect();
    for epoch in 1..=params.epochs {
        let backup = model.clone();
        order.shuffle(&mut rng);
        for &k in &order {
            let (u, i, r) = triples[k];
            let err = r - model.raw(u, i);
            model.user_bias[u] += lr * (err - params.reg * model.user_bias[u]);
            model.item_bias[i] += lr * (err - params.reg * model.item_bias[i]);
            for f in 0..d {
                let p = model.user_factors[u * d + f];
                let q = model.item_factors[i * d + f];
                model.user_factors[u * d + f] += lr * (err * q - params.reg * p);
                model.item_factors[i * d + f] += lr * (err * p - params.reg * q);
            }
        }
        let current = rmse(&model);
        // clamping hides overflow, so check the parameters too
        if !current.is_finite() || !model.params_finite() {
            return Err(CatalogError::Diverged { epoch });
        }
        let prev = *history.last().expect("non-empty");
        if current > prev {
            model = backup;
            lr *= 0.5;
            rejected += 1;
            history.push(prev);
        } else {
            history.push(current);
        }
    }
    Ok((model, TrainingReport { rmse_per_epoch: history, rejected_epochs: rejected, final_lr: lr }))
}

/// Scorer backed by explicit reward tables, for hand-built environments.
/// Pair entries take precedence over per-item entries.
#[derive(Debug, Clone, Default)]
pub struct TableScorer {
    users: std::collections::BTreeSet<String>,
    per_pair: HashMap<(String, String), f64>,
    per_item: HashMap<String, f64>,
}

impl TableScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_user(mut self, user: impl Into<String>) -> Self {
        self.users.insert(user.into());
        self
    }

    pub fn with_item_reward(mut self, item: impl Into<String>, reward: f64) -> Self {
        self.per_item.insert(item.into(), reward);
        self
    }

    pub fn with_pair_reward(mut self, user: impl Into<String>, item: impl Into<String>, reward: f64) -> Self {
        let user = user.into();
        self.users.insert(user.clone());
        self.per_pair.insert((user, item.into()), reward);
        self
    }
}

impl Scorer for TableScorer {
    fn score(&self, user_id: &str, item_id: &str) -> Result<f64, CatalogError> {
        if !self.users.contains(user_id) {
            return Err(CatalogError::UnknownUser(user_id.to_string()));
        }
        let r = self
            .per_pair
            .get(&(user_id.to_string(), item_id.to_string()))
            .or_else(|| self.per_item.get(item_id))
            .ok_or_else(|| CatalogError::UnknownItem(item_id.to_string()))?;
        Ok(r.clamp(MIN_REWARD, MAX_REWARD))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rec(u: impl Into<String>, i: impl Into<String>, r: f64) -> InteractionRecord {
        InteractionRecord { user_id: u.into(), item_id: i.into(), rating: r, timestamp: 1 }
    }

    fn assert_monotone(report: &TrainingReport) {
        for w in report.rmse_per_epoch.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "rmse increased: {:?}", w);
        }
    }

    #[test]
    fn constant_ratings_fit_to_five() {
        let log: Vec<_> = (0..6).flat_map(|u| (0..6).map(move |i| rec(format!("u{u}"), format!("i{i}"), 5.0))).collect();
        let (m, report) = train_scorer(&log, &TrainParams { dim: 4, epochs: 30, ..Default::default() }).unwrap();
        assert_monotone(&report);
        for r in &log {
            let s = m.score(&r.user_id, &r.item_id).unwrap();
            assert!((s - 5.0).abs() <= 0.1, "{s}");
        }
    }

    /// Generates ratings from known rank-1 factors in [1, 2.2] so the product
    /// stays inside [1, 5] and needs no clamping.
    fn rank_one_log(seed: u64) -> (Vec<InteractionRecord>, Vec<InteractionRecord>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let us: Vec<f64> = (0..30).map(|_| rng.random_range(1.0..2.2)).collect();
        let is: Vec<f64> = (0..30).map(|_| rng.random_range(1.0..2.2)).collect();
        let (mut train, mut held) = (Vec::new(), Vec::new());
        for (u, eu) in us.iter().enumerate() {
            for (i, ei) in is.iter().enumerate() {
                let r = rec(format!("u{u}"), format!("i{i}"), (eu * ei).clamp(1.0, 5.0));
                if rng.random_bool(0.8) { train.push(r) } else { held.push(r) }
            }
        }
        (train, held)
    }

    #[test]
    fn rank_one_recovery() {
        let (train, held) = rank_one_log(11);
        let params = TrainParams { dim: 1, epochs: 200, lr: 0.02, reg: 0.001, seed: 3 };
        let (m, report) = train_scorer(&train, &params).unwrap();
        assert_monotone(&report);
        let sse: f64 = held.iter().map(|r| (m.score(&r.user_id, &r.item_id).unwrap() - r.rating).powi(2)).sum();
        let rmse = (sse / held.len() as f64).sqrt();
        assert!(rmse < 0.2, "held-out rmse {rmse}");
    }

    #[test]
    fn disjoint_groups_separate() {
        let mut log = Vec::new();
        for u in 0..5 {
            for i in 0..5 {
                log.push(rec(format!("a{u}"), format!("x{i}"), 5.0));
                log.push(rec(format!("a{u}"), format!("y{i}"), 2.0));
                log.push(rec(format!("b{u}"), format!("y{i}"), 5.0));
                log.push(rec(format!("b{u}"), format!("x{i}"), 2.0));
            }
        }
        let (m, _) = train_scorer(&log, &TrainParams { dim: 4, epochs: 100, lr: 0.03, ..Default::default() }).unwrap();
        for u in 0..5 {
            for i in 0..5 {
                for j in 0..5 {
                    let same = m.score(&format!("a{u}"), &format!("x{i}")).unwrap();
                    let cross = m.score(&format!("a{u}"), &format!("y{j}")).unwrap();
                    assert!(cross < same);
                    let same = m.score(&format!("b{u}"), &format!("y{i}")).unwrap();
                    let cross = m.score(&format!("b{u}"), &format!("x{j}")).unwrap();
                    assert!(cross < same);
                }
            }
        }
        assert!(m.score("a0", "x0").unwrap() >= 4.0);
    }

    #[test]
    fn errors_and_determinism() {
        let log = vec![rec("u", "i", 4.0), rec("u", "j", 2.0), rec("v", "i", 3.0)];
        let p = TrainParams { dim: 2, epochs: 10, ..Default::default() };
        let (a, _) = train_scorer(&log, &p).unwrap();
        let (b, _) = train_scorer(&log, &p).unwrap();
        for (u, i) in [("u", "i"), ("u", "j"), ("v", "i"), ("v", "j")] {
            assert_eq!(a.score(u, i).unwrap().to_bits(), b.score(u, i).unwrap().to_bits());
            assert_eq!(a.score(u, i).unwrap().to_bits(), a.score(u, i).unwrap().to_bits());
        }
        assert!(matches!(a.score("u", "zz"), Err(CatalogError::UnknownItem(_))));
        assert!(matches!(a.score("zz", "i"), Err(CatalogError::UnknownUser(_))));
        assert!(matches!(train_scorer(&[], &p), Err(CatalogError::EmptyTrainingSet)));
        assert!(train_scorer(&log, &TrainParams { dim: 0, ..p }).is_err());
    }

    #[test]
    fn huge_step_is_rolled_back_not_divergent() {
        let log: Vec<_> = (0..4).flat_map(|u| (0..4).map(move |i| rec(format!("u{u}"), format!("i{i}"), 1.0 + ((u * i) % 5) as f64))).collect();
        let (_, report) = train_scorer(&log, &TrainParams { dim: 3, epochs: 20, lr: 5.0, reg: 0.0, seed: 1 }).unwrap();
        assert!(report.rejected_epochs > 0);
        assert_monotone(&report);
    }

    #[test]
    fn overflow_reports_epoch() {
        let log = vec![rec("u", "i", 5.0), rec("u", "j", 1.0)];
        let err = train_scorer(&log, &TrainParams { dim: 1, epochs: 3, lr: 1e300, reg: 0.0, seed: 0 }).unwrap_err();
        assert!(matches!(err, CatalogError::Diverged { epoch: 1 }), "{err}");
    }

    #[test]
    fn table_scorer_lookup_order() {
        let s = TableScorer::new().with_user("u").with_item_reward("i", 9.0).with_pair_reward("u", "i", 2.5);
        assert_eq!(s.score("u", "i").unwrap(), 2.5);
        let s = TableScorer::new().with_user("u").with_item_reward("i", 9.0);
        assert_eq!(s.score("u", "i").unwrap(), 5.0);
        assert!(s.score("w", "i").is_err());
    }
}
