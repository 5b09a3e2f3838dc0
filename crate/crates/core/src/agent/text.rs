//! Deterministic text views of states, the category tool and item grounding.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::catalog::{l2_distance, ItemCatalog};
use crate::env::{QuitReason, State};
use crate::memory::{MemoryError, TextEncoder};
use crate::parallel::{map_slice, Execution};

fn title<'a>(catalog: &'a ItemCatalog, id: &'a str) -> &'a str {
    catalog.get(id).map_or(id, |r| r.title.as_str())
}

/// `User <id> | recent: <title (cats)>; ... | episode: <title, reward>; ...`,
/// most recent last. This string is the retrieval key for every memory.
pub fn render_state(catalog: &ItemCatalog, state: &State) -> String {
    let mut out = format!("User {} | recent: ", state.user_id);
    if state.warm_start.is_empty() {
        out.push_str("none");
    }
    for (i, id) in state.warm_start.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        match catalog.get(id) {
            Some(r) => {
                let _ = write!(out, "{} ({})", r.title, r.categories.join(", "));
            }
            None => out.push_str(id),
        }
    }
    out.push_str(" | episode: ");
    if state.history.is_empty() {
        out.push_str("none");
    }
    for (i, c) in state.history.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        let _ = write!(out, "{}, {:.2}", title(catalog, &c.item_id), c.reward);
    }
    out
}

/// What the agent sees after a step.
pub fn render_observation(reward: f64, quit: QuitReason) -> String {
    match quit {
        QuitReason::None => format!("reward {reward:.2}"),
        QuitReason::SimilarityQuit => format!("reward {reward:.2}; the user left, tired of similar items"),
        QuitReason::LowRewardQuit => format!("reward {reward:.2}; the user left, disliking the item"),
        QuitReason::MaxRounds => format!("reward {reward:.2}; session reached the round limit"),
    }
}

fn ranked(counts: BTreeMap<&str, usize>) -> Vec<(&str, usize)> {
    let mut v: Vec<_> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v
}

/// Category counts over the warm start and the episode so far (descending
/// count, then name), followed by the `top_m` most common categories among
/// the legal candidates.
pub fn analyze_categories(catalog: &ItemCatalog, state: &State, legal: &[String], top_m: usize) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for id in state.warm_start.iter().chain(state.history.iter().map(|c| &c.item_id)) {
        if let Some(r) = catalog.get(id) {
            for c in &r.categories {
                *counts.entry(c.as_str()).or_default() += 1;
            }
        }
    }
    let mut out = if counts.is_empty() {
        "no history".to_string()
    } else {
        ranked(counts).iter().map(|(c, n)| format!("{c}: {n}")).collect::<Vec<_>>().join(", ")
    };
    if top_m > 0 {
        let mut pool: BTreeMap<&str, usize> = BTreeMap::new();
        for id in legal {
            if let Some(r) = catalog.get(id) {
                for c in &r.categories {
                    *pool.entry(c.as_str()).or_default() += 1;
                }
            }
        }
        let top: Vec<&str> = ranked(pool).into_iter().take(top_m).map(|(c, _)| c).collect();
        if !top.is_empty() {
            let _ = write!(out, " | candidate categories: {}", top.join(", "));
        }
    }
    out
}

/// Item title embeddings used to map free-text actions onto catalog items.
#[derive(Debug, Clone)]
pub struct GroundingIndex {
    encoder: Arc<dyn TextEncoder>,
    vectors: BTreeMap<String, Vec<f64>>,
}

/// Legal sets at least this large are scanned in parallel.
const PARALLEL_SCAN: usize = 2048;

impl GroundingIndex {
    pub fn build(catalog: &ItemCatalog, encoder: Arc<dyn TextEncoder>) -> Result<Self, MemoryError> {
        let mut vectors = BTreeMap::new();
        for r in catalog.items() {
            let text = if r.title.trim().is_empty() { r.item_id.as_str() } else { r.title.as_str() };
            vectors.insert(r.item_id.clone(), encoder.embed(text)?);
        }
        Ok(Self { encoder, vectors })
    }

    pub fn encoder(&self) -> &Arc<dyn TextEncoder> {
        &self.encoder
    }

    /// Nearest legal item to `raw`; ties go to the smaller id. `None` when
    /// no legal item is indexed.
    pub fn ground(&self, exec: Execution, raw: &str, legal: &[String]) -> Result<Option<(String, f64)>, MemoryError> {
        let q = self.encoder.embed(raw)?;
        let exec = if legal.len() >= PARALLEL_SCAN { exec } else { Execution::Sequential };
        let dists = map_slice(exec, legal, |id| self.vectors.get(id).map(|v| l2_distance(&q, v)));
        let mut best: Option<(&String, f64)> = None;
        for (id, d) in legal.iter().zip(dists) {
            let Some(d) = d else { continue };
            best = match best {
                Some((bid, bd)) if bd < d || (bd == d && bid <= id) => Some((bid, bd)),
                _ => Some((id, d)),
            };
        }
        Ok(best.map(|(id, d)| (id.clone(), d)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ItemRecord;
    use crate::env::Consumed;
    use crate::memory::HashingEncoder;
    use proptest::prelude::*;

    fn catalog() -> ItemCatalog {
        let rows = [
            ("g1", "Half-Life 2", "Action"),
            ("g2", "Portal", "Puzzle"),
            ("g3", "Stardew Valley", "RPG"),
            ("g4", "Baldur's Gate", "RPG"),
            ("g5", "Diablo", "RPG"),
            ("g6", "Doom", "Action"),
        ];
        ItemCatalog::new(
            rows.iter()
                .enumerate()
                .map(|(k, (id, t, c))| ItemRecord {
                    item_id: id.to_string(),
                    title: t.to_string(),
                    categories: vec![c.to_string()],
                    embedding: vec![k as f64],
                })
                .collect(),
        )
        .unwrap()
    }

    fn state(warm: &[&str], hist: &[(&str, f64)]) -> State {
        State {
            user_id: "u1".into(),
            history: hist.iter().map(|(i, r)| Consumed { item_id: i.to_string(), reward: *r }).collect(),
            step_index: hist.len() + 1,
            warm_start: warm.iter().map(|s| s.to_string()).collect(),
            done: false,
        }
    }

    #[test]
    fn state_text() {
        let c = catalog();
        assert_eq!(render_state(&c, &state(&[], &[])), "User u1 | recent: none | episode: none");
        assert_eq!(
            render_state(&c, &state(&["g1", "g2"], &[("g3", 4.5), ("g6", 2.0)])),
            "User u1 | recent: Half-Life 2 (Action); Portal (Puzzle) | episode: Stardew Valley, 4.50; Doom, 2.00"
        );
    }

    #[test]
    fn category_counts() {
        let c = catalog();
        let s = state(&["g3", "g4", "g1"], &[("g5", 4.0)]);
        assert_eq!(analyze_categories(&c, &s, &[], 3), "RPG: 3, Action: 1");
        let tie = state(&["g2", "g1"], &[]);
        assert_eq!(analyze_categories(&c, &tie, &[], 0), "Action: 1, Puzzle: 1");
        assert_eq!(analyze_categories(&c, &state(&[], &[]), &[], 0), "no history");
        let legal: Vec<String> = ["g3", "g4", "g6"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            analyze_categories(&c, &state(&[], &[]), &legal, 1),
            "no history | candidate categories: RPG"
        );
    }

    #[test]
    fn grounding_exact_and_near_miss() {
        let c = catalog();
        let enc: Arc<dyn TextEncoder> = Arc::new(HashingEncoder::default());
        let g = GroundingIndex::build(&c, enc.clone()).unwrap();
        let legal: Vec<String> = c.items().iter().map(|r| r.item_id.clone()).collect();
        let (id, d) = g.ground(Execution::Sequential, "Portal", &legal).unwrap().unwrap();
        assert_eq!((id.as_str(), d), ("g2", 0.0));

        let (id, _) = g.ground(Execution::Sequential, "Half Life 2", &legal).unwrap().unwrap();
        let q = enc.embed("Half Life 2").unwrap();
        let oracle = c
            .items()
            .iter()
            .map(|r| (l2_distance(&q, &enc.embed(&r.title).unwrap()), r.item_id.clone()))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .unwrap();
        assert_eq!(id, oracle.1);
        assert_eq!(id, "g1");

        let restricted = vec!["g3".to_string(), "g5".to_string()];
        let (id, _) = g.ground(Execution::Sequential, "Portal", &restricted).unwrap().unwrap();
        assert!(restricted.contains(&id));
        assert!(g.ground(Execution::Sequential, "Portal", &[]).unwrap().is_none());
    }

    #[test]
    fn grounding_tie_prefers_smaller_id() {
        let rows = ["b", "a"].map(|id| ItemRecord {
            item_id: id.into(),
            title: "Same Title".into(),
            categories: vec![],
            embedding: vec![0.0],
        });
        let c = ItemCatalog::new(rows.to_vec()).unwrap();
        let g = GroundingIndex::build(&c, Arc::new(HashingEncoder::default())).unwrap();
        let legal = vec!["b".to_string(), "a".to_string()];
        assert_eq!(g.ground(Execution::Sequential, "whatever", &legal).unwrap().unwrap().0, "a");
    }

    proptest! {
        #[test]
        fn grounding_matches_linear_scan(raw in "[a-zA-Z ]{1,20}", n in 1usize..20) {
            let titles = ["alpha", "beta", "gamma", "delta", "omega", "sigma", "kappa", "theta", "zeta", "eta"];
            let items: Vec<ItemRecord> = (0..20)
                .map(|k| ItemRecord {
                    item_id: format!("i{k:02}"),
                    title: format!("{} {}", titles[k % 10], titles[(k * 7) % 10]),
                    categories: vec![],
                    embedding: vec![k as f64],
                })
                .collect();
            let c = ItemCatalog::new(items).unwrap();
            let enc: Arc<dyn TextEncoder> = Arc::new(HashingEncoder::default());
            let g = GroundingIndex::build(&c, enc.clone()).unwrap();
            let legal: Vec<String> = c.items().iter().take(n).map(|r| r.item_id.clone()).collect();
            prop_assume!(!raw.trim().is_empty());
            let q = enc.embed(&raw).unwrap();
            let oracle = legal
                .iter()
                .map(|id| (l2_distance(&q, &enc.embed(&c.get(id).unwrap().title).unwrap()), id.clone()))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .unwrap();
            let got = g.ground(Execution::Sequential, &raw, &legal).unwrap().unwrap();
            prop_assert_eq!(got.0, oracle.1);
            let par = g.ground(Execution::Parallel, &raw, &legal).unwrap().unwrap();
            prop_assert_eq!(par, g.ground(Execution::Sequential, &raw, &legal).unwrap().unwrap());
        }
    }
}
