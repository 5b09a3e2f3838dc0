//! Which popularity tiers a policy recommends from.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::catalog::InteractionRecord;

pub const BUCKETS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShareMode {
    /// Fraction of recommendation events.
    #[default]
    Events,
    /// Fraction of distinct recommended items.
    DistinctItems,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityReport {
    /// Bucket 1 holds the most popular items.
    pub bucket_of_item: BTreeMap<String, u8>,
    pub bucket_sizes: [usize; BUCKETS],
    pub mode: ShareMode,
    /// Per policy label, the share of recommendations in each bucket.
    pub shares: BTreeMap<String, [f64; BUCKETS]>,
}

/// Items ordered by descending count (then id) and cut into five groups
/// whose sizes differ by at most one, larger groups first.
pub fn popularity_buckets(items: &[String], counts: &BTreeMap<String, usize>) -> (BTreeMap<String, u8>, [usize; BUCKETS]) {
    let mut ranked: Vec<&String> = items.iter().collect::<BTreeSet<_>>().into_iter().collect();
    ranked.sort_by(|a, b| counts.get(*b).unwrap_or(&0).cmp(counts.get(*a).unwrap_or(&0)).then_with(|| a.cmp(b)));
    let n = ranked.len();
    let mut sizes = [n / BUCKETS; BUCKETS];
    for s in sizes.iter_mut().take(n % BUCKETS) {
        *s += 1;
    }
    let mut map = BTreeMap::new();
    let mut it = ranked.into_iter();
    for (b, &size) in sizes.iter().enumerate() {
        for id in it.by_ref().take(size) {
            map.insert(id.clone(), (b + 1) as u8);
        }
    }
    (map, sizes)
}

/// Popularity counts come from `records`; `policies` maps a label to the
/// item ids that policy recommended, in any order.
pub fn popularity_analysis(
    items: &[String],
    records: &[InteractionRecord],
    policies: &[(String, Vec<String>)],
    mode: ShareMode,
) -> Result<PopularityReport, HarnessError> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.item_id.clone()).or_default() += 1;
    }
    let (bucket_of_item, bucket_sizes) = popularity_buckets(items, &counts);
    let mut shares = BTreeMap::new();
    for (label, recs) in policies {
        let pool: Vec<&String> = match mode {
            ShareMode::Events => recs.iter().collect(),
            ShareMode::DistinctItems => recs.iter().collect::<BTreeSet<_>>().into_iter().collect(),
        };
        let mut hist = [0usize; BUCKETS];
        let mut total = 0usize;
        for id in pool {
            match bucket_of_item.get(id) {
                Some(&b) => {
                    hist[b as usize - 1] += 1;
                    total += 1;
                }
                None => log::warn!("recommended item {id} is not in the catalog; ignored"),
            }
        }
        if total == 0 {
            return Err(HarnessError::Invalid(format!("policy {label} has no recommendations to analyse")));
        }
        shares.insert(label.clone(), hist.map(|c| c as f64 / total as f64));
    }
    Ok(PopularityReport { bucket_of_item, bucket_sizes, mode, shares })
}

impl PopularityReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("bucket sizes: {:?} ({:?})\n", self.bucket_sizes, self.mode);
        for (label, s) in &self.shares {
            out.push_str(&format!(
                "{label:<14} {}\n",
                s.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("  ")
            ));
        }
        out
    }
}
