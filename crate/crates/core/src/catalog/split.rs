use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::InteractionRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<InteractionRecord>,
    pub test: Vec<InteractionRecord>,
}

/// Per-user chronological halving. Returns record indices for (train, test),
/// each in input order. A user with `n` records contributes `ceil(n / 2)` of
/// the earliest ones to train; equal timestamps keep input order.
pub fn chronological_split_indices(records: &[InteractionRecord]) -> (Vec<usize>, Vec<usize>) {
    let mut per_user: HashMap<&str, Vec<usize>> = HashMap::new();
    for (idx, r) in records.iter().enumerate() {
        per_user.entry(&r.user_id).or_default().push(idx);
    }
    let mut in_train = vec![false; records.len()];
    for idxs in per_user.values_mut() {
        idxs.sort_by_key(|&i| records[i].timestamp); // stable
        let n_train = idxs.len().div_ceil(2);
        for &i in &idxs[..n_train] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, t) in in_train.into_iter().enumerate() {
        if t { train.push(i) } else { test.push(i) }
    }
    (train, test)
}

pub fn chronological_split(records: &[InteractionRecord]) -> DatasetSplit {
    let (train, test) = chronological_split_indices(records);
    DatasetSplit {
        train: train.into_iter().map(|i| records[i].clone()).collect(),
        test: test.into_iter().map(|i| records[i].clone()).collect(),
    }
}
