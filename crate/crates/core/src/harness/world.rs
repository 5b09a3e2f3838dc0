//! Train and test environments built from a dataset manifest.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use super::{ExperimentConfig, HarnessError};
use crate::catalog::{
    load_world_snapshot, prepare_dataset, save_world_snapshot, train_scorer, DatasetManifest, FactorizationScorer,
    InteractionRecord, ItemCatalog, PreparedDataset, TrainingReport,
};
use crate::env::{calibrate_beta, EnvConfig, Environment, SplitKind, UserHistories};
use crate::parallel::{derive_seed, stream};

pub const TRAIN_WORLD_FILE: &str = "world_train.json";
pub const TEST_WORLD_FILE: &str = "world_test.json";

/// One simulated world per split. Each world's scorer is fitted on its own
/// split; warm starts always come from the train split.
#[derive(Debug, Clone)]
pub struct World {
    pub train: Environment,
    pub test: Environment,
    pub dataset: PreparedDataset,
    /// Training curves, absent when the scorers came from snapshots.
    pub scorer_reports: Option<(TrainingReport, TrainingReport)>,
    train_parts: (Arc<ItemCatalog>, FactorizationScorer),
    test_parts: (Arc<ItemCatalog>, FactorizationScorer),
}

fn environment(
    catalog: Arc<ItemCatalog>,
    scorer: &FactorizationScorer,
    warm_source: &[InteractionRecord],
    mut config: EnvConfig,
    beta_percentile: Option<f64>,
    split: SplitKind,
) -> Result<Environment, HarnessError> {
    let users: BTreeSet<&str> = scorer.user_ids().collect();
    let known: Vec<InteractionRecord> = warm_source
        .iter()
        .filter(|r| users.contains(r.user_id.as_str()) && catalog.contains(&r.item_id))
        .cloned()
        .collect();
    if let Some(p) = beta_percentile {
        config.beta = calibrate_beta(&catalog, p)?;
        log::info!("{split:?} world: beta calibrated to {:.4} (percentile {p})", config.beta);
    }
    config.which_split = split;
    Ok(Environment::new(catalog, Arc::new(scorer.clone()), Arc::new(UserHistories::from_records(&known)), config)?)
}

impl World {
    /// Loads and prepares the dataset, then trains both scorers or loads
    /// them from `snapshots` when both files exist there.
    pub fn build(config: &ExperimentConfig, seed: u64, snapshots: Option<&Path>) -> Result<Self, HarnessError> {
        let manifest = DatasetManifest::load(&config.resolve(&config.manifest))?;
        let dataset = prepare_dataset(&manifest)?;
        let loaded = match snapshots {
            Some(dir) if dir.join(TRAIN_WORLD_FILE).exists() && dir.join(TEST_WORLD_FILE).exists() => {
                let tr = load_world_snapshot(&dir.join(TRAIN_WORLD_FILE))?;
                let te = load_world_snapshot(&dir.join(TEST_WORLD_FILE))?;
                Some(((Arc::new(tr.catalog), tr.scorer), (Arc::new(te.catalog), te.scorer)))
            }
            _ => None,
        };
        let (train_parts, test_parts, scorer_reports) = match loaded {
            Some((a, b)) => (a, b, None),
            None => {
                let (s_tr, r_tr) =
                    train_scorer(&dataset.split.train, &manifest.scorer.with_seed(derive_seed(seed, stream::SCORER, 0)))?;
                let (s_te, r_te) =
                    train_scorer(&dataset.split.test, &manifest.scorer.with_seed(derive_seed(seed, stream::SCORER, 1)))?;
                let c_tr = Arc::new(ItemCatalog::from_scorer(&dataset.log.items, &s_tr)?);
                let c_te = Arc::new(ItemCatalog::from_scorer(&dataset.log.items, &s_te)?);
                ((c_tr, s_tr), (c_te, s_te), Some((r_tr, r_te)))
            }
        };
        let pct = config.run.beta_percentile;
        let train = environment(
            train_parts.0.clone(),
            &train_parts.1,
            &dataset.split.train,
            config.env.clone(),
            pct,
            SplitKind::Train,
        )?;
        let test = environment(
            test_parts.0.clone(),
            &test_parts.1,
            &dataset.split.train,
            config.env.clone(),
            pct,
            SplitKind::Test,
        )?;
        Ok(Self { train, test, dataset, scorer_reports, train_parts, test_parts })
    }

    pub fn save(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        save_world_snapshot(&dir.join(TRAIN_WORLD_FILE), &self.train_parts.0, &self.train_parts.1)?;
        save_world_snapshot(&dir.join(TEST_WORLD_FILE), &self.test_parts.0, &self.test_parts.1)?;
        Ok(())
    }
}
