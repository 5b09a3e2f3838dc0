//! Toy worlds and scripted agents shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use bilevel_core::agent::GroundingIndex;
use bilevel_core::catalog::{ItemCatalog, ItemRecord, TableScorer};
use bilevel_core::env::{EnvConfig, Environment, UserHistories};
use bilevel_core::llm::{AuditLog, Gateway, Matcher, Responder, StubBackend, StubRule, StubScript, TemplateSet};
use bilevel_core::memory::{HashingEncoder, TextEncoder};
use bilevel_core::{Agent, AgentConfig};

pub const TITLES: [&str; 10] = [
    "Amber Quest",
    "Boreal Siege",
    "Cobalt Harvest",
    "Drift Kings",
    "Ember Tactics",
    "Frost Hollow",
    "Granite Legends",
    "Harbor Nights",
    "Ivory Circuit",
    "Jade Expedition",
];

/// `(id, title, coordinate, reward)`
pub type ToyItem = (String, String, f64, f64);

/// `t0..t9` titled from [`TITLES`], ten units apart, all rewarding 4.
pub fn spaced_items() -> Vec<ToyItem> {
    TITLES.iter().enumerate().map(|(k, t)| (format!("t{k}"), t.to_string(), k as f64 * 10.0, 4.0)).collect()
}

/// One-dimensional catalog with users `u1` and `u2` whose two warm-start
/// items sit far away from everything else.
pub fn toy_env(items: &[ToyItem], config: EnvConfig) -> Environment {
    let mut records: Vec<ItemRecord> = items
        .iter()
        .enumerate()
        .map(|(k, (id, title, x, _))| ItemRecord {
            item_id: id.clone(),
            title: title.clone(),
            categories: vec![if k % 2 == 0 { "RPG".into() } else { "Action".into() }],
            embedding: vec![*x],
        })
        .collect();
    for (k, t) in ["Warm Alpha", "Warm Beta"].iter().enumerate() {
        records.push(ItemRecord {
            item_id: format!("w{k}"),
            title: t.to_string(),
            categories: vec!["Puzzle".into()],
            embedding: vec![-1000.0 - k as f64 * 10.0],
        });
    }
    let mut scorer = TableScorer::new().with_user("u1").with_user("u2");
    for (id, _, _, r) in items {
        scorer = scorer.with_item_reward(id.clone(), *r);
    }
    scorer = scorer.with_item_reward("w0", 3.0).with_item_reward("w1", 3.0);
    let mut hist = UserHistories::default();
    hist.insert("u1", vec!["w0".into(), "w1".into()]);
    hist.insert("u2", vec!["w1".into(), "w0".into()]);
    Environment::new(Arc::new(ItemCatalog::new(records).unwrap()), Arc::new(scorer), Arc::new(hist), config).unwrap()
}

pub fn rule(contains: &[&str], responder: Responder) -> StubRule {
    let mut m = Matcher::contains(contains[0]);
    for c in &contains[1..] {
        m = m.and(*c);
    }
    StubRule::new(m, responder)
}

pub fn fixed(contains: &[&str], text: &str) -> StubRule {
    rule(contains, Responder::Fixed(text.into()))
}

/// Agent over `env` answering from `rules` (a catch-all is appended).
/// Warm starts use two items.
pub fn scripted_agent(env: &Environment, mut rules: Vec<StubRule>, config: AgentConfig, audit: Arc<AuditLog>) -> Agent {
    rules.push(StubRule::catch_all(Responder::Fixed("I am not sure.".into())));
    let gateway = Gateway::new(Arc::new(StubBackend::new(StubScript::new(rules).unwrap(), 0))).with_audit(audit);
    let enc: Arc<dyn TextEncoder> = Arc::new(HashingEncoder::default());
    let grounding = Arc::new(GroundingIndex::build(env.catalog(), enc).unwrap());
    Agent::new(AgentConfig { warm_start_len: 2, ..config }, gateway, Arc::new(TemplateSet::default()), grounding).unwrap()
}

/// Actor that walks through `titles` one per step.
pub fn actor_sequence(titles: &[&str]) -> StubRule {
    rule(
        &["ACTOR"],
        Responder::Cycle { texts: titles.iter().map(|t| format!("ACTION: {t}")).collect(), counter: "Observation ".into() },
    )
}

pub fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo/experiment.toml")
}

/// Runs the CLI in-process and returns its exit code.
pub fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["bilevel"];
    argv.extend_from_slice(args);
    bilevel_core::harness::cli::run(argv)
}

/// Every regular file under `root`, relative paths sorted.
pub fn files_under(root: &Path) -> Vec<PathBuf> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
