use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bilevel_core::agent::{AgentError, GroundingIndex, Policy};
use bilevel_core::catalog::{ItemCatalog, ItemRecord, TableScorer};
use bilevel_core::env::{EnvConfig, Environment, State, UserHistories};
use bilevel_core::harness::{evaluate, mc_state_value};
use bilevel_core::llm::{Gateway, Matcher, Responder, StubBackend, StubRule, StubScript, TemplateSet};
use bilevel_core::memory::{HashingEncoder, Memories, Payload, StoreKind, TextEncoder, VectorStore, DEFAULT_DIM};
use bilevel_core::parallel::Execution;
use bilevel_core::{Agent, AgentConfig};

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn mode_name(exec: Execution) -> &'static str {
    if exec.is_parallel() { "parallel" } else { "sequential" }
}

fn env(n_items: usize) -> Environment {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let items: Vec<ItemRecord> = (0..n_items)
        .map(|k| ItemRecord {
            item_id: format!("i{k:05}"),
            title: format!("Title {k} of the catalog"),
            categories: vec![format!("C{}", k % 12)],
            embedding: (0..8).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let mut scorer = TableScorer::new().with_user("u");
    for it in &items {
        scorer = scorer.with_item_reward(it.item_id.clone(), rng.random_range(1.5..5.0));
    }
    let mut hist = UserHistories::default();
    hist.insert("u", items[..5].iter().map(|i| i.item_id.clone()).collect());
    let cfg = EnvConfig { beta: 0.3, max_rounds: 30, ..EnvConfig::default() };
    Environment::new(Arc::new(ItemCatalog::new(items).unwrap()), Arc::new(scorer), Arc::new(hist), cfg).unwrap()
}

fn retrieval(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = VectorStore::new(StoreKind::Critic, DEFAULT_DIM);
    for i in 0..20_000 {
        let v = (0..DEFAULT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        store.insert("k", v, Payload::CriticExp { state_digest: String::new(), value: i as f64 }).unwrap();
    }
    let q: Vec<f64> = (0..DEFAULT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut g = c.benchmark_group("retrieve_topk_20k");
    for exec in MODES {
        g.bench_function(BenchmarkId::from_parameter(mode_name(exec)), |b| {
            b.iter(|| black_box(store.retrieve_topk_with(exec, black_box(&q), 5).unwrap().len()))
        });
    }
    g.finish();
}

fn grounding(c: &mut Criterion) {
    let env = env(8192);
    let enc: Arc<dyn TextEncoder> = Arc::new(HashingEncoder::default());
    let index = GroundingIndex::build(env.catalog(), enc).unwrap();
    let legal: Vec<String> = env.catalog().items().iter().map(|i| i.item_id.clone()).collect();
    let mut g = c.benchmark_group("ground_8k");
    for exec in MODES {
        g.bench_function(BenchmarkId::from_parameter(mode_name(exec)), |b| {
            b.iter(|| black_box(index.ground(exec, "Title 4242 of the catalog", &legal).unwrap()))
        });
    }
    g.finish();
}

/// Uniform pick among legal items.
struct RandomPolicy;

impl Policy for RandomPolicy {
    fn choose(&self, env: &Environment, state: &State, seed: u64) -> Result<String, AgentError> {
        let legal = env.legal_items(state);
        Ok(legal[ChaCha8Rng::seed_from_u64(seed).random_range(0..legal.len())].clone())
    }
}

fn rollouts(c: &mut Criterion) {
    let env = env(512);
    let s = env.reset("u", 5).unwrap();
    let mut g = c.benchmark_group("mc_rollouts_2000");
    for exec in MODES {
        g.bench_function(BenchmarkId::from_parameter(mode_name(exec)), |b| {
            b.iter(|| black_box(mc_state_value(&env, &RandomPolicy, &s, 2000, 0.5, 3, exec).unwrap().mean))
        });
    }
    g.finish();
}

fn evaluation(c: &mut Criterion) {
    let env = env(2048);
    let rules = vec![
        StubRule::new(Matcher::contains("PLANNER"), Responder::Fixed("Thought: pick something new".into())),
        StubRule::new(
            Matcher::contains("ACTOR"),
            Responder::Choice((0..40).map(|k| (1.0, format!("ACTION: Title {} of the catalog", k * 37))).collect()),
        ),
        StubRule::catch_all(Responder::Fixed("VALUE: 5".into())),
    ];
    let gateway = Gateway::new(Arc::new(StubBackend::new(StubScript::new(rules).unwrap(), 0))).with_max_in_flight(0);
    let enc: Arc<dyn TextEncoder> = Arc::new(HashingEncoder::default());
    let grounding = Arc::new(GroundingIndex::build(env.catalog(), enc).unwrap());
    let agent = Agent::new(AgentConfig::default(), gateway, Arc::new(TemplateSet::default()), grounding).unwrap();
    let mem = Memories::new(DEFAULT_DIM);
    let mut g = c.benchmark_group("evaluate_32_episodes");
    g.sample_size(10);
    for exec in MODES {
        g.bench_function(BenchmarkId::from_parameter(mode_name(exec)), |b| {
            b.iter(|| black_box(evaluate(&agent, &env, &mem, 32, 4, exec).unwrap().len()))
        });
    }
    g.finish();
}

criterion_group!(benches, retrieval, grounding, rollouts, evaluation);
criterion_main!(benches);
