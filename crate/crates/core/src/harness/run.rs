//! Training, evaluation, ablations and window sweeps.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError, MetricsReport, World};
use crate::agent::{Agent, AgentConfig, EpisodeTrace, GroundingIndex, MemoryAccess};
use crate::env::{EnvConfig, Environment};
use crate::llm::{AuditLog, Gateway, TemplateId, TemplateSet};
use crate::memory::{HashingEncoder, Memories, TextEncoder};
use crate::parallel::{derive_seed, map_range, stream, Execution};

/// Agent for `env` with the configured backend, prompts and encoder.
pub fn build_agent(
    config: &ExperimentConfig,
    env: &Environment,
    seed: u64,
    audit: Arc<AuditLog>,
) -> Result<Agent, HarnessError> {
    let backend = config.backend.build(&config.base_dir, seed)?;
    let mut gateway = Gateway::new(backend).with_audit(audit).with_max_in_flight(config.run.max_in_flight);
    if let Some(limit) = config.run.context_limit_tokens {
        gateway = gateway.with_context_limit(limit);
    }
    let templates = match &config.run.templates_dir {
        Some(d) => TemplateSet::from_dir(&config.resolve(d))?,
        None => TemplateSet::default(),
    };
    let encoder: Arc<dyn TextEncoder> = Arc::new(HashingEncoder::new(config.run.encoder_dim));
    let grounding = Arc::new(GroundingIndex::build(env.catalog(), encoder)?);
    Ok(Agent::new(config.agent.clone(), gateway, Arc::new(templates), grounding)?.with_execution(config.run.execution))
}

/// `(user, episode seed)` for `n` episodes: users drawn uniformly with
/// replacement among those with enough history.
pub fn episode_plan(
    env: &Environment,
    warm_start_len: usize,
    n: usize,
    base: u64,
) -> Result<Vec<(String, u64)>, HarnessError> {
    let users = env.eligible_users(warm_start_len);
    if users.is_empty() && n > 0 {
        return Err(HarnessError::Invalid(format!("no user has {warm_start_len} logged items for the warm start")));
    }
    Ok((0..n as u64)
        .map(|e| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, stream::USER_PICK, e));
            let user = users[rng.random_range(0..users.len())].clone();
            (user, derive_seed(base, stream::EPISODE, e))
        })
        .collect())
}

/// Sequential learning episodes writing into `memories`.
pub fn train(
    agent: &Agent,
    env: &Environment,
    memories: &mut Memories,
    n: usize,
    seed: u64,
) -> Result<Vec<EpisodeTrace>, HarnessError> {
    let plan = episode_plan(env, agent.config().warm_start_len, n, derive_seed(seed, stream::TRAIN, 0))?;
    let mut traces = Vec::with_capacity(n);
    for (e, (user, ep_seed)) in plan.into_iter().enumerate() {
        let t = agent.run_episode(env, &user, MemoryAccess::Writable(memories), ep_seed, e);
        log::info!("train episode {e}: user {user}, len {}, quit {:?}", t.len(), t.quit_reason);
        traces.push(t);
    }
    Ok(traces)
}

/// Read-only episodes; order of the result follows the episode index
/// whatever the execution mode.
pub fn evaluate(
    agent: &Agent,
    env: &Environment,
    memories: &Memories,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<EpisodeTrace>, HarnessError> {
    let plan = episode_plan(env, agent.config().warm_start_len, n, derive_seed(seed, stream::EVAL, 0))?;
    Ok(map_range(exec, plan.len(), |e| {
        let (user, ep_seed) = &plan[e];
        agent.run_episode(env, user, MemoryAccess::Frozen(memories), *ep_seed, e)
    }))
}

/// `n` consecutive seeds starting at `base`.
pub fn seed_list(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base.wrapping_add(i)).collect()
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub memories: Memories,
    pub train_traces: Vec<EpisodeTrace>,
    pub eval_traces: Vec<EpisodeTrace>,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub runs: Vec<SeedRun>,
    pub metrics: MetricsReport,
}

/// Train then evaluate once per seed. `memories` supplies pre-trained
/// memories per seed and skips training.
pub fn run_experiment(
    config: &ExperimentConfig,
    world: &World,
    seeds: &[u64],
    audit: Arc<AuditLog>,
    memories: Option<&BTreeMap<u64, Memories>>,
) -> Result<ExperimentRun, HarnessError> {
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let (memories, train_traces) = match memories.and_then(|m| m.get(&seed)) {
            Some(m) => (m.clone(), Vec::new()),
            None => {
                let agent = build_agent(config, &world.train, seed, audit.clone())?;
                let mut m = Memories::new(config.run.encoder_dim);
                let t = train(&agent, &world.train, &mut m, config.run.train_episodes, seed)?;
                (m, t)
            }
        };
        let agent = build_agent(config, &world.test, seed, audit.clone())?;
        let eval_traces =
            evaluate(&agent, &world.test, &memories, config.run.eval_episodes, seed, config.run.execution)?;
        runs.push(SeedRun { seed, memories, train_traces, eval_traces });
    }
    let per: Vec<(u64, &[EpisodeTrace])> = runs.iter().map(|r| (r.seed, r.eval_traces.as_slice())).collect();
    let metrics = MetricsReport::from_traces(&per);
    Ok(ExperimentRun { runs, metrics })
}

/// Named agent configurations compared in ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Billp,
    NoMacro,
    NoMicro,
    ActOnly,
    React,
    Reflexion,
}

impl Variant {
    pub const ABLATION: [Variant; 4] = [Variant::Billp, Variant::NoMacro, Variant::NoMicro, Variant::ActOnly];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Billp => "BiLLP",
            Variant::NoMacro => "w/o Macro",
            Variant::NoMicro => "w/o Micro",
            Variant::ActOnly => "ActOnly",
            Variant::React => "ReAct",
            Variant::Reflexion => "Reflexion",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Variant::Billp => "billp",
            Variant::NoMacro => "no-macro",
            Variant::NoMicro => "no-micro",
            Variant::ActOnly => "act-only",
            Variant::React => "react",
            Variant::Reflexion => "reflexion",
        }
    }

    pub fn apply(self, base: &AgentConfig) -> AgentConfig {
        let (planner, macro_, micro) = match self {
            Variant::Billp => (true, true, true),
            Variant::NoMacro => (true, false, true),
            Variant::NoMicro => (true, true, false),
            Variant::ActOnly => (false, false, false),
            Variant::React => (true, false, false),
            Variant::Reflexion => (true, true, false),
        };
        AgentConfig { planner_enabled: planner, macro_enabled: macro_, micro_enabled: micro, ..base.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub variant: Variant,
    pub label: String,
    pub metrics: MetricsReport,
    /// Planner, actor and critic entries after training, per seed.
    pub memory_sizes: Vec<[usize; 3]>,
    /// LLM calls by role over training and evaluation.
    pub llm_calls: BTreeMap<TemplateId, usize>,
}

/// Full train and evaluate per variant, each with its own audit log.
pub fn run_ablation(
    config: &ExperimentConfig,
    world: &World,
    seeds: &[u64],
    variants: &[Variant],
) -> Result<Vec<(AblationEntry, ExperimentRun, Arc<AuditLog>)>, HarnessError> {
    variants
        .iter()
        .map(|&v| {
            let mut cfg = config.clone();
            cfg.agent = v.apply(&config.agent);
            let audit = Arc::new(AuditLog::new());
            let run = run_experiment(&cfg, world, seeds, audit.clone(), None)?;
            let entry = AblationEntry {
                variant: v,
                label: v.label().to_string(),
                metrics: run.metrics.clone(),
                memory_sizes: run
                    .runs
                    .iter()
                    .map(|r| [r.memories.planner.len(), r.memories.actor.len(), r.memories.critic.len()])
                    .collect(),
                llm_calls: TemplateId::ALL.iter().map(|&id| (id, audit.count(id))).collect(),
            };
            Ok((entry, run, audit))
        })
        .collect()
}

/// Evaluation under each window size with everything else fixed.
pub fn sweep_window(
    agent: &Agent,
    env: &Environment,
    memories: &[(u64, Memories)],
    windows: &[usize],
    n: usize,
    exec: Execution,
) -> Result<Vec<(usize, MetricsReport)>, HarnessError> {
    if windows.is_empty() {
        return Err(HarnessError::Invalid("no window sizes given".into()));
    }
    windows
        .iter()
        .map(|&w| {
            let env_w = env.with_config(EnvConfig { window: w, ..env.config().clone() })?;
            let mut per = Vec::with_capacity(memories.len());
            for (seed, m) in memories {
                per.push((*seed, evaluate(agent, &env_w, m, n, *seed, exec)?));
            }
            let refs: Vec<(u64, &[EpisodeTrace])> = per.iter().map(|(s, t)| (*s, t.as_slice())).collect();
            Ok((w, MetricsReport::from_traces(&refs)))
        })
        .collect()
}
