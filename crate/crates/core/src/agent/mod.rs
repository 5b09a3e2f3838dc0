//! Planner, Reflector, Actor and Critic wired around the three memories.
//!
//! One episode alternates plan → act → environment step → advantage update.
//! After the episode the Reflector writes one reflection keyed by the
//! episode's initial state. Nothing is learned by gradient: all adaptation
//! happens through what is retrieved into the prompts.

mod text;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use text::{analyze_categories, render_observation, render_state, GroundingIndex};

use crate::env::{EnvError, Environment, QuitReason, State, TraceStep};
use crate::llm::{
    format_experiences, format_history, format_reflections, parse_action, parse_value, ChatMessage, ChatRequest,
    Gateway, HistoryStep, LlmError, PromptError, Slots, TemplateId, TemplateSet,
};
use crate::memory::{Memories, MemoryError, Payload, TextEncoder};
use crate::parallel::{derive_seed, stream, Execution};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("{role} output unusable after retry: {reason}")]
    Unparseable { role: &'static str, reason: String },
    #[error("no legal item to recommend")]
    NoLegalItems,
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Temperatures {
    pub planner: f64,
    pub reflector: f64,
    pub actor: f64,
    pub critic: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Self { planner: 0.5, reflector: 0.5, actor: 0.5, critic: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    /// Reflections retrieved for the Planner.
    pub k: usize,
    pub tau_a: f64,
    pub tau_c: f64,
    pub gamma: f64,
    pub macro_enabled: bool,
    pub micro_enabled: bool,
    pub planner_enabled: bool,
    pub warm_start_len: usize,
    pub temperatures: Temperatures,
    /// Most Actor experiences placed in one prompt.
    pub actor_exemplar_cap: usize,
    /// Most Critic exemplars placed in one prompt.
    pub critic_exemplar_cap: usize,
    /// Candidate categories listed by the category tool.
    pub tool_top_m: usize,
    pub model: String,
    pub max_tokens: u32,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            k: 2,
            tau_a: 0.01,
            tau_c: 0.1,
            gamma: 0.5,
            macro_enabled: true,
            micro_enabled: true,
            planner_enabled: true,
            warm_start_len: 5,
            temperatures: Temperatures::default(),
            actor_exemplar_cap: 8,
            critic_exemplar_cap: 8,
            tool_top_m: 5,
            model: "gpt-3.5-turbo-16k".into(),
            max_tokens: 256,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.into()));
        if !(self.tau_a >= 0.0 && self.tau_c >= 0.0) {
            return bad("retrieval thresholds must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        let t = &self.temperatures;
        if [t.planner, t.reflector, t.actor, t.critic].iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return bad("temperatures must be finite and >= 0");
        }
        Ok(())
    }
}

/// `A = r + γ·V(s') − V(s)` and its sign flag (`1` when `A >= 0`).
pub fn advantage(reward: f64, gamma: f64, v_s: f64, v_next: f64) -> (f64, u8) {
    let a = reward + gamma * v_next - v_s;
    (a, u8::from(a >= 0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord {
    pub step_index: usize,
    pub state_digest: String,
    pub action_item_id: String,
    pub reward: f64,
    pub v_s: f64,
    pub v_s_next: f64,
    pub advantage: f64,
    pub v: u8,
    /// A Critic estimate behind this record fell back to the default.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub episode: usize,
    pub user_id: String,
    pub seed: u64,
    pub reflections_used: Vec<String>,
    pub steps: Vec<TraceStep>,
    pub advantages: Vec<AdvantageRecord>,
    pub reflection: Option<String>,
    pub quit_reason: QuitReason,
    /// Diagnostic when the episode stopped on an error.
    pub aborted: Option<String>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Whether an episode may write to the memories.
#[derive(Debug)]
pub enum MemoryAccess<'a> {
    Writable(&'a mut Memories),
    Frozen(&'a Memories),
}

impl MemoryAccess<'_> {
    pub fn view(&self) -> &Memories {
        match self {
            MemoryAccess::Writable(m) => m,
            MemoryAccess::Frozen(m) => m,
        }
    }
}

/// Per-episode source of request seeds.
#[derive(Debug, Clone)]
pub struct CallSeeds {
    base: u64,
    next: u64,
}

impl CallSeeds {
    pub fn new(base: u64) -> Self {
        Self { base, next: 0 }
    }

    pub fn next_seed(&mut self) -> u64 {
        self.next += 1;
        derive_seed(self.base, stream::LLM_CALL, self.next)
    }
}

/// Anything that picks the next item for a state; used by Monte-Carlo rollouts.
pub trait Policy: Sync {
    fn choose(&self, env: &Environment, state: &State, seed: u64) -> Result<String, AgentError>;
}

#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    gateway: Gateway,
    templates: Arc<TemplateSet>,
    grounding: Arc<GroundingIndex>,
    exec: Execution,
}

const ACTION_REMINDER: &str = "Your reply could not be read. Answer with one line: ACTION: <exact item title>";
const VALUE_REMINDER: &str = "Your reply could not be read. Answer with one line: VALUE: <number>";

impl Agent {
    pub fn new(
        config: AgentConfig,
        gateway: Gateway,
        templates: Arc<TemplateSet>,
        grounding: Arc<GroundingIndex>,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        Ok(Self { config, gateway, templates, grounding, exec: Execution::default() })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_config(&self, config: AgentConfig) -> Result<Self, AgentError> {
        config.validate()?;
        Ok(Self { config, ..self.clone() })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn encoder(&self) -> &Arc<dyn TextEncoder> {
        self.grounding.encoder()
    }

    pub fn grounding(&self) -> &GroundingIndex {
        &self.grounding
    }

    fn request(&self, messages: Vec<ChatMessage>, temperature: f64, seed: u64) -> ChatRequest {
        ChatRequest {
            messages,
            temperature,
            max_tokens: self.config.max_tokens,
            model_id: self.config.model.clone(),
            seed: Some(seed),
        }
    }

    /// One call, plus one follow-up with `reminder` when `parse` rejects the reply.
    fn call_parsed<T>(
        &self,
        role: TemplateId,
        prompt: String,
        temperature: f64,
        seeds: &mut CallSeeds,
        reminder: &str,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Result<T, String>, LlmError> {
        let mut messages = vec![ChatMessage::user(prompt)];
        let first = self.gateway.complete(role, &self.request(messages.clone(), temperature, seeds.next_seed()))?;
        let err = match parse(&first) {
            Ok(v) => return Ok(Ok(v)),
            Err(e) => e,
        };
        log::debug!("{} reply rejected ({err}); retrying", role.name());
        messages.push(ChatMessage { role: crate::llm::Role::Assistant, content: first });
        messages.push(ChatMessage::user(reminder));
        let second = self.gateway.complete(role, &self.request(messages, temperature, seeds.next_seed()))?;
        Ok(parse(&second))
    }

    pub fn state_text(&self, env: &Environment, state: &State) -> String {
        render_state(env.catalog(), state)
    }

    /// Top-K reflections for an initial-state text; empty when macro
    /// learning or the planner is off.
    pub fn retrieve_reflections(&self, memories: &Memories, s1_text: &str) -> Result<Vec<String>, AgentError> {
        if !(self.config.macro_enabled && self.config.planner_enabled) || self.config.k == 0 {
            return Ok(Vec::new());
        }
        let hits = memories.planner.retrieve_topk_text(self.encoder().as_ref(), s1_text, self.config.k)?;
        Ok(hits
            .into_iter()
            .filter_map(|h| match &h.entry.payload {
                Payload::Reflection { text } => Some(text.clone()),
                _ => None,
            })
            .collect())
    }

    /// Next thought; empty without any call when the planner is disabled.
    pub fn plan(
        &self,
        env: &Environment,
        state: &State,
        history: &[HistoryStep],
        reflections: &[String],
        seeds: &mut CallSeeds,
    ) -> Result<String, AgentError> {
        if !self.config.planner_enabled {
            return Ok(String::new());
        }
        let mut slots = Slots::new();
        slots.insert("few_shot", TemplateSet::planner_few_shot().to_string());
        slots.insert("reflections", format_reflections(reflections));
        slots.insert("state", self.state_text(env, state));
        slots.insert("history", format_history(history));
        let prompt = self.templates.get(TemplateId::Planner).render(&slots)?;
        let out = self.call_parsed(
            TemplateId::Planner,
            prompt,
            self.config.temperatures.planner,
            seeds,
            "Your reply was empty. Write the next Thought.",
            |s| {
                let t = strip_label(s, "thought");
                if t.is_empty() { Err("empty thought".into()) } else { Ok(t) }
            },
        )?;
        out.map_err(|reason| AgentError::Unparseable { role: "planner", reason })
    }

    /// Reflection over a finished episode.
    pub fn reflect(
        &self,
        env: &Environment,
        s1: &State,
        history: &[HistoryStep],
        seeds: &mut CallSeeds,
    ) -> Result<String, AgentError> {
        let mut slots = Slots::new();
        slots.insert("state", self.state_text(env, s1));
        slots.insert("history", format_history(history));
        let prompt = self.templates.get(TemplateId::Reflector).render(&slots)?;
        let out = self.call_parsed(
            TemplateId::Reflector,
            prompt,
            self.config.temperatures.reflector,
            seeds,
            "Your reply was empty. Write the reflection.",
            |s| {
                let t = strip_label(s, "reflection");
                if t.is_empty() { Err("empty reflection".into()) } else { Ok(t) }
            },
        )?;
        out.map_err(|reason| AgentError::Unparseable { role: "reflector", reason })
    }

    /// Grounded item id and the raw completion it came from.
    pub fn act(
        &self,
        env: &Environment,
        memories: &Memories,
        state: &State,
        history: &[HistoryStep],
        thought: &str,
        seeds: &mut CallSeeds,
    ) -> Result<(String, String), AgentError> {
        let legal = env.legal_items(state);
        if legal.is_empty() {
            return Err(AgentError::NoLegalItems);
        }
        let state_text = self.state_text(env, state);
        let experiences = if self.config.micro_enabled {
            let hits = memories.actor.retrieve_threshold_text(self.encoder().as_ref(), &state_text, self.config.tau_a)?;
            hits.into_iter()
                .take(self.config.actor_exemplar_cap)
                .filter_map(|h| match &h.entry.payload {
                    Payload::ActorExp { action_item_id, advantage_v, .. } => {
                        let title = env.catalog().get(action_item_id).map_or(action_item_id.as_str(), |r| &r.title);
                        Some((h.entry.key_text.clone(), format!("{title} (advantage {advantage_v})")))
                    }
                    _ => None,
                })
                .collect()
        } else {
            Vec::new()
        };
        let mut slots = Slots::new();
        slots.insert("few_shot", TemplateSet::actor_few_shot().to_string());
        slots.insert("state", state_text);
        slots.insert("history", format_history(history));
        slots.insert("tool_output", analyze_categories(env.catalog(), state, &legal, self.config.tool_top_m));
        slots.insert("experiences", format_experiences(&experiences, "recommended"));
        slots.insert("thought", if thought.is_empty() { "(none)".into() } else { thought.to_string() });
        let prompt = self.templates.get(TemplateId::Actor).render(&slots)?;
        let out = self.call_parsed(
            TemplateId::Actor,
            prompt,
            self.config.temperatures.actor,
            seeds,
            ACTION_REMINDER,
            |s| parse_action(s).map(|_| s.to_string()).map_err(|e| e.to_string()),
        )?;
        let raw = out.map_err(|reason| AgentError::Unparseable { role: "actor", reason })?;
        let name = parse_action(&raw).expect("validated above");
        let (item, _) = self.grounding.ground(self.exec, &name, &legal)?.ok_or(AgentError::NoLegalItems)?;
        Ok((item, raw))
    }

    /// Critic estimate of `V(state)` and whether it fell back to 0.
    /// Terminal states are worth 0 and cost no call.
    pub fn estimate_value(
        &self,
        env: &Environment,
        memories: &Memories,
        state: &State,
        seeds: &mut CallSeeds,
    ) -> Result<(f64, bool), AgentError> {
        if state.done {
            return Ok((0.0, false));
        }
        let max_value = env.config().max_value();
        let state_text = self.state_text(env, state);
        let hits = memories.critic.retrieve_threshold_text(self.encoder().as_ref(), &state_text, self.config.tau_c)?;
        let rows: Vec<(String, String)> = hits
            .into_iter()
            .take(self.config.critic_exemplar_cap)
            .filter_map(|h| match &h.entry.payload {
                Payload::CriticExp { value, .. } => Some((h.entry.key_text.clone(), format!("{value}"))),
                _ => None,
            })
            .collect();
        let mut slots = Slots::new();
        slots.insert("experiences", format_experiences(&rows, "value"));
        slots.insert("state", state_text);
        let prompt = self.templates.get(TemplateId::Critic).render(&slots)?;
        let out = self.call_parsed(
            TemplateId::Critic,
            prompt,
            self.config.temperatures.critic,
            seeds,
            VALUE_REMINDER,
            |s| parse_value(s, max_value).map_err(|e| e.to_string()),
        )?;
        Ok(match out {
            Ok(v) => (v, false),
            Err(reason) => {
                log::warn!("critic output unusable twice ({reason}); using 0");
                (0.0, true)
            }
        })
    }

    /// Advantage for one transition, then the Critic and Actor memory
    /// writes. `v_s` reuses an estimate already made for `state`. Returns
    /// the record and `V(next_state)`.
    #[allow(clippy::too_many_arguments)]
    pub fn micro_step_update(
        &self,
        env: &Environment,
        memories: &mut Memories,
        state: &State,
        action: &str,
        reward: f64,
        next_state: &State,
        v_s: Option<(f64, bool)>,
        seeds: &mut CallSeeds,
    ) -> Result<Option<(AdvantageRecord, f64)>, AgentError> {
        if !self.config.micro_enabled {
            return Ok(None);
        }
        let (v_s, flag_s) = match v_s {
            Some(v) => v,
            None => self.estimate_value(env, memories, state, seeds)?,
        };
        let (v_next, flag_next) = self.estimate_value(env, memories, next_state, seeds)?;
        let (a, v) = advantage(reward, self.config.gamma, v_s, v_next);
        let target = reward + self.config.gamma * v_next;
        let state_text = self.state_text(env, state);
        let digest = state.digest();
        let enc = self.encoder().clone();
        memories.critic.insert_text(
            enc.as_ref(),
            &state_text,
            Payload::CriticExp { state_digest: digest.clone(), value: target },
        )?;
        memories.actor.insert_text(
            enc.as_ref(),
            &state_text,
            Payload::ActorExp { state_digest: digest.clone(), action_item_id: action.to_string(), advantage_v: v },
        )?;
        let record = AdvantageRecord {
            step_index: state.step_index,
            state_digest: digest,
            action_item_id: action.to_string(),
            reward,
            v_s,
            v_s_next: v_next,
            advantage: a,
            v,
            flagged: flag_s || flag_next,
        };
        Ok(Some((record, v_next)))
    }

    /// Runs one episode for `user_id`. Learning writes happen only with
    /// writable memories; errors end the episode with `aborted` set.
    pub fn run_episode(
        &self,
        env: &Environment,
        user_id: &str,
        mut memories: MemoryAccess<'_>,
        seed: u64,
        episode: usize,
    ) -> EpisodeTrace {
        let mut trace = EpisodeTrace {
            episode,
            user_id: user_id.to_string(),
            seed,
            reflections_used: Vec::new(),
            steps: Vec::new(),
            advantages: Vec::new(),
            reflection: None,
            quit_reason: QuitReason::None,
            aborted: None,
        };
        if let Err(e) = self.episode_body(env, &mut memories, &mut trace) {
            log::warn!("episode {episode} for user {user_id} aborted: {e}");
            trace.aborted = Some(e.to_string());
        }
        trace
    }

    fn episode_body(
        &self,
        env: &Environment,
        memories: &mut MemoryAccess<'_>,
        trace: &mut EpisodeTrace,
    ) -> Result<(), AgentError> {
        let mut seeds = CallSeeds::new(trace.seed);
        let learning = matches!(memories, MemoryAccess::Writable(_));
        let s1 = env.reset(&trace.user_id, self.config.warm_start_len)?;
        let s1_text = self.state_text(env, &s1);
        trace.reflections_used = self.retrieve_reflections(memories.view(), &s1_text)?;

        let mut state = s1.clone();
        let mut history: Vec<HistoryStep> = Vec::new();
        let mut cached_v: Option<(f64, bool)> = None;
        while !state.done {
            let thought = self.plan(env, &state, &history, &trace.reflections_used, &mut seeds)?;
            let (action, raw) = self.act(env, memories.view(), &state, &history, &thought, &mut seeds)?;
            let outcome = env.step(&state, &action)?;
            trace.steps.push(TraceStep {
                episode: trace.episode,
                user_id: trace.user_id.clone(),
                step_index: state.step_index,
                state_digest: state.digest(),
                thought: thought.clone(),
                raw_action: raw,
                action: action.clone(),
                reward: outcome.reward,
                done: outcome.done,
                quit_reason: outcome.quit_reason,
            });
            trace.quit_reason = outcome.quit_reason;
            if let MemoryAccess::Writable(mem) = memories {
                if let Some((rec, v_next)) = self.micro_step_update(
                    env,
                    mem,
                    &state,
                    &action,
                    outcome.reward,
                    &outcome.next_state,
                    cached_v,
                    &mut seeds,
                )? {
                    cached_v = Some((v_next, rec.flagged));
                    trace.advantages.push(rec);
                }
            }
            let title = env.catalog().get(&action).map_or(action.clone(), |r| r.title.clone());
            history.push(HistoryStep {
                thought,
                action: title,
                observation: render_observation(outcome.reward, outcome.quit_reason),
            });
            state = outcome.next_state;
        }

        if learning && self.config.macro_enabled {
            match self.reflect(env, &s1, &history, &mut seeds) {
                Ok(text) => {
                    if let MemoryAccess::Writable(mem) = memories {
                        let enc = self.encoder().clone();
                        mem.planner.insert_text(enc.as_ref(), &s1_text, Payload::Reflection { text: text.clone() })?;
                    }
                    trace.reflection = Some(text);
                }
                Err(e) => log::warn!("reflection skipped for episode {}: {e}", trace.episode),
            }
        }
        Ok(())
    }
}

fn strip_label(s: &str, label: &str) -> String {
    let t = s.trim();
    let lower = t.to_ascii_lowercase();
    let t = match lower.strip_prefix(label) {
        Some(rest) if rest.starts_with(':') => t[label.len() + 1..].trim(),
        _ => t,
    };
    t.to_string()
}

/// The agent with frozen memories, acting from any state. Earlier steps of
/// the state appear in the prompt without their thoughts.
#[derive(Debug, Clone, Copy)]
pub struct FrozenActor<'a> {
    pub agent: &'a Agent,
    pub memories: &'a Memories,
}

impl Policy for FrozenActor<'_> {
    fn choose(&self, env: &Environment, state: &State, seed: u64) -> Result<String, AgentError> {
        let mut seeds = CallSeeds::new(seed);
        let mut s1 = state.clone();
        s1.history.clear();
        s1.step_index = 1;
        s1.done = false;
        let reflections = self.agent.retrieve_reflections(self.memories, &self.agent.state_text(env, &s1))?;
        let history: Vec<HistoryStep> = state
            .history
            .iter()
            .map(|c| HistoryStep {
                thought: String::new(),
                action: env.catalog().get(&c.item_id).map_or(c.item_id.clone(), |r| r.title.clone()),
                observation: render_observation(c.reward, QuitReason::None),
            })
            .collect();
        let thought = self.agent.plan(env, state, &history, &reflections, &mut seeds)?;
        Ok(self.agent.act(env, self.memories, state, &history, &thought, &mut seeds)?.0)
    }
}
