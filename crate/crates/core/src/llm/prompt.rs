//! Prompt templates with named `{slot}` placeholders.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template {template} uses slot {{{slot}}} but no value was bound")]
    UnboundSlot { template: String, slot: String },
    #[error("cannot read template {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateId {
    Planner,
    Reflector,
    Actor,
    Critic,
}

impl TemplateId {
    pub const ALL: [TemplateId; 4] = [TemplateId::Planner, TemplateId::Reflector, TemplateId::Actor, TemplateId::Critic];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::Planner => "planner",
            TemplateId::Reflector => "reflector",
            TemplateId::Actor => "actor",
            TemplateId::Critic => "critic",
        }
    }
}

/// Recognised placeholder names. Anything else in braces is literal text.
pub const SLOT_NAMES: [&str; 7] = ["reflections", "history", "state", "thought", "experiences", "tool_output", "few_shot"];

pub type Slots = BTreeMap<&'static str, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: String,
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn pieces(body: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if SLOT_NAMES.contains(&&after[..close]) => {
                out.push(Piece::Text(&rest[..open]));
                out.push(Piece::Slot(&after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                out.push(Piece::Text(&rest[..=open]));
                rest = after;
            }
        }
    }
    out.push(Piece::Text(rest));
    out
}

impl PromptTemplate {
    pub fn new(id: TemplateId, body: impl Into<String>) -> Self {
        Self { id, body: body.into() }
    }

    /// Slots the body refers to, in first-use order.
    pub fn slots(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for p in pieces(&self.body) {
            if let Piece::Slot(s) = p {
                if !seen.contains(&s) {
                    seen.push(s);
                }
            }
        }
        seen
    }

    /// Substitutes every placeholder. Extra bindings are ignored.
    pub fn render(&self, slots: &Slots) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.body.len() + 256);
        for p in pieces(&self.body) {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => match slots.get(s) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(PromptError::UnboundSlot { template: self.id.name().into(), slot: s.into() });
                    }
                },
            }
        }
        Ok(out)
    }
}

/// One template per role. Defaults ship with the crate; a directory may
/// override any of `planner.txt`, `reflector.txt`, `actor.txt`, `critic.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

const PLANNER: &str = include_str!("../../assets/prompts/planner.txt");
const REFLECTOR: &str = include_str!("../../assets/prompts/reflector.txt");
const ACTOR: &str = include_str!("../../assets/prompts/actor.txt");
const CRITIC: &str = include_str!("../../assets/prompts/critic.txt");
const PLANNER_FEW_SHOT: &str = include_str!("../../assets/prompts/planner_few_shot.txt");
const ACTOR_FEW_SHOT: &str = include_str!("../../assets/prompts/actor_few_shot.txt");

impl Default for TemplateSet {
    fn default() -> Self {
        let templates = [
            (TemplateId::Planner, PLANNER),
            (TemplateId::Reflector, REFLECTOR),
            (TemplateId::Actor, ACTOR),
            (TemplateId::Critic, CRITIC),
        ]
        .into_iter()
        .map(|(id, body)| (id, PromptTemplate::new(id, body)))
        .collect();
        Self { templates }
    }
}

impl TemplateSet {
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::default();
        for id in TemplateId::ALL {
            let path = dir.join(format!("{}.txt", id.name()));
            if path.exists() {
                let body = std::fs::read_to_string(&path)
                    .map_err(|e| PromptError::Io { path: path.display().to_string(), reason: e.to_string() })?;
                set.templates.insert(id, PromptTemplate::new(id, body));
            }
        }
        Ok(set)
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn set(&mut self, template: PromptTemplate) {
        self.templates.insert(template.id, template);
    }

    pub fn planner_few_shot() -> &'static str {
        PLANNER_FEW_SHOT.trim_end()
    }

    pub fn actor_few_shot() -> &'static str {
        ACTOR_FEW_SHOT.trim_end()
    }
}

/// Numbered reflections, or `none` when there are none yet.
pub fn format_reflections<S: AsRef<str>>(reflections: &[S]) -> String {
    if reflections.is_empty() {
        return "none".into();
    }
    let mut out = String::new();
    for (i, r) in reflections.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(out, "[{}] {}", i + 1, r.as_ref().trim());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryStep {
    pub thought: String,
    pub action: String,
    pub observation: String,
}

/// Thought/Action/Observation blocks, numbered from 1.
pub fn format_history(steps: &[HistoryStep]) -> String {
    if steps.is_empty() {
        return "(no steps yet)".into();
    }
    let mut out = String::new();
    for (i, s) in steps.iter().enumerate() {
        let n = i + 1;
        if i > 0 {
            out.push('\n');
        }
        let thought = if s.thought.is_empty() { "-" } else { s.thought.as_str() };
        let _ = write!(out, "Thought {n}: {thought}\nAction {n}: {}\nObservation {n}: {}", s.action, s.observation);
    }
    out
}

/// Retrieved experiences as `key | label: value` lines.
pub fn format_experiences<S: AsRef<str>>(rows: &[(S, String)], label: &str) -> String {
    if rows.is_empty() {
        return "(none)".into();
    }
    let mut out = String::new();
    for (i, (key, val)) in rows.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(out, "- {} | {label}: {val}", key.as_ref());
    }
    out
}
