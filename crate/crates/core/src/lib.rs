//! Bi-level LLM planning for long-term interactive recommendation.
//!
//! The crate is split along the data flow of an experiment:
//!
//! * [`catalog`] ingests offline logs, filters and splits them, and trains the
//!   reward scorer that backs the simulated users.
//! * [`env`] is the simulated user: it scores a recommended item and decides
//!   whether the user quits (too-similar item, low reward, or round limit).
//! * [`memory`] holds the three embedding-keyed experience stores used by the
//!   agent (reflections, actor experiences, critic value estimates).
//! * [`llm`] is the chat-completion gateway: HTTP backends, a deterministic
//!   scripted stub, prompt templates and output parsers.
//! * [`agent`] is the planner / reflector / actor / critic loop.
//! * [`harness`] runs training and evaluation, computes metrics, the
//!   Monte-Carlo value oracle, popularity analysis, sweeps, and the CLI.
//!
//! Data-parallel loops (retrieval scans, grounding, Monte-Carlo rollouts,
//! frozen-memory evaluation) go through [`parallel`], which uses rayon when the
//! `parallel` feature is enabled and a sequential loop otherwise. Results are
//! identical in both modes.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod catalog;
pub mod env;
pub mod harness;
pub mod llm;
pub mod memory;
pub mod parallel;

pub use agent::{Agent, AgentConfig};
pub use catalog::{ItemCatalog, Scorer};
pub use env::{EnvConfig, Environment, QuitReason, State};
