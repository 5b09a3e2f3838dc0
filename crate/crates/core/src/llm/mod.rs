//! Chat-completion gateway: one request type, pluggable backends, and the
//! prompt templates and output parsers the agent relies on.

mod http;
mod parse;
mod prompt;
mod stub;

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig, TokenBucket};
pub use parse::{parse_action, parse_value, ParseError};
pub use prompt::{
    format_experiences, format_history, format_reflections, HistoryStep, PromptError, PromptTemplate, Slots,
    TemplateId, TemplateSet, SLOT_NAMES,
};
pub use stub::{Matcher, Responder, StubBackend, StubRule, StubScript};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("prompt of {prompt_chars} chars (~{estimated_tokens} tokens) exceeds the context limit of {limit_tokens} tokens")]
    ContextOverflow { prompt_chars: usize, estimated_tokens: usize, limit_tokens: usize },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("stub script: {0}")]
    Script(String),
    #[error("configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
    /// Sampling seed; forwarded to backends that accept one.
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!("temperature {} must be finite and >= 0", self.temperature)));
        }
        Ok(())
    }

    /// All message contents joined by newlines; what the stub matches on.
    pub fn rendered(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }

    pub fn prompt_chars(&self) -> usize {
        self.messages.iter().map(|m| m.content.chars().count()).sum()
    }
}

/// Rough token estimate used by the local context guard.
pub fn estimate_tokens(chars: usize) -> usize {
    chars.div_ceil(4)
}

pub trait ChatBackend: Send + Sync + fmt::Debug {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub role: TemplateId,
    pub model_id: String,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub prompt: String,
    pub response: Option<String>,
    pub error: Option<String>,
}

/// In-memory record of every gateway call, optionally mirrored to a JSONL file.
#[derive(Debug, Default)]
pub struct AuditLog {
    records: Mutex<Vec<AuditRecord>>,
    mirror: Option<Mutex<BufWriter<File>>>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mirrored(path: &Path) -> std::io::Result<Self> {
        let f = File::create(path)?;
        Ok(Self { records: Mutex::default(), mirror: Some(Mutex::new(BufWriter::new(f))) })
    }

    fn push(&self, rec: AuditRecord) {
        if let Some(m) = &self.mirror {
            let mut w = m.lock().expect("audit mirror lock");
            let line = serde_json::to_string(&rec).unwrap_or_default();
            if writeln!(w, "{line}").and_then(|_| w.flush()).is_err() {
                log::warn!("failed to mirror audit record");
            }
        }
        self.records.lock().expect("audit lock").push(rec);
    }

    pub fn records(&self) -> Vec<AuditRecord> {
        self.records.lock().expect("audit lock").clone()
    }

    /// Records in a canonical order (seed, role, prompt), independent of
    /// how concurrent calls interleaved.
    pub fn sorted_records(&self) -> Vec<AuditRecord> {
        let mut out = self.records();
        out.sort_by(|a, b| {
            (a.seed, a.role, &a.prompt, &a.response).cmp(&(b.seed, b.role, &b.prompt, &b.response))
        });
        out
    }

    pub fn count(&self, role: TemplateId) -> usize {
        self.records.lock().expect("audit lock").iter().filter(|r| r.role == role).count()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("audit lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        if self.limit > 0 {
            let mut used = self.used.lock().expect("in-flight lock");
            while *used >= self.limit {
                used = self.freed.wait(used).expect("in-flight wait");
            }
            *used += 1;
        }
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        if self.0.limit > 0 {
            *self.0.used.lock().expect("in-flight lock") -= 1;
            self.0.freed.notify_one();
        }
    }
}

/// Shareable handle every LLM call goes through: validates the request,
/// enforces the context limit before touching the backend, bounds concurrency
/// and records the call.
#[derive(Debug, Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    context_limit_tokens: Option<usize>,
    audit: Arc<AuditLog>,
    in_flight: Arc<InFlight>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            context_limit_tokens: None,
            audit: Arc::new(AuditLog::new()),
            in_flight: Arc::new(InFlight { limit: 0, used: Mutex::new(0), freed: Condvar::new() }),
        }
    }

    pub fn with_context_limit(mut self, tokens: usize) -> Self {
        self.context_limit_tokens = Some(tokens);
        self
    }

    pub fn with_audit(mut self, audit: Arc<AuditLog>) -> Self {
        self.audit = audit;
        self
    }

    /// `0` means unbounded.
    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.in_flight = Arc::new(InFlight { limit, used: Mutex::new(0), freed: Condvar::new() });
        self
    }

    pub fn audit(&self) -> &Arc<AuditLog> {
        &self.audit
    }

    pub fn complete(&self, role: TemplateId, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        if let Some(limit) = self.context_limit_tokens {
            let chars = request.prompt_chars();
            let est = estimate_tokens(chars);
            if est > limit {
                return Err(LlmError::ContextOverflow { prompt_chars: chars, estimated_tokens: est, limit_tokens: limit });
            }
        }
        let result = {
            let _permit = self.in_flight.acquire();
            self.backend.complete(request)
        };
        self.audit.push(AuditRecord {
            role,
            model_id: request.model_id.clone(),
            temperature: request.temperature,
            seed: request.seed,
            prompt: request.rendered(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(|e| e.to_string()),
        });
        result
    }
}

/// Backend selection as it appears in the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    Stub {
        script: PathBuf,
    },
    OpenAi {
        #[serde(default = "default_openai_url")]
        base_url: String,
        #[serde(default = "default_key_env")]
        api_key_env: String,
        #[serde(default)]
        http: HttpConfig,
    },
    Local {
        #[serde(default = "default_local_url")]
        base_url: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        http: HttpConfig,
    },
}

fn default_openai_url() -> String {
    "https://api.openai.com/v1".into()
}

fn default_local_url() -> String {
    "http://127.0.0.1:8000/v1".into()
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

impl BackendConfig {
    /// Builds the backend. `base_dir` resolves a relative stub-script path;
    /// `seed` feeds the stub.
    pub fn build(&self, base_dir: &Path, seed: u64) -> Result<Arc<dyn ChatBackend>, LlmError> {
        Ok(match self {
            BackendConfig::Stub { script } => {
                let path = if script.is_relative() { base_dir.join(script) } else { script.clone() };
                Arc::new(StubBackend::new(StubScript::load(&path)?, seed))
            }
            BackendConfig::OpenAi { base_url, api_key_env, http } => {
                let key = std::env::var(api_key_env)
                    .map_err(|_| LlmError::Config(format!("environment variable {api_key_env} is not set")))?;
                Arc::new(HttpBackend::new(base_url, Some(key), http.clone()))
            }
            BackendConfig::Local { base_url, api_key_env, http } => {
                let key = api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
                Arc::new(HttpBackend::new(base_url, key, http.clone()))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str) -> ChatRequest {
        ChatRequest {
            messages: vec![ChatMessage::user(text)],
            temperature: 0.5,
            max_tokens: 64,
            model_id: "m".into(),
            seed: Some(1),
        }
    }

    fn echo_gateway() -> Gateway {
        let script = StubScript::new(vec![StubRule::catch_all(Responder::Fixed("canned".into()))]).unwrap();
        Gateway::new(Arc::new(StubBackend::new(script, 0)))
    }

    #[test]
    fn validation() {
        let g = echo_gateway();
        let mut r = req("x");
        r.messages.clear();
        assert!(matches!(g.complete(TemplateId::Actor, &r), Err(LlmError::InvalidRequest(_))));
        let mut r = req("x");
        r.temperature = f64::NAN;
        assert!(g.complete(TemplateId::Actor, &r).is_err());
    }

    #[test]
    fn context_guard_fires_before_backend() {
        let g = echo_gateway().with_context_limit(10);
        let err = g.complete(TemplateId::Planner, &req(&"x".repeat(100))).unwrap_err();
        match err {
            LlmError::ContextOverflow { prompt_chars, estimated_tokens, limit_tokens } => {
                assert_eq!((prompt_chars, estimated_tokens, limit_tokens), (100, 25, 10));
            }
            e => panic!("{e}"),
        }
        assert!(g.audit().is_empty());
        assert_eq!(g.complete(TemplateId::Planner, &req("short")).unwrap(), "canned");
    }

    #[test]
    fn audit_counts_by_role_and_mirrors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let g = echo_gateway().with_audit(Arc::new(AuditLog::mirrored(&path).unwrap())).with_max_in_flight(2);
        g.complete(TemplateId::Critic, &req("a")).unwrap();
        g.complete(TemplateId::Actor, &req("b")).unwrap();
        g.complete(TemplateId::Actor, &req("c")).unwrap();
        assert_eq!(g.audit().count(TemplateId::Actor), 2);
        assert_eq!(g.audit().count(TemplateId::Critic), 1);
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3);
    }

    #[test]
    fn in_flight_limit_is_respected() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        #[derive(Debug, Default)]
        struct Slow {
            now: AtomicUsize,
            peak: AtomicUsize,
        }
        impl ChatBackend for Slow {
            fn complete(&self, _: &ChatRequest) -> Result<String, LlmError> {
                let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(n, Ordering::SeqCst);
                std::thread::sleep(std::time::Duration::from_millis(5));
                self.now.fetch_sub(1, Ordering::SeqCst);
                Ok(String::new())
            }
        }
        let slow = Arc::new(Slow::default());
        let g = Gateway::new(slow.clone()).with_max_in_flight(2);
        std::thread::scope(|s| {
            for _ in 0..8 {
                let g = g.clone();
                s.spawn(move || g.complete(TemplateId::Actor, &req("x")).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
    }
}
