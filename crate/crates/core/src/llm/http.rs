//! OpenAI-compatible chat-completions client.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, LlmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    /// Sustained request rate; `None` disables the limiter.
    pub requests_per_second: Option<f64>,
    pub burst: u32,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            timeout_secs: 120,
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
            requests_per_second: None,
            burst: 1,
        }
    }
}

/// Blocking token bucket.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(rate: f64, burst: u32) -> Self {
        let capacity = f64::from(burst.max(1));
        Self { rate, capacity, state: Mutex::new((capacity, Instant::now())) }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().expect("bucket lock");
                let now = Instant::now();
                st.0 = (st.0 + now.duration_since(st.1).as_secs_f64() * self.rate).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                (1.0 - st.0) / self.rate
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

#[derive(Debug)]
pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    config: HttpConfig,
    agent: ureq::Agent,
    bucket: Option<TokenBucket>,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(LlmError),
}

impl HttpBackend {
    /// `base_url` is the API root, e.g. `https://api.openai.com/v1`.
    pub fn new(base_url: &str, api_key: Option<String>, config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        let bucket = config.requests_per_second.filter(|r| *r > 0.0).map(|r| TokenBucket::new(r, config.burst));
        Self {
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            config,
            agent,
            bucket,
        }
    }

    fn body(request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": request.model_id,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Attempt {
        if let Some(b) = &self.bucket {
            b.acquire();
        }
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(format!("transport: {e}")),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading body: {e}")),
        };
        match status {
            200..=299 => match extract_content(&text) {
                Ok(c) => Attempt::Done(c),
                Err(e) => Attempt::Fatal(e),
            },
            401 | 403 => Attempt::Fatal(LlmError::Auth(format!("status {status}: {}", snippet(&text)))),
            408 | 409 | 429 | 500..=599 => Attempt::Retry(format!("status {status}: {}", snippet(&text))),
            _ => Attempt::Fatal(LlmError::Http { status, body: snippet(&text) }),
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let ms = self.config.base_delay_ms.saturating_mul(1u64 << attempt.min(20)).min(self.config.max_delay_ms);
        Duration::from_millis(ms)
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(300).collect()
}

fn extract_content(text: &str) -> Result<String, LlmError> {
    let v: Value = serde_json::from_str(text).map_err(|e| LlmError::Decode(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::Decode(format!("no choices[0].message.content in {}", snippet(text))))
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let body = Self::body(request);
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for i in 0..attempts {
            match self.attempt(&body) {
                Attempt::Done(c) => return Ok(c),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => {
                    log::warn!("llm call attempt {} failed: {msg}", i + 1);
                    last = msg;
                    if i + 1 < attempts {
                        std::thread::sleep(self.delay(i));
                    }
                }
            }
        }
        Err(LlmError::RetriesExhausted { attempts, last })
    }
}
