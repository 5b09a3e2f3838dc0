//! Scripted backend for tests and offline runs.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{ChatBackend, ChatRequest, LlmError};
use crate::parallel::{derive_seed, fnv1a64, stream};

/// Prompt predicate: every `all` substring present, no `none` substring present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matcher {
    pub all: Vec<String>,
    pub none: Vec<String>,
}

impl Matcher {
    pub fn contains(s: impl Into<String>) -> Self {
        Self { all: vec![s.into()], none: Vec::new() }
    }

    pub fn and_not(mut self, s: impl Into<String>) -> Self {
        self.none.push(s.into());
        self
    }

    pub fn and(mut self, s: impl Into<String>) -> Self {
        self.all.push(s.into());
        self
    }

    pub fn is_catch_all(&self) -> bool {
        self.all.is_empty() && self.none.is_empty()
    }

    pub fn matches(&self, prompt: &str) -> bool {
        self.all.iter().all(|s| prompt.contains(s.as_str())) && !self.none.iter().any(|s| prompt.contains(s.as_str()))
    }
}

pub type CustomFn = dyn Fn(&str, &mut ChaCha8Rng) -> String + Send + Sync;

#[derive(Clone)]
pub enum Responder {
    Fixed(String),
    /// Weighted draw from the seeded call RNG.
    Choice(Vec<(f64, String)>),
    /// `texts[k % len]` where `k` counts occurrences of `counter` in the prompt.
    Cycle { texts: Vec<String>, counter: String },
    /// Reads the numbers that follow each `marker` and answers `VALUE: <mean>`.
    /// With `resample`, the mean is over a bootstrap draw of the same size.
    /// `fallback` is returned when the prompt carries no marked number.
    ExemplarMean { marker: String, resample: bool, fallback: String },
    Custom(Arc<CustomFn>),
}

impl fmt::Debug for Responder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Responder::Fixed(t) => f.debug_tuple("Fixed").field(t).finish(),
            Responder::Choice(c) => f.debug_tuple("Choice").field(c).finish(),
            Responder::Cycle { texts, counter } => {
                f.debug_struct("Cycle").field("texts", texts).field("counter", counter).finish()
            }
            Responder::ExemplarMean { marker, resample, fallback } => f
                .debug_struct("ExemplarMean")
                .field("marker", marker)
                .field("resample", resample)
                .field("fallback", fallback)
                .finish(),
            Responder::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

fn marked_numbers(prompt: &str, marker: &str) -> Vec<f64> {
    prompt
        .match_indices(marker)
        .filter_map(|(i, m)| {
            let rest = prompt[i + m.len()..].trim_start();
            let end = rest
                .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
                .unwrap_or(rest.len());
            rest[..end].parse::<f64>().ok().filter(|v| v.is_finite())
        })
        .collect()
}

impl Responder {
    fn respond(&self, prompt: &str, rng: &mut ChaCha8Rng) -> String {
        match self {
            Responder::Fixed(t) => t.clone(),
            Responder::Choice(options) => {
                let total: f64 = options.iter().map(|(w, _)| w).sum();
                let mut x = rng.random::<f64>() * total;
                for (w, t) in options {
                    if x < *w {
                        return t.clone();
                    }
                    x -= w;
                }
                options.last().map(|(_, t)| t.clone()).unwrap_or_default()
            }
            Responder::Cycle { texts, counter } => {
                let k = prompt.matches(counter.as_str()).count();
                texts[k % texts.len()].clone()
            }
            Responder::ExemplarMean { marker, resample, fallback } => {
                let values = marked_numbers(prompt, marker);
                if values.is_empty() {
                    return fallback.clone();
                }
                let n = values.len();
                let mean = if *resample {
                    (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64
                } else {
                    values.iter().sum::<f64>() / n as f64
                };
                format!("VALUE: {mean}")
            }
            Responder::Custom(f) => f(prompt, rng),
        }
    }

    fn validate(&self) -> Result<(), LlmError> {
        match self {
            Responder::Choice(o) if o.is_empty() => Err(LlmError::Script("choice responder has no options".into())),
            Responder::Choice(o) if o.iter().any(|(w, _)| !(w.is_finite() && *w >= 0.0)) => {
                Err(LlmError::Script("choice weights must be finite and >= 0".into()))
            }
            Responder::Choice(o) if o.iter().map(|(w, _)| w).sum::<f64>() <= 0.0 => {
                Err(LlmError::Script("choice weights sum to zero".into()))
            }
            Responder::Cycle { texts, .. } if texts.is_empty() => Err(LlmError::Script("cycle responder has no texts".into())),
            Responder::Cycle { counter, .. } if counter.is_empty() => Err(LlmError::Script("cycle counter is empty".into())),
            Responder::ExemplarMean { marker, .. } if marker.is_empty() => {
                Err(LlmError::Script("exemplar marker is empty".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StubRule {
    pub matcher: Matcher,
    pub responder: Responder,
}

impl StubRule {
    pub fn new(matcher: Matcher, responder: Responder) -> Self {
        Self { matcher, responder }
    }

    pub fn catch_all(responder: Responder) -> Self {
        Self { matcher: Matcher::default(), responder }
    }
}

/// Ordered rules; the first matching rule answers. A catch-all is required
/// so that every prompt gets a response.
#[derive(Debug, Clone)]
pub struct StubScript {
    rules: Vec<StubRule>,
    seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    #[serde(default)]
    seed: u64,
    rules: Vec<RuleFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChoiceFile {
    text: String,
    #[serde(default = "one")]
    weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExemplarFile {
    marker: String,
    #[serde(default)]
    resample: bool,
    #[serde(default)]
    fallback: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    #[serde(default)]
    contains: Vec<String>,
    #[serde(default)]
    not_contains: Vec<String>,
    response: Option<String>,
    choices: Option<Vec<ChoiceFile>>,
    cycle: Option<Vec<String>>,
    counter: Option<String>,
    exemplar_mean: Option<ExemplarFile>,
}

impl RuleFile {
    fn into_rule(self, idx: usize) -> Result<StubRule, LlmError> {
        let mut found = Vec::new();
        if let Some(t) = self.response {
            found.push(Responder::Fixed(t));
        }
        if let Some(c) = self.choices {
            found.push(Responder::Choice(c.into_iter().map(|c| (c.weight, c.text)).collect()));
        }
        if let Some(texts) = self.cycle {
            let counter = self.counter.ok_or_else(|| LlmError::Script(format!("rule {idx}: cycle needs a counter")))?;
            found.push(Responder::Cycle { texts, counter });
        }
        if let Some(e) = self.exemplar_mean {
            found.push(Responder::ExemplarMean { marker: e.marker, resample: e.resample, fallback: e.fallback });
        }
        if found.len() != 1 {
            return Err(LlmError::Script(format!("rule {idx}: exactly one responder kind is required, found {}", found.len())));
        }
        Ok(StubRule { matcher: Matcher { all: self.contains, none: self.not_contains }, responder: found.remove(0) })
    }
}

impl StubScript {
    pub fn new(rules: Vec<StubRule>) -> Result<Self, LlmError> {
        if !rules.iter().any(|r| r.matcher.is_catch_all()) {
            return Err(LlmError::Script("script needs a catch-all rule".into()));
        }
        for r in &rules {
            r.responder.validate()?;
        }
        Ok(Self { rules, seed: 0 })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self, LlmError> {
        let file: ScriptFile = toml::from_str(text).map_err(|e| LlmError::Script(e.to_string()))?;
        let rules = file.rules.into_iter().enumerate().map(|(i, r)| r.into_rule(i)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(rules)?.with_seed(file.seed))
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Script(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn rules(&self) -> &[StubRule] {
        &self.rules
    }
}

/// Deterministic given the script, the run seed and the request.
#[derive(Debug, Clone)]
pub struct StubBackend {
    script: StubScript,
    seed: u64,
}

impl StubBackend {
    pub fn new(script: StubScript, seed: u64) -> Self {
        Self { script, seed }
    }
}

impl ChatBackend for StubBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let prompt = request.rendered();
        let rule = self
            .script
            .rules
            .iter()
            .find(|r| r.matcher.matches(&prompt))
            .ok_or_else(|| LlmError::Script("no rule matched".into()))?;
        let base = derive_seed(self.seed, stream::STUB, self.script.seed);
        let call = fnv1a64(prompt.as_bytes()) ^ request.seed.unwrap_or(0).rotate_left(17);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, stream::STUB, call));
        Ok(rule.responder.respond(&prompt, &mut rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ChatMessage;

    fn req(text: &str, seed: u64) -> ChatRequest {
        ChatRequest {
            messages: vec![ChatMessage::user(text)],
            temperature: 0.5,
            max_tokens: 32,
            model_id: "stub".into(),
            seed: Some(seed),
        }
    }

    #[test]
    fn requires_catch_all() {
        let r = StubScript::new(vec![StubRule::new(Matcher::contains("x"), Responder::Fixed("y".into()))]);
        assert!(matches!(r, Err(LlmError::Script(_))));
    }

    #[test]
    fn first_match_wins() {
        let s = StubScript::new(vec![
            StubRule::new(Matcher::contains("PLANNER").and_not("diversity"), Responder::Fixed("repeat".into())),
            StubRule::new(Matcher::contains("PLANNER"), Responder::Fixed("diverse".into())),
            StubRule::catch_all(Responder::Fixed("other".into())),
        ])
        .unwrap();
        let b = StubBackend::new(s, 0);
        assert_eq!(b.complete(&req("PLANNER x", 0)).unwrap(), "repeat");
        assert_eq!(b.complete(&req("PLANNER diversity", 0)).unwrap(), "diverse");
        assert_eq!(b.complete(&req("ACTOR", 0)).unwrap(), "other");
    }

    #[test]
    fn choice_is_seeded() {
        let s = StubScript::new(vec![StubRule::catch_all(Responder::Choice(vec![
            (1.0, "a".into()),
            (1.0, "b".into()),
            (2.0, "c".into()),
        ]))])
        .unwrap();
        let b = StubBackend::new(s.clone(), 3);
        let draws: Vec<String> = (0..200).map(|i| b.complete(&req("p", i)).unwrap()).collect();
        let again: Vec<String> = (0..200).map(|i| b.complete(&req("p", i)).unwrap()).collect();
        assert_eq!(draws, again);
        let c = draws.iter().filter(|d| *d == "c").count();
        assert!((70..130).contains(&c), "{c}");
        let other: Vec<String> = (0..200).map(|i| StubBackend::new(s.clone(), 4).complete(&req("p", i)).unwrap()).collect();
        assert_ne!(draws, other);
    }

    #[test]
    fn cycle_counts_markers() {
        let s = StubScript::new(vec![StubRule::catch_all(Responder::Cycle {
            texts: vec!["a".into(), "b".into(), "c".into()],
            counter: "Obs".into(),
        })])
        .unwrap();
        let b = StubBackend::new(s, 0);
        let got: Vec<String> = (0..4).map(|k| b.complete(&req(&"Obs ".repeat(k), 0)).unwrap()).collect();
        assert_eq!(got, ["a", "b", "c", "a"]);
    }

    #[test]
    fn exemplar_mean() {
        let exact = Responder::ExemplarMean { marker: "| value:".into(), resample: false, fallback: "none".into() };
        let s = StubScript::new(vec![StubRule::catch_all(exact)]).unwrap();
        let b = StubBackend::new(s, 0);
        let p = "- s1 | value: 2\n- s2 | value: 4.5\n- s3 | value:6";
        assert_eq!(b.complete(&req(p, 0)).unwrap(), "VALUE: 4.166666666666667");
        assert_eq!(b.complete(&req("nothing", 0)).unwrap(), "none");

        let boot = Responder::ExemplarMean { marker: "| value:".into(), resample: true, fallback: "none".into() };
        let b = StubBackend::new(StubScript::new(vec![StubRule::catch_all(boot)]).unwrap(), 0);
        let vals: Vec<f64> = (0..300)
            .map(|i| crate::llm::parse_value(&b.complete(&req(p, i)).unwrap(), 100.0).unwrap())
            .collect();
        assert!(vals.iter().all(|v| (2.0..=6.0).contains(v)));
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - 12.5 / 3.0).abs() < 0.2, "{mean}");
    }

    #[test]
    fn toml_script() {
        let text = r#"
            seed = 9
            [[rules]]
            contains = ["CRITIC"]
            exemplar_mean = { marker = "| value:", resample = true, fallback = "VALUE: 0" }
            [[rules]]
            contains = ["ACTOR"]
            cycle = ["A", "B"]
            counter = "Observation"
            [[rules]]
            contains = ["PLANNER"]
            not_contains = ["diversity"]
            choices = [{ text = "x", weight = 2.0 }, { text = "y" }]
            [[rules]]
            response = "fallback"
        "#;
        let s = StubScript::from_toml(text).unwrap();
        assert_eq!(s.rules().len(), 4);
        let b = StubBackend::new(s, 0);
        assert_eq!(b.complete(&req("CRITIC", 0)).unwrap(), "VALUE: 0");
        assert_eq!(b.complete(&req("ACTOR Observation", 0)).unwrap(), "B");
        assert_eq!(b.complete(&req("hello", 0)).unwrap(), "fallback");

        let two = "[[rules]]\nresponse = \"a\"\ncycle = [\"b\"]\ncounter = \"c\"\n";
        assert!(StubScript::from_toml(two).is_err());
        assert!(StubScript::from_toml("[[rules]]\ncontains=[\"x\"]\nresponse=\"a\"\n").is_err());
    }
}
