//! Experiment configuration file and command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::agent::AgentConfig;
use crate::env::EnvConfig;
use crate::llm::BackendConfig;
use crate::memory::DEFAULT_DIM;
use crate::parallel::Execution;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train_episodes: usize,
    pub eval_episodes: usize,
    pub seeds: usize,
    /// When set, `env.beta` is replaced by this percentile of pairwise item distances.
    pub beta_percentile: Option<f64>,
    pub execution: Execution,
    pub max_in_flight: usize,
    pub context_limit_tokens: Option<usize>,
    pub encoder_dim: usize,
    /// Directory of prompt overrides (`planner.txt`, ...).
    pub templates_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_episodes: 100,
            eval_episodes: 100,
            seeds: 3,
            beta_percentile: None,
            execution: Execution::default(),
            max_in_flight: 8,
            context_limit_tokens: Some(16_000),
            encoder_dim: DEFAULT_DIM,
            templates_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Dataset manifest; relative to the config file.
    pub manifest: PathBuf,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    pub backend: BackendConfig,
    #[serde(default)]
    pub run: RunConfig,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), HarnessError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| HarnessError::Config(format!("bad key `{key}`")))?;
    let mut cur = table;
    for p in parts {
        let next = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = next.as_table_mut().ok_or_else(|| HarnessError::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parses `key=value`; the value is read as TOML, falling back to a string.
fn parse_override(s: &str) -> Result<(String, toml::Value), HarnessError> {
    let (k, v) = s.split_once('=').ok_or_else(|| HarnessError::Config(format!("override `{s}` is not key=value")))?;
    let v = v.trim();
    let value = toml::from_str::<toml::Table>(&format!("x = {v}"))
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = parse_override(o)?;
            set_path(&mut table, &k, v)?;
        }
        let mut cfg: Self = table.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base, overrides)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.version != CONFIG_VERSION {
            return Err(HarnessError::Config(format!("unsupported config version {}", self.version)));
        }
        let r = &self.run;
        if r.train_episodes == 0 && r.eval_episodes == 0 {
            return Err(HarnessError::Config("train_episodes and eval_episodes are both 0".into()));
        }
        if r.seeds == 0 {
            return Err(HarnessError::Config("seeds must be >= 1".into()));
        }
        if r.encoder_dim == 0 {
            return Err(HarnessError::Config("encoder_dim must be >= 1".into()));
        }
        if let Some(p) = r.beta_percentile {
            if !(0.0..=100.0).contains(&p) {
                return Err(HarnessError::Config(format!("beta_percentile {p} outside [0, 100]")));
            }
        }
        self.env.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.agent.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() { self.base_dir.join(p) } else { p.to_path_buf() }
    }

    /// Short hash of the effective configuration, stamped on reports.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
        manifest = "data/manifest.toml"
        [backend]
        kind = "stub"
        script = "stub.toml"
    "#;

    #[test]
    fn defaults_and_overrides() {
        let c = ExperimentConfig::from_toml(BASIC, Path::new("/x"), &[]).unwrap();
        assert_eq!((c.run.train_episodes, c.run.eval_episodes, c.run.seeds), (100, 100, 3));
        assert_eq!(c.agent.k, 2);
        assert_eq!(c.resolve(&c.manifest), PathBuf::from("/x/data/manifest.toml"));
        let o = ["run.seeds=1", "agent.macro_enabled=false", "env.window = 8", "agent.model=gpt-4"].map(String::from);
        let c2 = ExperimentConfig::from_toml(BASIC, Path::new("/x"), &o).unwrap();
        assert_eq!((c2.run.seeds, c2.agent.macro_enabled, c2.env.window), (1, false, 8));
        assert_eq!(c2.agent.model, "gpt-4");
        assert_ne!(c.hash(), c2.hash());
        assert_eq!(c.hash(), ExperimentConfig::from_toml(BASIC, Path::new("/x"), &[]).unwrap().hash());
    }

    #[test]
    fn rejects_bad_input() {
        let bad = |extra: &[&str]| {
            let o: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
            ExperimentConfig::from_toml(BASIC, Path::new("."), &o).is_err()
        };
        assert!(bad(&["run.seeds=0"]));
        assert!(bad(&["agent.gamma=2.0"]));
        assert!(bad(&["env.window=0"]));
        assert!(bad(&["nonsense=1"]));
        assert!(bad(&["noequals"]));
        assert!(bad(&["manifest.x=1"]));
        assert!(ExperimentConfig::from_toml("manifest = 1", Path::new("."), &[]).is_err());
    }
}
