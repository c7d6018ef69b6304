//! Engine configuration: a TOML file plus environment overrides.
//!
//! Any `TABRL_<SECTION>__<KEY>` variable overrides the matching key, with
//! `__` separating nesting levels (`TABRL_SANDBOX__LIMITS__WALL_TIMEOUT=5`).
//! Values are read as TOML literals and fall back to plain strings.
//! `JUDGE_URL` and `JUDGE_TOKEN` configure the LLM judge directly.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tabrl_core::codesim::{CodeBleu, CodeBleuWeights, DEFAULT_KEYWORD_WEIGHT, DEFAULT_MAX_N};
use tabrl_core::extraction::ExtractionConfig;
use tabrl_core::judge::JudgeConfig;
use tabrl_core::rewards::{RewardConfig, ScoringConfig};
use tabrl_core::rlmath::ClipConfig;
use tabrl_core::sandbox::{default_max_concurrent, ExecLimits};
use tabrl_core::Error;

pub const ENV_PREFIX: &str = "TABRL_";
pub const ENV_CONFIG: &str = "TABRL_CONFIG";
pub const ENV_JUDGE_URL: &str = "JUDGE_URL";
pub const ENV_JUDGE_TOKEN: &str = "JUDGE_TOKEN";

const REDACTED: &str = "<redacted>";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub dataset: Option<PathBuf>,
    pub service: ServiceConfig,
    pub sandbox: SandboxConfig,
    pub judge: JudgeConfig,
    pub rewards: RewardConfig,
    pub codesim: CodesimConfig,
    pub clip: ClipConfig,
    pub extraction: ExtractionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Request bodies above this size are refused with 413.
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            max_body_bytes: 64 << 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutorKind {
    /// Spawn the external runner per candidate.
    Process,
    /// Replay outcomes from `mock_script`; nothing is executed.
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxConfig {
    pub executor: ExecutorKind,
    /// Runner program followed by fixed leading arguments.
    pub runner: Vec<String>,
    pub mock_script: Option<PathBuf>,
    pub max_concurrent: usize,
    pub scratch_root: Option<PathBuf>,
    pub limits: ExecLimits,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            executor: ExecutorKind::Process,
            runner: vec!["tabrl-runner".into()],
            mock_script: None,
            max_concurrent: default_max_concurrent(),
            scratch_root: None,
            limits: ExecLimits::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodesimConfig {
    pub weights: CodeBleuWeights,
    /// One keyword per line; the built-in Python list when absent.
    pub keywords_file: Option<PathBuf>,
    pub keyword_weight: f64,
    pub max_n: usize,
}

impl Default for CodesimConfig {
    fn default() -> Self {
        Self {
            weights: CodeBleuWeights::default(),
            keywords_file: None,
            keyword_weight: DEFAULT_KEYWORD_WEIGHT,
            max_n: DEFAULT_MAX_N,
        }
    }
}

impl CodesimConfig {
    pub fn build(&self) -> Result<CodeBleu, Error> {
        if !(self.keyword_weight > 0.0 && self.keyword_weight.is_finite()) {
            return Err(Error::Config("codesim keyword_weight must be positive".into()));
        }
        if self.max_n == 0 {
            return Err(Error::Config("codesim max_n must be at least 1".into()));
        }
        let mut cb = CodeBleu::new(self.weights)?;
        if let Some(path) = &self.keywords_file {
            cb = cb.with_keywords_file(path)?;
        }
        cb.keyword_weight = self.keyword_weight;
        cb.max_n = self.max_n;
        Ok(cb)
    }
}

impl EngineConfig {
    /// Read `path` (or `$TABRL_CONFIG`, or defaults) and apply overrides
    /// from `env`. Relative paths in the file resolve against its directory.
    pub fn load<I>(path: Option<&Path>, env: I) -> Result<Self, Error>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let env: Vec<(String, String)> = env.into_iter().collect();
        let from_env = env.iter().find(|(k, _)| k == ENV_CONFIG).map(|(_, v)| PathBuf::from(v));
        let path = path.map(Path::to_path_buf).or(from_env);
        let mut value = match &path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("config file {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("config file {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        apply_env(&mut value, &env)?;
        let mut cfg: EngineConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(dir) = path.as_deref().and_then(Path::parent) {
            cfg.resolve_relative(dir);
        }
        Ok(cfg)
    }

    /// Load from the process environment.
    pub fn from_env(path: Option<&Path>) -> Result<Self, Error> {
        Self::load(path, std::env::vars())
    }

    fn resolve_relative(&mut self, dir: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = dir.join(&*path);
                }
            }
        };
        fix(&mut self.dataset);
        fix(&mut self.sandbox.mock_script);
        fix(&mut self.sandbox.scratch_root);
        fix(&mut self.codesim.keywords_file);
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.service
            .bind
            .parse::<SocketAddr>()
            .map_err(|e| Error::Config(format!("service bind {:?}: {e}", self.service.bind)))?;
        if self.service.max_body_bytes == 0 {
            return Err(Error::Config("service max_body_bytes must be > 0".into()));
        }
        self.sandbox.limits.validate()?;
        if self.sandbox.max_concurrent == 0 {
            return Err(Error::Config("sandbox max_concurrent must be at least 1".into()));
        }
        match self.sandbox.executor {
            ExecutorKind::Process if self.sandbox.runner.is_empty() => {
                return Err(Error::Config("sandbox runner must name a program".into()))
            }
            ExecutorKind::Mock if self.sandbox.mock_script.is_none() => {
                return Err(Error::Config("mock executor requires sandbox mock_script".into()))
            }
            _ => {}
        }
        self.judge.validate()?;
        if self.judge.max_inflight == 0 {
            return Err(Error::Config("judge max_inflight must be at least 1".into()));
        }
        self.rewards.validate()?;
        self.clip.validate()?;
        self.codesim.build()?;
        Ok(())
    }

    pub fn scoring(&self) -> Result<ScoringConfig, Error> {
        Ok(ScoringConfig {
            limits: self.sandbox.limits.clone(),
            rewards: self.rewards,
            extraction: self.extraction.clone(),
            codebleu: self.codesim.build()?,
            clip: self.clip,
        })
    }

    /// The configuration with secrets masked.
    pub fn redacted(&self) -> Self {
        let mut c = self.clone();
        if c.judge.llm_token.is_some() {
            c.judge.llm_token = Some(REDACTED.into());
        }
        c
    }
}

fn apply_env(table: &mut toml::Table, env: &[(String, String)]) -> Result<(), Error> {
    let mut vars: Vec<&(String, String)> = env.iter().collect();
    // Deterministic order so a scalar override and a nested one collide the same way every time.
    vars.sort();
    for (key, raw) in vars {
        if key == ENV_JUDGE_URL {
            let judge = subtable(table, "judge")?;
            judge.insert("llm_endpoint".into(), toml::Value::String(raw.clone()));
            judge.insert("use_llm_judge".into(), toml::Value::Boolean(true));
            continue;
        }
        if key == ENV_JUDGE_TOKEN {
            subtable(table, "judge")?.insert("llm_token".into(), toml::Value::String(raw.clone()));
            continue;
        }
        let Some(rest) = key.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        if key == ENV_CONFIG || rest.is_empty() {
            continue;
        }
        let parts: Vec<String> = rest.split("__").map(str::to_ascii_lowercase).collect();
        let (leaf, parents) = parts.split_last().expect("split yields at least one part");
        let mut t = &mut *table;
        for p in parents {
            t = subtable(t, p)?;
        }
        t.insert(leaf.clone(), env_value(raw));
    }
    Ok(())
}

fn subtable<'a>(t: &'a mut toml::Table, key: &str) -> Result<&'a mut toml::Table, Error> {
    t.entry(key.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("config key {key} is not a table")))
}

fn env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_validate() {
        let c = EngineConfig::load(None, env(&[])).unwrap();
        assert_eq!(c, EngineConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn file_and_env_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("engine.toml");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(
            f,
            "dataset = \"data/records.jsonl\"\n[rewards]\nlambda1 = 0.25\n[sandbox]\nexecutor = \"mock\"\nmock_script = \"mock.jsonl\"\n[sandbox.limits]\nwall_timeout = 3.0"
        )
        .unwrap();
        let c = EngineConfig::load(
            Some(&path),
            env(&[
                ("TABRL_REWARDS__LAMBDA2", "2.5"),
                ("TABRL_SANDBOX__LIMITS__WALL_TIMEOUT", "7"),
                ("TABRL_SERVICE__BIND", "0.0.0.0:9000"),
                ("JUDGE_URL", "http://judge.local/v1"),
                ("JUDGE_TOKEN", "s3cret"),
                ("UNRELATED", "x"),
            ]),
        )
        .unwrap();
        assert_eq!(c.dataset, Some(dir.path().join("data/records.jsonl")));
        assert_eq!(c.sandbox.mock_script, Some(dir.path().join("mock.jsonl")));
        assert_eq!(c.rewards.lambda1, 0.25);
        assert_eq!(c.rewards.lambda2, 2.5);
        assert_eq!(c.sandbox.limits.wall_timeout, 7.0);
        assert_eq!(c.service.bind, "0.0.0.0:9000");
        assert!(c.judge.use_llm_judge);
        assert_eq!(c.judge.llm_endpoint, "http://judge.local/v1");
        let red = serde_json::to_string(&c.redacted()).unwrap();
        assert!(!red.contains("s3cret"));
        assert!(red.contains(REDACTED));
    }

    #[test]
    fn config_path_from_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[clip]\neps_high = 0.3\n").unwrap();
        let c = EngineConfig::load(None, env(&[("TABRL_CONFIG", path.to_str().unwrap())])).unwrap();
        assert_eq!(c.clip.eps_high, 0.3);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(EngineConfig::load(None, env(&[("TABRL_REWARDS__LAMBDA3", "1")])).is_err());
        let c = EngineConfig::load(None, env(&[("TABRL_REWARDS__LAMBDA1", "-1")])).unwrap();
        assert!(c.validate().is_err());
        let c = EngineConfig::load(None, env(&[("TABRL_SERVICE__BIND", "nowhere")])).unwrap();
        assert!(c.validate().is_err());
        let c = EngineConfig::load(None, env(&[("TABRL_SANDBOX__EXECUTOR", "mock")])).unwrap();
        assert!(c.validate().is_err());
        let c = EngineConfig::load(None, env(&[("TABRL_CODESIM__WEIGHTS__W_NGRAM", "0.5")])).unwrap();
        assert!(c.validate().is_err());
        assert!(EngineConfig::load(Some(Path::new("/nonexistent/x.toml")), env(&[])).is_err());
    }

    #[test]
    fn env_values_are_typed() {
        assert_eq!(env_value("3"), toml::Value::Integer(3));
        assert_eq!(env_value("true"), toml::Value::Boolean(true));
        assert_eq!(env_value("hello world"), toml::Value::String("hello world".into()));
        assert_eq!(env_value("[\"a\", \"b\"]").as_array().unwrap().len(), 2);
    }
}
