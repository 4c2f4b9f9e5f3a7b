//! Run configuration: TOML file schema, command-line overrides, and the
//! resolved settings every stage runs from.
//!
//! Precedence per field: command-line flag, then config file, then
//! built-in default.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::gateway::{HttpEndpoint, RetryPolicy};
use crate::model::ScoreWeights;

pub const DEFAULT_K: usize = 6;
pub const DEFAULT_ETA: f64 = 0.2;
pub const DEFAULT_CONCURRENCY: usize = 8;
pub const DEFAULT_BASE_SEED: u64 = 0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config '{path}': {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
    pub base_seed: Option<u64>,
    pub k: Option<usize>,
    pub eta: Option<f64>,
    pub concurrency: Option<usize>,
    pub audit: Option<bool>,
    pub trigger_lexicon: Option<Vec<String>>,
    #[serde(default)]
    pub weights: Option<WeightsConfig>,
    #[serde(default)]
    pub agents: Vec<AgentConfig>,
    pub judge: Option<EndpointConfig>,
    pub player: Option<EndpointConfig>,
    pub extractor: Option<EndpointConfig>,
    /// Template id to TOML file path overrides.
    #[serde(default)]
    pub templates: HashMap<String, PathBuf>,
    pub retry: Option<RetryConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    pub lambda_k: Option<f64>,
    pub lambda_alpha: Option<f64>,
    pub lambda_beta: Option<f64>,
    pub lambda_gamma: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub id: String,
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
    /// Prompt template id; defaults to the shipped synthesis template.
    pub template: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub in_flight_cap: Option<usize>,
    pub timeout_secs: Option<u64>,
}

impl EndpointConfig {
    /// Resolve to an HTTP endpoint; errors when url or model is missing.
    pub fn to_http(&self, role: &str) -> Result<HttpEndpoint, ConfigError> {
        Ok(HttpEndpoint {
            url: self
                .url
                .clone()
                .ok_or_else(|| invalid(format!("{role}: url is required outside --mock mode")))?,
            model: self
                .model
                .clone()
                .ok_or_else(|| invalid(format!("{role}: model is required outside --mock mode")))?,
            api_key_env: self.api_key_env.clone().unwrap_or_default(),
            in_flight_cap: self.in_flight_cap.unwrap_or(4),
            timeout_secs: self.timeout_secs.unwrap_or(300),
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryConfig {
    pub max_attempts: Option<usize>,
    pub base_backoff_ms: Option<u64>,
    pub backoff_multiplier: Option<f64>,
}

/// Command-line overrides; every field beats the config file.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub corpus: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
    pub eta: Option<f64>,
    pub eta_sweep: Option<Vec<f64>>,
    pub weights: Option<ScoreWeights>,
    pub concurrency: Option<usize>,
    pub base_seed: Option<u64>,
    pub k: Option<usize>,
    pub mock: bool,
    pub resume: bool,
    pub dry_run: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::new(),
            run_dir: PathBuf::new(),
            base_seed: DEFAULT_BASE_SEED,
            k: DEFAULT_K,
            eta: DEFAULT_ETA,
            eta_sweep: None,
            concurrency: DEFAULT_CONCURRENCY,
            audit: false,
            mock: false,
            resume: true,
            dry_run: false,
            trigger_lexicon: vec!["wait".to_string()],
            weights: ScoreWeights::default(),
            agents: Vec::new(),
            judge: EndpointConfig::default(),
            player: EndpointConfig::default(),
            extractor: EndpointConfig::default(),
            templates: HashMap::new(),
            retry: RetryPolicy::default(),
        }
    }
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub run_dir: PathBuf,
    pub base_seed: u64,
    pub k: usize,
    pub eta: f64,
    pub eta_sweep: Option<Vec<f64>>,
    pub concurrency: usize,
    pub audit: bool,
    pub mock: bool,
    pub resume: bool,
    pub dry_run: bool,
    pub trigger_lexicon: Vec<String>,
    pub weights: ScoreWeights,
    pub agents: Vec<AgentConfig>,
    pub judge: EndpointConfig,
    pub player: EndpointConfig,
    pub extractor: EndpointConfig,
    pub templates: HashMap<String, PathBuf>,
    pub retry: RetryPolicy,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<FileConfig, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        toml::from_str(&raw).map_err(|e| ConfigError::Unreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Merge defaults, file values, and CLI overrides.
    pub fn resolve(file: Option<FileConfig>, cli: &CliOverrides) -> Result<Self, ConfigError> {
        let file = file.unwrap_or_default();
        let mut cfg = RunConfig::default();

        if let Some(w) = &file.weights {
            cfg.weights = ScoreWeights {
                lambda_k: w.lambda_k.unwrap_or(cfg.weights.lambda_k),
                lambda_alpha: w.lambda_alpha.unwrap_or(cfg.weights.lambda_alpha),
                lambda_beta: w.lambda_beta.unwrap_or(cfg.weights.lambda_beta),
                lambda_gamma: w.lambda_gamma.unwrap_or(cfg.weights.lambda_gamma),
            };
        }
        if let Some(r) = &file.retry {
            cfg.retry = RetryPolicy {
                max_attempts: r.max_attempts.unwrap_or(3),
                base_backoff: Duration::from_millis(r.base_backoff_ms.unwrap_or(250)),
                backoff_multiplier: r.backoff_multiplier.unwrap_or(2.0),
            };
        }
        cfg.corpus = cli.corpus.clone().or(file.corpus).unwrap_or_default();
        cfg.run_dir = cli.run_dir.clone().or(file.run_dir).unwrap_or_default();
        cfg.base_seed = cli.base_seed.or(file.base_seed).unwrap_or(DEFAULT_BASE_SEED);
        cfg.k = cli.k.or(file.k).unwrap_or(DEFAULT_K);
        cfg.eta = cli.eta.or(file.eta).unwrap_or(DEFAULT_ETA);
        cfg.eta_sweep = cli.eta_sweep.clone();
        cfg.concurrency = cli.concurrency.or(file.concurrency).unwrap_or(DEFAULT_CONCURRENCY);
        cfg.audit = file.audit.unwrap_or(false);
        cfg.mock = cli.mock;
        cfg.resume = cli.resume;
        cfg.dry_run = cli.dry_run;
        if let Some(lex) = file.trigger_lexicon {
            cfg.trigger_lexicon = lex;
        }
        if let Some(w) = cli.weights {
            cfg.weights = w;
        }
        cfg.agents = file.agents;
        cfg.judge = file.judge.unwrap_or_default();
        cfg.player = file.player.unwrap_or_default();
        cfg.extractor = file.extractor.unwrap_or_default();
        cfg.templates = file.templates;

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.corpus.as_os_str().is_empty() {
            return Err(invalid("corpus path is required"));
        }
        if !self.corpus.exists() {
            return Err(invalid(format!("corpus '{}' does not exist", self.corpus.display())));
        }
        if self.run_dir.as_os_str().is_empty() {
            return Err(invalid("run_dir is required"));
        }
        if self.k == 0 {
            return Err(invalid("k must be >= 1"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(invalid(format!("eta must be in (0, 1], got {}", self.eta)));
        }
        if let Some(sweep) = &self.eta_sweep {
            for &eta in sweep {
                if !(eta > 0.0 && eta <= 1.0) {
                    return Err(invalid(format!("eta sweep value {eta} out of (0, 1]")));
                }
            }
        }
        if self.agents.is_empty() {
            return Err(invalid("at least one [[agents]] entry is required"));
        }
        let mut ids = std::collections::HashSet::new();
        for agent in &self.agents {
            if !ids.insert(agent.id.as_str()) {
                return Err(invalid(format!("duplicate agent id '{}'", agent.id)));
            }
        }
        self.weights.validate().map_err(ConfigError::Invalid)?;
        if !self.mock {
            for agent in &self.agents {
                agent.endpoint.to_http(&format!("agent '{}'", agent.id))?;
            }
            self.judge.to_http("judge")?;
            self.player.to_http("player")?;
            self.extractor.to_http("extractor")?;
        }
        for path in self.templates.values() {
            if !path.exists() {
                return Err(invalid(format!("template file '{}' does not exist", path.display())));
            }
        }
        Ok(())
    }

    /// Parse `--weights "1,2,1,1"` as lambda_k,alpha,beta,gamma.
    pub fn parse_weights(raw: &str) -> Result<ScoreWeights, ConfigError> {
        let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(invalid(format!(
                "--weights expects 'lambda_k,lambda_alpha,lambda_beta,lambda_gamma', got '{raw}'"
            )));
        }
        let parse = |s: &str| -> Result<f64, ConfigError> {
            s.parse::<f64>().map_err(|_| invalid(format!("bad weight '{s}'")))
        };
        let weights = ScoreWeights {
            lambda_k: parse(parts[0])?,
            lambda_alpha: parse(parts[1])?,
            lambda_beta: parse(parts[2])?,
            lambda_gamma: parse(parts[3])?,
        };
        weights.validate().map_err(ConfigError::Invalid)?;
        Ok(weights)
    }

    /// Parse `--eta-sweep "0.2,0.4,0.6,1.0"`.
    pub fn parse_eta_sweep(raw: &str) -> Result<Vec<f64>, ConfigError> {
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| invalid(format!("bad eta '{s}'"))))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus_file(dir: &tempfile::TempDir) -> PathBuf {
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"query\":\"q\",\"answer\":\"1\"}\n").unwrap();
        path
    }

    fn mock_cli(dir: &tempfile::TempDir) -> CliOverrides {
        CliOverrides {
            corpus: Some(corpus_file(dir)),
            run_dir: Some(dir.path().join("run")),
            mock: true,
            resume: true,
            ..Default::default()
        }
    }

    fn one_agent() -> Vec<AgentConfig> {
        vec![AgentConfig {
            id: "a0".into(),
            endpoint: EndpointConfig::default(),
            template: None,
        }]
    }

    #[test]
    fn unconfigured_run_uses_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = FileConfig { agents: one_agent(), ..Default::default() };
        let cfg = RunConfig::resolve(Some(file), &mock_cli(&dir)).unwrap();
        assert_eq!(cfg.k, 6);
        assert_eq!(cfg.weights.lambda_k, 1.0);
        assert_eq!(cfg.weights.lambda_alpha, 2.0);
        assert_eq!(cfg.weights.lambda_beta, 1.0);
        assert_eq!(cfg.weights.lambda_gamma, 1.0);
        assert_eq!(cfg.trigger_lexicon, vec!["wait".to_string()]);
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let file = FileConfig {
            agents: one_agent(),
            k: Some(3),
            eta: Some(0.5),
            ..Default::default()
        };
        let mut cli = mock_cli(&dir);
        cli.eta = Some(0.9);
        let cfg = RunConfig::resolve(Some(file), &cli).unwrap();
        assert_eq!(cfg.k, 3, "file beats default");
        assert_eq!(cfg.eta, 0.9, "flag beats file");
        assert_eq!(cfg.concurrency, DEFAULT_CONCURRENCY, "default when unset");
    }

    #[test]
    fn missing_corpus_is_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let mut cli = mock_cli(&dir);
        cli.corpus = Some(dir.path().join("missing.jsonl"));
        let file = FileConfig { agents: one_agent(), ..Default::default() };
        assert!(RunConfig::resolve(Some(file), &cli).is_err());
    }

    #[test]
    fn eta_must_be_in_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        let mut cli = mock_cli(&dir);
        cli.eta = Some(0.0);
        let file = FileConfig { agents: one_agent(), ..Default::default() };
        assert!(RunConfig::resolve(Some(file), &cli).is_err());
    }

    #[test]
    fn non_mock_requires_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let mut cli = mock_cli(&dir);
        cli.mock = false;
        let file = FileConfig { agents: one_agent(), ..Default::default() };
        let err = RunConfig::resolve(Some(file), &cli).unwrap_err();
        assert!(err.to_string().contains("url is required"));
    }

    #[test]
    fn toml_file_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            r#"
corpus = "corpus.jsonl"
run_dir = "runs/demo"
k = 4
eta = 0.4

[weights]
lambda_alpha = 3.0

[[agents]]
id = "teacher-a"
url = "http://localhost:9000/v1/chat/completions"
model = "teacher-a-32b"
api_key_env = "TEACHER_A_KEY"

[judge]
url = "http://localhost:9001/v1/chat/completions"
model = "judge-8b"
"#,
        )
        .unwrap();
        let file = RunConfig::load(&path).unwrap();
        assert_eq!(file.k, Some(4));
        assert_eq!(file.agents.len(), 1);
        assert_eq!(file.agents[0].endpoint.model.as_deref(), Some("teacher-a-32b"));
        assert_eq!(file.weights.as_ref().unwrap().lambda_alpha, Some(3.0));
    }

    #[test]
    fn weights_flag_parses() {
        let w = RunConfig::parse_weights("1, 2.5, 0, 1").unwrap();
        assert_eq!((w.lambda_k, w.lambda_alpha, w.lambda_beta, w.lambda_gamma), (1.0, 2.5, 0.0, 1.0));
        assert!(RunConfig::parse_weights("1,2").is_err());
        assert!(RunConfig::parse_weights("1,2,3,x").is_err());
        assert!(RunConfig::parse_weights("1,2,3,-1").is_err());
    }

    #[test]
    fn duplicate_agent_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let agents = vec![
            AgentConfig { id: "same".into(), endpoint: EndpointConfig::default(), template: None },
            AgentConfig { id: "same".into(), endpoint: EndpointConfig::default(), template: None },
        ];
        let file = FileConfig { agents, ..Default::default() };
        assert!(RunConfig::resolve(Some(file), &mock_cli(&dir)).is_err());
    }
}
