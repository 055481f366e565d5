//! Application config: a TOML file plus environment overrides for secrets.

use std::path::{Path, PathBuf};
use std::time::Duration;

use incubator_core::gateway::ApiKey;
use incubator_core::prompt::Sampling;
use incubator_core::{BackendConfig, RetryPolicy, TrainConfig};
use serde::Deserialize;

use crate::error::CliError;

pub const GENERATION_KEY_ENV: &str = "INCUBATOR_GENERATION_API_KEY";
pub const EMBEDDING_KEY_ENV: &str = "INCUBATOR_EMBEDDING_API_KEY";
pub const FALLBACK_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_concurrency")]
    pub max_concurrent: usize,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_concurrency() -> usize {
    8
}
fn default_attempts() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Defaults {
    pub count: usize,
    pub k: usize,
    pub pool: usize,
    pub k_mine: usize,
    pub seed: u64,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Defaults {
    fn default() -> Self {
        let s = Sampling::default();
        Self {
            count: 1024,
            k: 8,
            pool: 1024,
            k_mine: 100,
            seed: 0,
            temperature: s.temperature,
            max_tokens: s.max_tokens,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    workspace: Option<PathBuf>,
    generation: Option<BackendSection>,
    embedding: Option<BackendSection>,
    #[serde(default)]
    defaults: Defaults,
    #[serde(default)]
    training: Option<TrainingSection>,
    /// Concurrency bound when running against the mock backend.
    #[serde(default)]
    mock_concurrency: Option<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingSection {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    holdout_fraction: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AppConfig {
    pub workspace: PathBuf,
    pub generation: Option<BackendConfig>,
    pub embedding: Option<BackendConfig>,
    pub defaults: Defaults,
    pub training: TrainConfig,
    pub mock_concurrency: usize,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("incubator-workspace"),
            generation: None,
            embedding: None,
            defaults: Defaults::default(),
            training: TrainConfig::default(),
            mock_concurrency: 8,
        }
    }
}

fn backend(
    section: BackendSection,
    env_key: &str,
    lookup: &dyn Fn(&str) -> Option<String>,
) -> BackendConfig {
    let mut c = BackendConfig::new(section.base_url, section.model);
    let key = lookup(env_key)
        .or_else(|| lookup(FALLBACK_KEY_ENV))
        .or(section.api_key);
    c.api_key = key.filter(|k| !k.is_empty()).map(ApiKey::new);
    c.request_timeout = Duration::from_secs_f64(section.timeout_secs);
    c.max_concurrent = section.max_concurrent;
    c.retry = RetryPolicy {
        max_attempts: section.max_attempts,
        backoff_base: Duration::from_millis(section.backoff_ms),
    };
    c
}

impl AppConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        Self::load_with(path, &|k| std::env::var(k).ok())
    }

    /// `lookup` reads environment variables; only API keys are taken from it.
    pub fn load_with(
        path: Option<&Path>,
        lookup: &dyn Fn(&str) -> Option<String>,
    ) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::user(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, lookup)
            .map_err(|e| CliError::user(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<Self, String> {
        let file: FileConfig = toml::from_str(text).map_err(|e| e.message().to_string())?;
        let mut training = TrainConfig::default();
        if let Some(t) = file.training {
            training.epochs = t.epochs.unwrap_or(training.epochs);
            training.batch_size = t.batch_size.unwrap_or(training.batch_size);
            training.learning_rate = t.learning_rate.unwrap_or(training.learning_rate);
            training.weight_decay = t.weight_decay.unwrap_or(training.weight_decay);
            training.holdout_fraction = t.holdout_fraction.unwrap_or(training.holdout_fraction);
        }
        training.validate().map_err(|e| e.to_string())?;
        let cfg = Self {
            workspace: file.workspace.unwrap_or_else(|| Self::default().workspace),
            generation: file
                .generation
                .map(|s| backend(s, GENERATION_KEY_ENV, lookup)),
            embedding: file
                .embedding
                .map(|s| backend(s, EMBEDDING_KEY_ENV, lookup)),
            defaults: file.defaults,
            training,
            mock_concurrency: file.mock_concurrency.unwrap_or(8),
        };
        for b in [&cfg.generation, &cfg.embedding].into_iter().flatten() {
            b.validate().map_err(|e| e.to_string())?;
        }
        if cfg.mock_concurrency == 0 {
            return Err("mock_concurrency must be at least 1".into());
        }
        Ok(cfg)
    }

    pub fn sampling(&self) -> Sampling {
        Sampling {
            temperature: self.defaults.temperature,
            max_tokens: self.defaults.max_tokens,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
workspace = "ws"

[generation]
base_url = "https://llm.example/v1"
model = "gen-model"
api_key = "from-file"
max_concurrent = 4

[embedding]
base_url = "https://emb.example/v1"
model = "emb-model"

[defaults]
count = 256
seed = 9

[training]
epochs = 3
"#;

    #[test]
    fn parses_full_config() {
        let c = AppConfig::parse(FULL, &|_| None).unwrap();
        assert_eq!(c.workspace, PathBuf::from("ws"));
        let g = c.generation.unwrap();
        assert_eq!(g.model_name, "gen-model");
        assert_eq!(g.max_concurrent, 4);
        assert_eq!(g.api_key.unwrap().expose(), "from-file");
        assert!(c.embedding.unwrap().api_key.is_none());
        assert_eq!(c.defaults.count, 256);
        assert_eq!(c.defaults.k, 8);
        assert_eq!(c.training.epochs, 3);
        assert_eq!(c.training.batch_size, 32);
    }

    #[test]
    fn environment_overrides_secrets() {
        let env = |k: &str| match k {
            GENERATION_KEY_ENV => Some("gen-env".to_string()),
            FALLBACK_KEY_ENV => Some("shared".to_string()),
            _ => None,
        };
        let c = AppConfig::parse(FULL, &env).unwrap();
        assert_eq!(c.generation.unwrap().api_key.unwrap().expose(), "gen-env");
        assert_eq!(c.embedding.unwrap().api_key.unwrap().expose(), "shared");
    }

    #[test]
    fn rejects_bad_values() {
        assert!(AppConfig::parse("bogus = 1", &|_| None).is_err());
        assert!(AppConfig::parse("[training]\nepochs = 0", &|_| None).is_err());
        assert!(AppConfig::parse(
            "[generation]\nbase_url = \"x\"\nmodel = \"m\"\nmax_concurrent = 0",
            &|_| None
        )
        .is_err());
    }
}
