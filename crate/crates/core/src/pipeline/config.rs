use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Durability;
use crate::dedup::DedupConfig;
use crate::entities::DEFAULT_LINK_THRESHOLD;
use crate::llm_gateway::{BackendConfig, BackendConfigError, Decoding};
use crate::normalize::NormalizationConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config refers to unset environment variable `{0}`")]
    MissingEnv(String),
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Backend(#[from] BackendConfigError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingProviderKind {
    Hashing,
    Http,
    /// Skip the semantic pass.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub provider: EmbeddingProviderKind,
    pub dims: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    pub timeout_ms: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            provider: EmbeddingProviderKind::Hashing,
            dims: 1024,
            endpoint: None,
            model: "hashing".into(),
            api_key_env: None,
            timeout_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntitiesConfig {
    pub threshold: f64,
    /// JSONL company records; the shipped fixture when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub companies: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    /// Organization tagger endpoint; lexicon scan only when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ner_endpoint: Option<String>,
    pub ner_timeout_ms: u64,
}

impl Default for EntitiesConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_LINK_THRESHOLD,
            companies: None,
            lexicon: None,
            ner_endpoint: None,
            ner_timeout_ms: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub workers: usize,
    /// Documents with at least this many words are summarized first.
    pub route_boundary: usize,
    pub chunk_words: usize,
    pub max_cost_per_sample_usd: f64,
    /// Share of errored documents above which a run counts as failed.
    pub max_error_rate: f64,
    pub durability: Durability,
    /// Response cache directory; `<out>/cache` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    pub normalization: NormalizationConfig,
    pub dedup: DedupConfig,
    pub embedding: EmbeddingConfig,
    pub entities: EntitiesConfig,
    pub summarizer: BackendConfig,
    pub labelers: Vec<BackendConfig>,
}

fn mock_backend(model_id: &str, max_tokens: u32) -> BackendConfig {
    BackendConfig {
        decoding: Decoding {
            max_tokens,
            ..Decoding::default()
        },
        ..BackendConfig::mock(model_id)
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            route_boundary: 100,
            chunk_words: 400,
            max_cost_per_sample_usd: 0.0012,
            max_error_rate: 0.05,
            durability: Durability::Fsync,
            cache_dir: None,
            normalization: NormalizationConfig::default(),
            dedup: DedupConfig::default(),
            embedding: EmbeddingConfig::default(),
            entities: EntitiesConfig::default(),
            summarizer: mock_backend("mock-summarizer", 150),
            labelers: ["mock-labeler-a", "mock-labeler-b", "mock-labeler-c"]
                .iter()
                .map(|id| mock_backend(id, 50))
                .collect(),
        }
    }
}

fn env_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid pattern"))
}

/// Replaces every `${NAME}` with the value of environment variable `NAME`.
pub fn interpolate_env(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, ConfigError> {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for caps in env_pattern().captures_iter(text) {
        let whole = caps.get(0).expect("match");
        let name = &caps[1];
        let value = lookup(name).ok_or_else(|| ConfigError::MissingEnv(name.to_string()))?;
        out.push_str(&text[last..whole.start()]);
        out.push_str(&value);
        last = whole.end();
    }
    out.push_str(&text[last..]);
    Ok(out)
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let text = interpolate_env(text, |name| std::env::var(name).ok())?;
        let config: RunConfig = toml::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.workers == 0 {
            return invalid("workers must be at least 1".into());
        }
        if self.route_boundary == 0 {
            return invalid("route_boundary must be at least 1".into());
        }
        if self.chunk_words == 0 {
            return invalid("chunk_words must be at least 1".into());
        }
        if !(self.max_cost_per_sample_usd >= 0.0) {
            return invalid("max_cost_per_sample_usd must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.max_error_rate) {
            return invalid("max_error_rate must lie in [0, 1]".into());
        }
        if !(self.entities.threshold > 0.0 && self.entities.threshold <= 1.0) {
            return invalid(format!("entities.threshold {} outside (0, 1]", self.entities.threshold));
        }
        self.dedup.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.embedding.provider == EmbeddingProviderKind::Http && self.embedding.endpoint.is_none() {
            return invalid("embedding.provider = \"http\" needs embedding.endpoint".into());
        }
        self.summarizer.validate(false)?;
        if self.labelers.len() != 3 {
            return invalid(format!("exactly 3 labelers are required, found {}", self.labelers.len()));
        }
        let mut ids = BTreeSet::new();
        for labeler in &self.labelers {
            labeler.validate(true)?;
            if !ids.insert(labeler.model_id.as_str()) {
                return invalid(format!("labeler model_id `{}` is listed twice", labeler.model_id));
            }
        }
        Ok(())
    }

    /// Points every backend at the offline keyword mock, keeping model ids
    /// and decoding settings.
    pub fn with_mock_backends(mut self) -> Self {
        for backend in std::iter::once(&mut self.summarizer).chain(self.labelers.iter_mut()) {
            backend.endpoint = "mock://keyword".into();
            backend.api_key_env = None;
            backend.retry_base_ms = 0;
        }
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml()).unwrap(), c);
        assert_eq!(RunConfig::from_toml_str("").unwrap(), c);
    }

    #[test]
    fn interpolation() {
        let lookup = |n: &str| (n == "KEY").then(|| "v".to_string());
        assert_eq!(interpolate_env("a=${KEY} b=${KEY}", lookup).unwrap(), "a=v b=v");
        assert!(matches!(interpolate_env("${NOPE}", lookup), Err(ConfigError::MissingEnv(n)) if n == "NOPE"));
        assert_eq!(interpolate_env("$KEY {KEY}", lookup).unwrap(), "$KEY {KEY}");
    }

    #[test]
    fn rejects_bad_labeler_sets() {
        let mut c = RunConfig::default();
        c.labelers.pop();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.labelers[2].model_id = c.labelers[0].model_id.clone();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.labelers[1].decoding.temperature = 0.7;
        assert!(matches!(c.validate(), Err(ConfigError::Backend(BackendConfigError::NonDeterministicClassifier(..)))));
        assert!(RunConfig::from_toml_str("workers = 0").is_err());
        assert!(RunConfig::from_toml_str("wrokers = 2").is_err());
    }

    #[test]
    fn toml_overrides() {
        let c = RunConfig::from_toml_str("route_boundary = 120\n[entities]\nthreshold = 0.9\n").unwrap();
        assert_eq!((c.route_boundary, c.entities.threshold), (120, 0.9));
    }
}
