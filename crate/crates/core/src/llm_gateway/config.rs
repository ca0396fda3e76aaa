use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 50,
            top_p: None,
            top_k: None,
        }
    }
}

/// USD per one million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Pricing {
    pub input_usd_per_1m: f64,
    pub output_usd_per_1m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub model_id: String,
    /// `https://…` for a chat-completion server, `mock://<style>` for the
    /// offline rule-based backend.
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    pub decoding: Decoding,
    pub pricing: Pricing,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// First backoff delay; doubles per retry.
    pub retry_base_ms: u64,
    pub max_in_flight: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            model_id: "mock".into(),
            endpoint: "mock://keyword".into(),
            api_key_env: None,
            decoding: Decoding::default(),
            pricing: Pricing::default(),
            timeout_ms: 60_000,
            max_retries: 3,
            retry_base_ms: 500,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendConfigError {
    #[error("backend has an empty model_id")]
    EmptyModelId,
    #[error("backend {0}: pricing must be non-negative")]
    NegativePricing(String),
    #[error("backend {0}: classification backends require temperature 0.0 (got {1})")]
    NonDeterministicClassifier(String, f64),
    #[error("backend {0}: max_in_flight must be at least 1")]
    NoConcurrency(String),
    #[error("backend {0}: unsupported endpoint `{1}`")]
    BadEndpoint(String, String),
}

impl BackendConfig {
    pub fn mock(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            retry_base_ms: 0,
            ..Self::default()
        }
    }

    pub fn is_mock(&self) -> bool {
        self.endpoint.starts_with("mock://")
    }

    pub fn validate(&self, classifier: bool) -> Result<(), BackendConfigError> {
        if self.model_id.trim().is_empty() {
            return Err(BackendConfigError::EmptyModelId);
        }
        if self.pricing.input_usd_per_1m < 0.0 || self.pricing.output_usd_per_1m < 0.0 {
            return Err(BackendConfigError::NegativePricing(self.model_id.clone()));
        }
        if classifier && self.decoding.temperature != 0.0 {
            return Err(BackendConfigError::NonDeterministicClassifier(
                self.model_id.clone(),
                self.decoding.temperature,
            ));
        }
        if self.max_in_flight == 0 {
            return Err(BackendConfigError::NoConcurrency(self.model_id.clone()));
        }
        let ok_scheme = self.is_mock()
            || self.endpoint.starts_with("http://")
            || self.endpoint.starts_with("https://");
        if !ok_scheme {
            return Err(BackendConfigError::BadEndpoint(
                self.model_id.clone(),
                self.endpoint.clone(),
            ));
        }
        Ok(())
    }
}

/// Decoding presets for the hosted models the pipeline was tuned against.
/// Endpoints and prices are deployment-specific and left for the operator.
pub mod presets {
    use super::{BackendConfig, Decoding};

    fn preset(model_id: &str, max_tokens: u32, top_p: Option<f64>, top_k: Option<u32>) -> BackendConfig {
        BackendConfig {
            model_id: model_id.into(),
            endpoint: String::new(),
            decoding: Decoding {
                temperature: 0.0,
                max_tokens,
                top_p,
                top_k,
            },
            ..BackendConfig::default()
        }
    }

    pub fn classifier(name: &str) -> Option<BackendConfig> {
        Some(match name {
            "gpt-5" => preset("gpt-5.1-turbo-2024-11", 50, Some(1.0), None),
            "gpt-4-turbo" => preset("gpt-4-turbo-2024-04-09", 50, None, None),
            "gpt-4o-mini" => preset("gpt-4o-mini-2024-07-18", 50, None, None),
            "deepseek-r1-reasoner" => preset("deepseek-r1-2024-12", 50, Some(0.95), None),
            "deepseek-r1-chat" => preset("deepseek-r1-chat-2024-12", 50, None, None),
            "gemini-2.5-flash" => preset("gemini-2.5-flash", 50, None, Some(1)),
            _ => return None,
        })
    }

    pub fn summarizer(name: &str) -> Option<BackendConfig> {
        Some(match name {
            "allam" => preset("allam-13b-instruct-v2", 150, None, None),
            "gpt-4o-mini" => preset("gpt-4o-mini-2024-07-18", 150, None, None),
            "gemini-2.5-flash" => preset("gemini-2.5-flash", 150, None, None),
            "gemini-pro" => preset("gemini-pro-1.5", 150, None, None),
            _ => return None,
        })
    }
}
