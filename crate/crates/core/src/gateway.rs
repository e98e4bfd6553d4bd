//! Chat and embedding access over an OpenAI-compatible HTTP API, plus
//! deterministic offline mocks.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const ENV_API_KEY: &str = "CLKIT_API_KEY";
pub const ENV_BASE_URL: &str = "CLKIT_BASE_URL";

const REDACTED: &str = "[REDACTED]";
const EXCERPT_CHARS: usize = 300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("authentication rejected (HTTP {status}): {excerpt}")]
    Auth { status: u16, excerpt: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider error (HTTP {status}): {excerpt}")]
    Provider { status: u16, excerpt: String },
    #[error("malformed provider response: {0}")]
    InvalidResponse(String),
    #[error("invalid gateway configuration: {0}")]
    Config(String),
}

type Result<T> = std::result::Result<T, GatewayError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_name: String,
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 1024,
            model_name: "mock-chat".into(),
            seed: None,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::Config(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::Config("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResult {
    pub text: String,
    pub model_name: String,
    pub usage: Usage,
    pub latency_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResult {
    pub vector: Vec<f64>,
    pub model_name: String,
    pub usage: Usage,
    pub latency_seconds: f64,
}

pub trait ChatModel: Send + Sync {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<ChatResult>;
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingResult>;
    fn model_name(&self) -> &str;
}

fn text_seed(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

fn rough_tokens(text: &str) -> u64 {
    text.chars().count().div_ceil(4) as u64
}

/// Latency reported by mocks: a fixed function of input and output size, so
/// mock runs stay byte-reproducible.
fn simulated_latency(input: &str, output_tokens: u64) -> f64 {
    0.05 + input.len() as f64 * 1e-6 + output_tokens as f64 * 1e-3
}

const MOCK_WORDS: &[&str] = &[
    "fix", "the", "handler", "so", "that", "empty", "input", "returns", "early", "update",
    "tests", "for", "edge", "case", "guard", "against", "none", "values", "in", "parser",
    "refactor", "loop", "to", "avoid", "off", "by", "one", "error", "when", "index",
    "reaches", "end", "check", "type", "before", "casting", "add", "missing", "import",
    "adjust", "default", "argument", "preserve", "order", "of", "keys", "normalize", "path",
];

#[derive(Debug, Clone)]
pub enum MockChat {
    /// Pseudo-text keyed by the prompt's SHA-256.
    Hashed,
    /// Same text for every prompt.
    Constant(String),
}

impl ChatModel for MockChat {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<ChatResult> {
        params.validate()?;
        let text = match self {
            MockChat::Constant(text) => text.clone(),
            MockChat::Hashed => {
                let seed = text_seed(prompt);
                let mut rng = ChaCha20Rng::from_seed(seed);
                let words = 24.min(params.max_tokens as usize);
                let body: Vec<&str> = (0..words)
                    .map(|_| MOCK_WORDS[rng.random_range(0..MOCK_WORDS.len())])
                    .collect();
                format!("[mock {}] {}", &hex::encode(seed)[..12], body.join(" "))
            }
        };
        let completion_tokens = rough_tokens(&text);
        let prompt_tokens = rough_tokens(prompt);
        Ok(ChatResult {
            latency_seconds: simulated_latency(prompt, completion_tokens),
            model_name: params.model_name.clone(),
            usage: Usage {
                prompt_tokens,
                completion_tokens,
                total_tokens: prompt_tokens + completion_tokens,
            },
            text,
        })
    }
}

/// Unit vectors with standard-normal directions seeded by the text's SHA-256.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    pub dimension: usize,
    pub model_name: String,
}

impl MockEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            model_name: "mock-embedding".into(),
        }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut rng = ChaCha20Rng::from_seed(text_seed(text));
        loop {
            let v: Vec<f64> = (0..self.dimension)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}

impl Embedder for MockEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingResult> {
        if self.dimension == 0 {
            return Err(GatewayError::Config("embedding dimension must be >= 1".into()));
        }
        let tokens = rough_tokens(text);
        Ok(EmbeddingResult {
            vector: self.vector(text),
            model_name: self.model_name.clone(),
            usage: Usage {
                prompt_tokens: tokens,
                completion_tokens: 0,
                total_tokens: tokens,
            },
            latency_seconds: simulated_latency(text, 0),
        })
    }

    fn model_name(&self) -> &str {
        &self.model_name
    }
}

/// API key wrapper that never prints its value.
#[derive(Clone, PartialEq, Eq, Deserialize)]
#[serde(transparent)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(REDACTED)
    }
}

impl Serialize for ApiKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(REDACTED)
    }
}

/// Replaces every occurrence of `secret` (and any bearer token) in `text`.
pub fn scrub(text: &str, secret: Option<&ApiKey>) -> String {
    let mut out = text.to_string();
    if let Some(key) = secret.filter(|k| !k.0.is_empty()) {
        out = out.replace(&key.0, REDACTED);
    }
    let mut result = String::with_capacity(out.len());
    let mut rest = out.as_str();
    while let Some(pos) = rest.find("Bearer ") {
        result.push_str(&rest[..pos + 7]);
        rest = &rest[pos + 7..];
        let end = rest
            .find(|c: char| c.is_whitespace() || c == '"' || c == '\'')
            .unwrap_or(rest.len());
        if end > 0 {
            result.push_str(REDACTED);
        }
        rest = &rest[end..];
    }
    result.push_str(rest);
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    #[default]
    Mock,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    pub base_url: String,
    /// Usually supplied through `CLKIT_API_KEY` rather than a config file.
    #[serde(skip_serializing)]
    pub api_key: Option<ApiKey>,
    pub chat_model: String,
    pub embedding_model: String,
    /// Dimension of mock embeddings.
    pub embedding_dimension: usize,
    pub timeout_seconds: f64,
    pub max_retries: u32,
    pub backoff_initial_ms: u64,
    pub backoff_max_ms: u64,
    pub max_in_flight: usize,
    pub generation: GenerationParams,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            mode: GatewayMode::Mock,
            base_url: "https://api.openai.com/v1".into(),
            api_key: None,
            chat_model: "mock-chat".into(),
            embedding_model: "mock-embedding".into(),
            embedding_dimension: 256,
            timeout_seconds: 60.0,
            max_retries: 3,
            backoff_initial_ms: 500,
            backoff_max_ms: 8_000,
            max_in_flight: 4,
            generation: GenerationParams::default(),
        }
    }
}

impl GatewayConfig {
    /// Applies `CLKIT_API_KEY` / `CLKIT_BASE_URL` when set.
    pub fn with_env(mut self) -> Self {
        self.apply_env(|k| std::env::var(k).ok());
        self
    }

    fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(key) = get(ENV_API_KEY).filter(|k| !k.is_empty()) {
            self.api_key = Some(ApiKey(key));
        }
        if let Some(url) = get(ENV_BASE_URL).filter(|u| !u.is_empty()) {
            self.base_url = url;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_seconds.is_finite() && self.timeout_seconds > 0.0) {
            return Err(GatewayError::Config("timeout_seconds must be > 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be >= 1".into()));
        }
        if self.mode == GatewayMode::Mock && self.embedding_dimension == 0 {
            return Err(GatewayError::Config("embedding_dimension must be >= 1".into()));
        }
        self.generation.validate()
    }

    /// Generation parameters with the configured chat model name.
    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            model_name: self.chat_model.clone(),
            ..self.generation.clone()
        }
    }

    pub fn chat_model(&self) -> Result<Box<dyn ChatModel>> {
        self.validate()?;
        Ok(match self.mode {
            GatewayMode::Mock => Box::new(MockChat::Hashed),
            GatewayMode::Live => Box::new(OpenAiClient::new(self.clone())?),
        })
    }

    pub fn embedder(&self) -> Result<Box<dyn Embedder>> {
        self.validate()?;
        Ok(match self.mode {
            GatewayMode::Mock => Box::new(MockEmbedder {
                dimension: self.embedding_dimension,
                model_name: self.embedding_model.clone(),
            }),
            GatewayMode::Live => Box::new(OpenAiClient::new(self.clone())?),
        })
    }
}

/// Blocking client for `/chat/completions` and `/embeddings`.
pub struct OpenAiClient {
    config: GatewayConfig,
    http: reqwest::blocking::Client,
}

enum Attempt {
    Done(Value),
    Retry(GatewayError),
    Fatal(GatewayError),
}

impl OpenAiClient {
    pub fn new(config: GatewayConfig) -> Result<Self> {
        config.validate()?;
        let timeout = Duration::from_secs_f64(config.timeout_seconds);
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .connect_timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self { config, http })
    }

    fn excerpt(&self, body: &str) -> String {
        let scrubbed = scrub(body, self.config.api_key.as_ref());
        scrubbed.chars().take(EXCERPT_CHARS).collect()
    }

    fn backoff(&self, retry: u32) -> Duration {
        let ms = self
            .config
            .backoff_initial_ms
            .saturating_mul(1u64 << retry.min(20))
            .min(self.config.backoff_max_ms);
        Duration::from_millis(ms)
    }

    fn attempt(&self, url: &str, body: &Value) -> Attempt {
        let mut req = self.http.post(url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key.expose());
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry(GatewayError::Transport {
                    attempts: 0,
                    message: self.excerpt(&e.to_string()),
                })
            }
        };
        let status = resp.status().as_u16();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry(GatewayError::Transport {
                    attempts: 0,
                    message: self.excerpt(&e.to_string()),
                })
            }
        };
        match status {
            200..=299 => match serde_json::from_str(&text) {
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fatal(GatewayError::InvalidResponse(e.to_string())),
            },
            401 | 403 => Attempt::Fatal(GatewayError::Auth {
                status,
                excerpt: self.excerpt(&text),
            }),
            429 => Attempt::Retry(GatewayError::RateLimited { attempts: 0 }),
            500..=599 => Attempt::Retry(GatewayError::Provider {
                status,
                excerpt: self.excerpt(&text),
            }),
            _ => Attempt::Fatal(GatewayError::Provider {
                status,
                excerpt: self.excerpt(&text),
            }),
        }
    }

    /// POSTs `body`, retrying transport errors, 429 and 5xx with exponential
    /// backoff. Returns the parsed body and the wall-clock latency.
    fn post(&self, path: &str, body: &Value) -> Result<(Value, f64)> {
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let start = Instant::now();
        let attempts = self.config.max_retries + 1;
        let mut last = None;
        for n in 0..attempts {
            if n > 0 {
                std::thread::sleep(self.backoff(n - 1));
            }
            match self.attempt(&url, body) {
                Attempt::Done(v) => return Ok((v, start.elapsed().as_secs_f64())),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => {
                    log::warn!("{path}: attempt {} of {attempts} failed: {e}", n + 1);
                    last = Some(e);
                }
            }
        }
        Err(match last.expect("at least one attempt") {
            GatewayError::Transport { message, .. } => GatewayError::Transport { attempts, message },
            GatewayError::RateLimited { .. } => GatewayError::RateLimited { attempts },
            other => other,
        })
    }
}

fn usage_of(v: &Value) -> Usage {
    let get = |k: &str| v["usage"][k].as_u64().unwrap_or(0);
    Usage {
        prompt_tokens: get("prompt_tokens"),
        completion_tokens: get("completion_tokens"),
        total_tokens: get("total_tokens"),
    }
}

impl ChatModel for OpenAiClient {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<ChatResult> {
        params.validate()?;
        let mut body = json!({
            "model": params.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        let (v, latency) = self.post("chat/completions", &body)?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| GatewayError::InvalidResponse("missing choices[0].message.content".into()))?
            .to_string();
        Ok(ChatResult {
            text,
            model_name: v["model"].as_str().unwrap_or(&params.model_name).to_string(),
            usage: usage_of(&v),
            latency_seconds: latency,
        })
    }
}

impl Embedder for OpenAiClient {
    fn embed(&self, text: &str) -> Result<EmbeddingResult> {
        let body = json!({"model": self.config.embedding_model, "input": text});
        let (v, latency) = self.post("embeddings", &body)?;
        let raw = v["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| GatewayError::InvalidResponse("missing data[0].embedding".into()))?;
        let vector = raw
            .iter()
            .map(|x| x.as_f64().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| GatewayError::InvalidResponse("non-numeric embedding value".into()))?;
        if vector.is_empty() {
            return Err(GatewayError::InvalidResponse("empty embedding".into()));
        }
        Ok(EmbeddingResult {
            vector,
            model_name: self.config.embedding_model.clone(),
            usage: usage_of(&v),
            latency_seconds: latency,
        })
    }

    fn model_name(&self) -> &str {
        &self.config.embedding_model
    }
}
