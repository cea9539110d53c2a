//! Completion client over an HTTP endpoint or the deterministic mock oracle,
//! with retries, a token-bucket rate limit and a global in-flight bound.

mod http;
mod limiter;
mod mock;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use http::{is_retryable_status, HttpBackend, HttpConfig, WireShape};
pub use limiter::{Admission, Permit, RateLimiter};
pub use mock::{MockBackend, MockConfig, MockRule};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transient backend failure{}: {message}", status_suffix(*.status))]
    Retryable {
        status: Option<u16>,
        message: String,
    },
    #[error("backend failure{}: {message}", status_suffix(*.status))]
    Fatal {
        status: Option<u16>,
        message: String,
    },
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("backend configuration: {0}")]
    Config(String),
}

fn status_suffix(status: Option<u16>) -> String {
    status.map(|s| format!(" (status {s})")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_output_tokens: 512,
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::Config("prompt is empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::Config("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// A completion provider. Implementations must be shareable across threads.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;

    fn name(&self) -> &str {
        "custom"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            backoff_base_ms: 500,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1` (attempts are 1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(16);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub max_concurrency: usize,
    /// Requests per second; `None` disables rate limiting.
    pub rate_limit: Option<f64>,
    pub burst: f64,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub retry: RetryPolicy,
    pub http: HttpConfig,
    pub mock: MockConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            max_concurrency: 8,
            rate_limit: None,
            burst: 1.0,
            max_output_tokens: 512,
            temperature: 0.0,
            retry: RetryPolicy::default(),
            http: HttpConfig::default(),
            mock: MockConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientSettings {
    pub max_concurrency: usize,
    pub rate_limit: Option<f64>,
    pub burst: f64,
    pub retry: RetryPolicy,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

impl Default for ClientSettings {
    fn default() -> Self {
        let cfg = BackendConfig::default();
        Self::from(&cfg)
    }
}

impl From<&BackendConfig> for ClientSettings {
    fn from(cfg: &BackendConfig) -> Self {
        Self {
            max_concurrency: cfg.max_concurrency,
            rate_limit: cfg.rate_limit,
            burst: cfg.burst,
            retry: cfg.retry,
            max_output_tokens: cfg.max_output_tokens,
            temperature: cfg.temperature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClientStats {
    pub calls: u64,
    pub attempts: u64,
    pub failures: u64,
    pub peak_in_flight: usize,
}

/// Shareable completion client. Admission control is global to the client,
/// so every caller (across patients) shares one in-flight budget.
pub struct LlmClient {
    backend: Arc<dyn CompletionBackend>,
    settings: ClientSettings,
    admission: Admission,
    rate: Option<RateLimiter>,
    calls: AtomicU64,
    attempts: AtomicU64,
    failures: AtomicU64,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("backend", &self.backend.name())
            .field("settings", &self.settings)
            .finish()
    }
}

impl LlmClient {
    pub fn new(
        backend: Arc<dyn CompletionBackend>,
        settings: ClientSettings,
    ) -> Result<Self, BackendError> {
        if settings.max_concurrency == 0 {
            return Err(BackendError::Config("max_concurrency must be >= 1".into()));
        }
        if settings.retry.max_attempts == 0 {
            return Err(BackendError::Config(
                "retry.max_attempts must be >= 1".into(),
            ));
        }
        let rate = match settings.rate_limit {
            Some(r) if !(r > 0.0 && r.is_finite()) => {
                return Err(BackendError::Config(format!(
                    "rate_limit must be positive, got {r}"
                )))
            }
            Some(r) => Some(RateLimiter::new(r, settings.burst)),
            None => None,
        };
        if settings.temperature.is_nan() || settings.temperature < 0.0 {
            return Err(BackendError::Config("temperature must be >= 0".into()));
        }
        Ok(Self {
            backend,
            admission: Admission::new(settings.max_concurrency),
            settings,
            rate,
            calls: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
            failures: AtomicU64::new(0),
        })
    }

    /// Builds the configured backend. All validation happens here, before any call.
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, BackendError> {
        let backend: Arc<dyn CompletionBackend> = match cfg.kind {
            BackendKind::Mock => Arc::new(MockBackend::new(&cfg.mock)?),
            BackendKind::Http => Arc::new(HttpBackend::new(&cfg.http)?),
        };
        Self::new(backend, ClientSettings::from(cfg))
    }

    pub fn settings(&self) -> &ClientSettings {
        &self.settings
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn request(&self, prompt: impl Into<String>) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            max_output_tokens: self.settings.max_output_tokens,
            temperature: self.settings.temperature,
        }
    }

    pub fn complete_prompt(&self, prompt: impl Into<String>) -> Result<String, BackendError> {
        self.complete(&self.request(prompt))
    }

    /// Sends one request, retrying transient failures with exponential backoff.
    pub fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let max = self.settings.retry.max_attempts;
        let mut last = String::new();
        for attempt in 1..=max {
            if let Some(rate) = &self.rate {
                rate.acquire();
            }
            self.attempts.fetch_add(1, Ordering::Relaxed);
            let result = {
                let _permit = self.admission.acquire();
                self.backend.complete(request)
            };
            match result {
                Ok(text) => return Ok(text),
                Err(BackendError::Retryable { status, message }) => {
                    log::debug!(
                        "attempt {attempt}/{max} failed{}: {message}",
                        status_suffix(status)
                    );
                    last = message;
                    if attempt < max {
                        thread::sleep(self.settings.retry.backoff(attempt));
                    }
                }
                Err(other) => {
                    self.failures.fetch_add(1, Ordering::Relaxed);
                    return Err(other);
                }
            }
        }
        self.failures.fetch_add(1, Ordering::Relaxed);
        Err(BackendError::Exhausted {
            attempts: max,
            last,
        })
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            calls: self.calls.load(Ordering::Relaxed),
            attempts: self.attempts.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
            peak_in_flight: self.admission.peak(),
        }
    }
}
