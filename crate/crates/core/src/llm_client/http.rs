use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{BackendError, CompletionBackend, CompletionRequest};

/// Request/response body shape of the remote endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireShape {
    /// `{prompt, max_output_tokens, temperature}` -> `{"text": ...}`
    #[default]
    Minimal,
    /// OpenAI-style `{model, messages, max_tokens, temperature}` -> `choices[0].message.content`
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    pub endpoint: String,
    pub shape: WireShape,
    pub model: Option<String>,
    /// JSON pointer to the response text; defaults per shape.
    pub response_pointer: Option<String>,
    /// Name of the environment variable holding the bearer credential.
    pub credential_env: Option<String>,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            shape: WireShape::Minimal,
            model: None,
            response_pointer: None,
            credential_env: None,
            timeout_secs: 60,
        }
    }
}

impl HttpConfig {
    pub fn request_body(&self, req: &CompletionRequest) -> Value {
        match self.shape {
            WireShape::Minimal => {
                let mut body = Map::new();
                body.insert("prompt".into(), json!(req.prompt));
                body.insert("max_output_tokens".into(), json!(req.max_output_tokens));
                body.insert("temperature".into(), json!(req.temperature));
                if let Some(m) = &self.model {
                    body.insert("model".into(), json!(m));
                }
                Value::Object(body)
            }
            WireShape::Chat => json!({
                "model": self.model.clone().unwrap_or_default(),
                "messages": [{"role": "user", "content": req.prompt}],
                "max_tokens": req.max_output_tokens,
                "temperature": req.temperature,
            }),
        }
    }

    pub fn pointer(&self) -> &str {
        match (&self.response_pointer, self.shape) {
            (Some(p), _) => p,
            (None, WireShape::Minimal) => "/text",
            (None, WireShape::Chat) => "/choices/0/message/content",
        }
    }

    pub fn extract_text(&self, body: &Value) -> Result<String, BackendError> {
        body.pointer(self.pointer())
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Fatal {
                status: None,
                message: format!("response has no string at `{}`", self.pointer()),
            })
    }
}

pub fn is_retryable_status(status: u16) -> bool {
    status == 408 || status == 429 || (500..=599).contains(&status)
}

pub struct HttpBackend {
    config: HttpConfig,
    credential: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    /// Validates the endpoint and resolves the credential from the environment.
    pub fn new(config: &HttpConfig) -> Result<Self, BackendError> {
        let endpoint = config.endpoint.trim();
        if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
            return Err(BackendError::Config(format!(
                "http endpoint must be an http(s) URL, got `{endpoint}`"
            )));
        }
        let credential = match &config.credential_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!(
                    "credential environment variable `{var}` is not set"
                ))
            })?),
            None => None,
        };
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build();
        Ok(Self {
            config: config.clone(),
            credential,
            agent,
        })
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut call = self
            .agent
            .post(self.config.endpoint.trim())
            .set("Content-Type", "application/json");
        if let Some(token) = &self.credential {
            call = call.set("Authorization", &format!("Bearer {token}"));
        }
        match call.send_json(self.config.request_body(request)) {
            Ok(resp) => {
                let body: Value = resp.into_json().map_err(|e| BackendError::Fatal {
                    status: None,
                    message: format!("response is not JSON: {e}"),
                })?;
                self.config.extract_text(&body)
            }
            Err(ureq::Error::Status(code, resp)) => {
                let message = resp.into_string().unwrap_or_default();
                if is_retryable_status(code) {
                    Err(BackendError::Retryable {
                        status: Some(code),
                        message,
                    })
                } else {
                    Err(BackendError::Fatal {
                        status: Some(code),
                        message,
                    })
                }
            }
            Err(ureq::Error::Transport(t)) => Err(BackendError::Retryable {
                status: None,
                message: t.to_string(),
            }),
        }
    }

    fn name(&self) -> &str {
        "http"
    }
}
