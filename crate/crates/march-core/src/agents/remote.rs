//! Chat-completions client backend.
//!
//! Speaks the de-facto chat-completions wire protocol: POST
//! `<endpoint>/chat/completions` with `model`, `messages`, and
//! `temperature`, bearer-token auth, first choice's message content as the
//! completion. Rate limiting (429) retries with bounded exponential
//! backoff before surfacing.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{AgentBackend, AgentRole, BackendError};

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL, e.g. `https://api.example.com/v1`.
    pub endpoint: String,
    pub model: String,
    /// Bearer token; usually sourced from `MARCH_API_KEY`.
    pub api_key: Option<String>,
    /// Defaults to 0 so runs are as deterministic as the provider allows.
    pub temperature: f64,
    pub timeout: Duration,
    /// Retries on 429 before surfacing `RateLimited`.
    pub max_rate_limit_retries: u32,
    pub backoff_base: Duration,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: String::new(),
            model: String::new(),
            api_key: None,
            temperature: 0.0,
            timeout: Duration::from_secs(60),
            max_rate_limit_retries: 3,
            backoff_base: Duration::from_millis(200),
        }
    }
}

pub struct RemoteBackend {
    name: String,
    role: AgentRole,
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl RemoteBackend {
    pub fn new(
        name: impl Into<String>,
        role: AgentRole,
        config: RemoteConfig,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(RemoteBackend {
            name: name.into(),
            role,
            config,
            client,
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }

    fn send_once(&self, prompt: &str) -> Result<reqwest::blocking::Response, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": self.role.preamble()},
                {"role": "user", "content": prompt},
            ],
            "temperature": self.config.temperature,
        });
        let mut request = self.client.post(self.url()).json(&body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        request.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(e.to_string())
            } else {
                BackendError::Transport(e.to_string())
            }
        })
    }
}

impl AgentBackend for RemoteBackend {
    fn invoke(&self, prompt: &str) -> Result<String, BackendError> {
        let mut attempt = 0u32;
        loop {
            let response = self.send_once(prompt)?;
            let status = response.status();
            if status.as_u16() == 429 {
                if attempt < self.config.max_rate_limit_retries {
                    let backoff = self.config.backoff_base * 2u32.saturating_pow(attempt);
                    std::thread::sleep(backoff);
                    attempt += 1;
                    continue;
                }
                return Err(BackendError::RateLimited { attempts: attempt + 1 });
            }
            if !status.is_success() {
                let body = response.text().unwrap_or_default();
                let snippet: String = body.chars().take(200).collect();
                return Err(BackendError::BadStatus {
                    status: status.as_u16(),
                    body: snippet,
                });
            }
            let parsed: ChatResponse = response
                .json()
                .map_err(|e| BackendError::Transport(format!("invalid response body: {e}")))?;
            let content = parsed
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
                .filter(|c| !c.is_empty());
            return match content {
                Some(text) => Ok(text),
                None => Err(BackendError::EmptyChoice),
            };
        }
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn role(&self) -> AgentRole {
        self.role
    }

    fn descriptor(&self) -> String {
        format!("remote({} @ {})", self.config.model, self.config.endpoint)
    }
}
