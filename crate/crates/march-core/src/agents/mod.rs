//! Agent roles, pluggable backends, prompt templates, and completion
//! parsing.
//!
//! A backend is anything that turns a prompt into a completion: a remote
//! chat endpoint ([`remote::RemoteBackend`]) or a deterministic scripted
//! fixture ([`scripted::ScriptedBackend`]). Everything downstream of the
//! backend boundary — rendering, parsing, repair — is pure and
//! deterministic.

pub mod parse;
pub mod remote;
pub mod scripted;
pub mod templates;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{
    parse_attending_decision, parse_attending_synthesis, parse_fellow_revision, parse_fellow_stance,
    AttendingDecision, DecisionAction, ParseError, Stance, StanceAnswer,
};
pub use scripted::ScriptedBackend;
pub use templates::{render_prompt, PromptTemplate, TemplateError, TemplateSet};

/// Name of the environment variable that carries the bearer token for
/// remote backends.
pub const API_KEY_ENV: &str = "MARCH_API_KEY";

/// The four roles in the read-out hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Resident,
    Fellow,
    Attending,
    Retrieval,
}

impl AgentRole {
    pub const ALL: [AgentRole; 4] = [
        AgentRole::Resident,
        AgentRole::Fellow,
        AgentRole::Attending,
        AgentRole::Retrieval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentRole::Resident => "resident",
            AgentRole::Fellow => "fellow",
            AgentRole::Attending => "attending",
            AgentRole::Retrieval => "retrieval",
        }
    }

    /// System-message preamble used by chat backends.
    pub fn preamble(self) -> &'static str {
        match self {
            AgentRole::Resident => "You are a radiology resident drafting the initial report for a chest CT study.",
            AgentRole::Fellow => "You are a radiology fellow reviewing and revising chest CT reports.",
            AgentRole::Attending => "You are the attending radiologist adjudicating a collaborative consultation.",
            AgentRole::Retrieval => "You are a retrieval assistant surfacing similar prior studies.",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("unexpected status {status}: {body}")]
    BadStatus { status: u16, body: String },
    #[error("completion contained no choices")]
    EmptyChoice,
    #[error("scripted transcript for {backend} exhausted after {served} completions")]
    TranscriptExhausted { backend: String, served: usize },
}

/// A prompt → completion callable with a stable identity. Implementations
/// must be safe to invoke from multiple threads at once.
pub trait AgentBackend: Send + Sync {
    fn invoke(&self, prompt: &str) -> Result<String, BackendError>;

    fn name(&self) -> &str;

    fn role(&self) -> AgentRole;

    /// Short human-readable description of what is behind `invoke`.
    fn descriptor(&self) -> String;
}

/// One prompt/completion pair, as recorded for transcripts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub agent: String,
    pub prompt: String,
    pub completion: String,
}

/// A successfully parsed invocation plus its full exchange history.
#[derive(Debug, Clone)]
pub struct Invocation<T> {
    pub value: T,
    pub exchanges: Vec<Exchange>,
    pub repairs_used: u32,
}

#[derive(Debug, Error)]
pub enum InvokeError {
    #[error("backend {backend}: {source}")]
    Backend {
        backend: String,
        source: BackendError,
        exchanges: Vec<Exchange>,
    },
    #[error("exhausted {attempts} attempts; last parse failure: {last_error}")]
    ExhaustedRepairs {
        attempts: u32,
        last_error: ParseError,
        last_completion: String,
        exchanges: Vec<Exchange>,
    },
}

impl InvokeError {
    pub fn exchanges(&self) -> &[Exchange] {
        match self {
            InvokeError::Backend { exchanges, .. } => exchanges,
            InvokeError::ExhaustedRepairs { exchanges, .. } => exchanges,
        }
    }
}

/// Invokes a backend and parses its completion, retrying up to
/// `max_repairs` times. Each retry resends the original prompt with a
/// suffix naming the violated constraint; every attempt is recorded.
pub fn invoke_with_repair<T>(
    backend: &dyn AgentBackend,
    prompt: &str,
    parser: impl Fn(&str) -> Result<T, ParseError>,
    max_repairs: u32,
) -> Result<Invocation<T>, InvokeError> {
    let mut exchanges = Vec::new();
    let mut attempt_prompt = prompt.to_string();
    let mut last_error = None;
    let mut last_completion = String::new();

    for attempt in 0..=max_repairs {
        let completion = match backend.invoke(&attempt_prompt) {
            Ok(c) => c,
            Err(source) => {
                return Err(InvokeError::Backend {
                    backend: backend.name().to_string(),
                    source,
                    exchanges,
                })
            }
        };
        exchanges.push(Exchange {
            agent: backend.name().to_string(),
            prompt: attempt_prompt.clone(),
            completion: completion.clone(),
        });
        match parser(&completion) {
            Ok(value) => {
                return Ok(Invocation {
                    value,
                    exchanges,
                    repairs_used: attempt,
                })
            }
            Err(err) => {
                attempt_prompt = format!(
                    "{prompt}\n\nYour previous response could not be used: {err}. \
                     Respond again in the required JSON format without any additional content."
                );
                last_completion = completion;
                last_error = Some(err);
            }
        }
    }

    Err(InvokeError::ExhaustedRepairs {
        attempts: max_repairs + 1,
        last_error: last_error.expect("at least one attempt ran"),
        last_completion,
        exchanges,
    })
}
