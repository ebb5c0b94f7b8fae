//! Deterministic scripted backend for tests, fixtures, and replays.

use std::sync::Mutex;
use std::time::Duration;

use super::{AgentBackend, AgentRole, BackendError};

struct ScriptState {
    completions: Vec<String>,
    cursor: usize,
    prompts: Vec<String>,
}

/// Serves canned completions in order and records every prompt received.
/// Exhausting the script is a backend error so runaway protocols surface
/// instead of looping.
pub struct ScriptedBackend {
    name: String,
    role: AgentRole,
    state: Mutex<ScriptState>,
    delays: Vec<Duration>,
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>, role: AgentRole, completions: Vec<String>) -> Self {
        ScriptedBackend {
            name: name.into(),
            role,
            state: Mutex::new(ScriptState {
                completions,
                cursor: 0,
                prompts: Vec::new(),
            }),
            delays: Vec::new(),
        }
    }

    /// Sleeps `delays[i]` before serving completion `i`; used to exercise
    /// ordering guarantees under concurrent fan-out.
    pub fn with_delays(mut self, delays: Vec<Duration>) -> Self {
        self.delays = delays;
        self
    }

    /// Prompts received so far, in invocation order.
    pub fn prompts(&self) -> Vec<String> {
        self.state.lock().expect("script lock").prompts.clone()
    }

    /// Number of invocations served or attempted.
    pub fn calls(&self) -> u32 {
        self.state.lock().expect("script lock").prompts.len() as u32
    }
}

impl AgentBackend for ScriptedBackend {
    fn invoke(&self, prompt: &str) -> Result<String, BackendError> {
        let (completion, delay) = {
            let mut state = self.state.lock().expect("script lock");
            state.prompts.push(prompt.to_string());
            let cursor = state.cursor;
            if cursor >= state.completions.len() {
                return Err(BackendError::TranscriptExhausted {
                    backend: self.name.clone(),
                    served: state.completions.len(),
                });
            }
            state.cursor += 1;
            (state.completions[cursor].clone(), self.delays.get(cursor).copied())
        };
        if let Some(delay) = delay {
            std::thread::sleep(delay);
        }
        Ok(completion)
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn role(&self) -> AgentRole {
        self.role
    }

    fn descriptor(&self) -> String {
        let state = self.state.lock().expect("script lock");
        format!("scripted({} completions)", state.completions.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serves_completions_in_order_then_errors() {
        let b = ScriptedBackend::new("s", AgentRole::Fellow, vec!["a".into(), "b".into()]);
        assert_eq!(b.invoke("p1").unwrap(), "a");
        assert_eq!(b.invoke("p2").unwrap(), "b");
        let err = b.invoke("p3").unwrap_err();
        assert!(matches!(err, BackendError::TranscriptExhausted { served: 2, .. }));
    }

    #[test]
    fn records_prompts_in_order() {
        let b = ScriptedBackend::new("s", AgentRole::Attending, vec!["a".into(), "b".into()]);
        b.invoke("first").unwrap();
        b.invoke("second").unwrap();
        assert_eq!(b.prompts(), vec!["first".to_string(), "second".to_string()]);
        assert_eq!(b.calls(), 2);
    }

    #[test]
    fn concurrent_invocations_each_get_one_entry() {
        let b = std::sync::Arc::new(ScriptedBackend::new(
            "s",
            AgentRole::Fellow,
            (0..16).map(|i| format!("c{i}")).collect(),
        ));
        let handles: Vec<_> = (0..16)
            .map(|i| {
                let b = b.clone();
                std::thread::spawn(move || b.invoke(&format!("p{i}")).unwrap())
            })
            .collect();
        let mut served: Vec<String> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        served.sort();
        let mut expected: Vec<String> = (0..16).map(|i| format!("c{i}")).collect();
        expected.sort();
        assert_eq!(served, expected);
    }
}
