//! Backend construction from the configured role bindings.
//!
//! Scripted bindings read canned completions from
//! `<dir>/<case_id>/resident.json`, `fellow_<i>.json` (falling back to
//! `fellow_default.json`), and `attending_n<N>.json` (falling back to
//! `attending.json`); each file is a JSON array of completion strings.
//! Remote bindings share one client configuration across per-seat
//! backends so fellow identities stay distinct in transcripts.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use march_core::agents::remote::{RemoteBackend, RemoteConfig};
use march_core::agents::{AgentBackend, AgentRole, ScriptedBackend, API_KEY_ENV};
use march_core::dataset::CaseRecord;
use march_core::pipeline::{BackendFactory, CaseBackends, PipelineMode};

use crate::config::{BackendSpec, RunSpec};
use crate::CliError;

#[derive(Debug, Clone)]
enum Binding {
    Fixture,
    Scripted(PathBuf),
    Remote(RemoteConfig),
}

pub struct ConfiguredFactory {
    resident: Option<Binding>,
    fellow: Option<Binding>,
    attending: Option<Binding>,
}

fn to_binding(
    role: &str,
    spec: &BackendSpec,
    api_key: Option<&str>,
) -> Result<Binding, CliError> {
    match spec {
        BackendSpec::Fixture => Ok(Binding::Fixture),
        BackendSpec::Scripted { dir } => Ok(Binding::Scripted(dir.clone())),
        BackendSpec::Remote { endpoint, model, temperature, timeout_ms } => {
            let api_key = api_key.ok_or_else(|| {
                CliError::Backend(format!(
                    "backend for role {role:?} is remote but {API_KEY_ENV} is not set; \
                     export {API_KEY_ENV} with the bearer token for {endpoint}"
                ))
            })?;
            Ok(Binding::Remote(RemoteConfig {
                endpoint: endpoint.clone(),
                model: model.clone(),
                api_key: Some(api_key.to_string()),
                temperature: *temperature,
                timeout: Duration::from_millis(*timeout_ms),
                ..RemoteConfig::default()
            }))
        }
    }
}

impl ConfiguredFactory {
    /// Validates the bindings for the requested mode. Remote bindings
    /// require `MARCH_API_KEY` up front so a missing credential fails the
    /// run before any case starts.
    pub fn from_spec(spec: &RunSpec, mode: PipelineMode) -> Result<Self, CliError> {
        let api_key = std::env::var(API_KEY_ENV).ok();
        let api_key = api_key.as_deref();

        let resident = spec
            .backends
            .resident
            .as_ref()
            .map(|b| to_binding("resident", b, api_key))
            .transpose()?
            .or(Some(Binding::Fixture));
        let fellow = spec
            .backends
            .fellow
            .as_ref()
            .map(|b| to_binding("fellow", b, api_key))
            .transpose()?;
        let attending = spec
            .backends
            .attending
            .as_ref()
            .map(|b| to_binding("attending", b, api_key))
            .transpose()?;

        let needs_fellows = mode != PipelineMode::ResidentOnly;
        let needs_attending = matches!(
            mode,
            PipelineMode::SingleRoundMultiAgent | PipelineMode::MultiRoundMultiAgent | PipelineMode::Full
        );
        if needs_fellows && fellow.is_none() {
            return Err(CliError::Validation(format!(
                "mode {mode} needs a [backends.fellow] binding in the config"
            )));
        }
        if needs_attending && attending.is_none() {
            return Err(CliError::Validation(format!(
                "mode {mode} needs a [backends.attending] binding in the config"
            )));
        }
        Ok(ConfiguredFactory { resident, fellow, attending })
    }
}

fn load_script(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read script {}: {e}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| format!("script {} must be a JSON array of strings: {e}", path.display()))
}

fn scripted(
    name: String,
    role: AgentRole,
    path: &Path,
) -> Result<Arc<dyn AgentBackend>, String> {
    Ok(Arc::new(ScriptedBackend::new(name, role, load_script(path)?)))
}

fn remote(
    name: String,
    role: AgentRole,
    config: &RemoteConfig,
) -> Result<Arc<dyn AgentBackend>, String> {
    Ok(Arc::new(
        RemoteBackend::new(name, role, config.clone()).map_err(|e| e.to_string())?,
    ))
}

impl BackendFactory for ConfiguredFactory {
    fn backends_for(&self, case: &CaseRecord, fellows: usize) -> Result<CaseBackends, String> {
        let case_dir = |dir: &Path| dir.join(&case.case_id);

        let resident = match &self.resident {
            None | Some(Binding::Fixture) => None,
            Some(Binding::Scripted(dir)) => {
                let path = case_dir(dir).join("resident.json");
                if path.exists() {
                    Some(scripted("resident".into(), AgentRole::Resident, &path)?)
                } else {
                    None
                }
            }
            Some(Binding::Remote(config)) => {
                Some(remote("resident".into(), AgentRole::Resident, config)?)
            }
        };

        let mut fellow_backends: Vec<Arc<dyn AgentBackend>> = Vec::with_capacity(fellows);
        if fellows > 0 {
            let binding = self.fellow.as_ref().ok_or("no fellow backend bound")?;
            for i in 0..fellows {
                let name = format!("fellow-{i}");
                let backend = match binding {
                    Binding::Scripted(dir) => {
                        let specific = case_dir(dir).join(format!("fellow_{i}.json"));
                        let fallback = case_dir(dir).join("fellow_default.json");
                        let path = if specific.exists() { specific } else { fallback };
                        scripted(name, AgentRole::Fellow, &path)?
                    }
                    Binding::Remote(config) => remote(name, AgentRole::Fellow, config)?,
                    Binding::Fixture => return Err("fellow backends cannot be fixtures".into()),
                };
                fellow_backends.push(backend);
            }
        }

        let attending = match &self.attending {
            None => None,
            Some(Binding::Scripted(dir)) => {
                let sized = case_dir(dir).join(format!("attending_n{fellows}.json"));
                let fallback = case_dir(dir).join("attending.json");
                let path = if sized.exists() {
                    sized
                } else if fallback.exists() {
                    fallback
                } else {
                    // Modes without an attending never touch it.
                    return Ok(CaseBackends { resident, fellows: fellow_backends, attending: None });
                };
                Some(scripted("attending".into(), AgentRole::Attending, &path)?)
            }
            Some(Binding::Remote(config)) => {
                Some(remote("attending".into(), AgentRole::Attending, config)?)
            }
            Some(Binding::Fixture) => return Err("attending backend cannot be a fixture".into()),
        };

        Ok(CaseBackends { resident, fellows: fellow_backends, attending })
    }
}
