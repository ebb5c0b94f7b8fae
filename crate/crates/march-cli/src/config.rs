//! Run configuration: a TOML file plus command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use march_core::agents::TemplateSet;
use march_core::consensus::ConsensusConfig;
use march_core::pipeline::{PipelineConfig, PipelineMode};
use march_core::retrieval::RetrievalParadigm;

use crate::CliError;

/// One role's backend binding.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendSpec {
    /// Resident only: serve the dataset's precomputed draft.
    Fixture,
    /// Canned completions from `<dir>/<case_id>/<role>[...].json`.
    Scripted { dir: PathBuf },
    /// Chat-completions endpoint; credentials come from `MARCH_API_KEY`.
    Remote {
        endpoint: String,
        model: String,
        #[serde(default)]
        temperature: f64,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    60_000
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsSpec {
    pub resident: Option<BackendSpec>,
    pub fellow: Option<BackendSpec>,
    pub attending: Option<BackendSpec>,
}

/// The run configuration file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_fellows")]
    pub fellows: usize,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_paradigms")]
    pub paradigms: Vec<String>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_max_repairs")]
    pub max_repairs: u32,
    /// Exit nonzero when any case fails.
    #[serde(default = "default_strict")]
    pub strict: bool,
    #[serde(default)]
    pub tolerate_fellow_failure: bool,
    #[serde(default = "default_results_dir")]
    pub results_dir: PathBuf,
    #[serde(default = "default_transcript_dir")]
    pub transcript_dir: PathBuf,
    /// Template id → replacement file path.
    #[serde(default)]
    pub templates: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub backends: BackendsSpec,
}

fn default_mode() -> String {
    "full".to_string()
}
fn default_fellows() -> usize {
    3
}
fn default_max_rounds() -> u32 {
    3
}
fn default_k() -> usize {
    3
}
fn default_paradigms() -> Vec<String> {
    RetrievalParadigm::ALL.iter().map(|p| p.name().to_string()).collect()
}
fn default_parallelism() -> usize {
    1
}
fn default_max_repairs() -> u32 {
    1
}
fn default_strict() -> bool {
    true
}
fn default_results_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_transcript_dir() -> PathBuf {
    PathBuf::from("transcripts")
}

impl Default for RunSpec {
    fn default() -> Self {
        toml::from_str("").expect("empty spec uses defaults")
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub mode: Option<String>,
    pub fellows: Option<usize>,
    pub max_rounds: Option<u32>,
    pub k: Option<usize>,
    pub paradigms: Option<Vec<String>>,
    pub parallelism: Option<usize>,
    pub results_dir: Option<PathBuf>,
    pub transcript_dir: Option<PathBuf>,
}

impl RunSpec {
    pub fn load(path: &Path) -> Result<RunSpec, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut spec: RunSpec = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("invalid config {}: {e}", path.display())))?;
        if let Some(base) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            spec.rebase(base);
        }
        Ok(spec)
    }

    /// Resolves the config file's relative paths against its own
    /// directory, so runs behave the same from any working directory.
    /// Command-line overrides are applied afterwards and stay relative to
    /// the invoker.
    fn rebase(&mut self, base: &Path) {
        let rebase_path = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase_path(&mut self.results_dir);
        rebase_path(&mut self.transcript_dir);
        for path in self.templates.values_mut() {
            rebase_path(path);
        }
        for backend in [
            self.backends.resident.as_mut(),
            self.backends.fellow.as_mut(),
            self.backends.attending.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            if let BackendSpec::Scripted { dir } = backend {
                rebase_path(dir);
            }
        }
    }

    pub fn apply(&mut self, overrides: &RunOverrides) {
        if let Some(v) = &overrides.mode {
            self.mode = v.clone();
        }
        if let Some(v) = overrides.fellows {
            self.fellows = v;
        }
        if let Some(v) = overrides.max_rounds {
            self.max_rounds = v;
        }
        if let Some(v) = overrides.k {
            self.k = v;
        }
        if let Some(v) = &overrides.paradigms {
            self.paradigms = v.clone();
        }
        if let Some(v) = overrides.parallelism {
            self.parallelism = v;
        }
        if let Some(v) = &overrides.results_dir {
            self.results_dir = v.clone();
        }
        if let Some(v) = &overrides.transcript_dir {
            self.transcript_dir = v.clone();
        }
    }

    pub fn mode(&self) -> Result<PipelineMode, CliError> {
        PipelineMode::from_name(&self.mode).ok_or_else(|| {
            CliError::Validation(format!(
                "unknown mode {:?}; expected one of {}",
                self.mode,
                PipelineMode::ALL.map(|m| m.name()).join(", ")
            ))
        })
    }

    pub fn paradigms(&self) -> Result<Vec<RetrievalParadigm>, CliError> {
        self.paradigms
            .iter()
            .map(|name| {
                RetrievalParadigm::from_name(name).ok_or_else(|| {
                    CliError::Validation(format!(
                        "unknown retrieval paradigm {:?}; expected one of {}",
                        name,
                        RetrievalParadigm::ALL.map(|p| p.name()).join(", ")
                    ))
                })
            })
            .collect()
    }

    fn templates(&self) -> Result<TemplateSet, CliError> {
        let mut set = TemplateSet::default();
        for (id, path) in &self.templates {
            set.override_from_file(id, path)
                .map_err(|e| CliError::Validation(e.to_string()))?;
        }
        Ok(set)
    }

    /// Builds the engine-level pipeline configuration.
    pub fn pipeline_config(&self) -> Result<PipelineConfig, CliError> {
        if self.fellows == 0 {
            return Err(CliError::Validation("fellows must be at least 1".into()));
        }
        if self.max_rounds == 0 {
            return Err(CliError::Validation("max-rounds must be at least 1".into()));
        }
        Ok(PipelineConfig {
            mode: self.mode()?,
            consensus: ConsensusConfig {
                num_fellows: self.fellows,
                max_rounds: self.max_rounds,
                tolerate_fellow_failure: self.tolerate_fellow_failure,
                max_repairs: self.max_repairs,
                ..ConsensusConfig::default()
            },
            retrieval_k: self.k,
            paradigms: self.paradigms()?,
            templates: self.templates()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let spec = RunSpec::default();
        assert_eq!(spec.mode, "full");
        assert_eq!(spec.fellows, 3);
        assert_eq!(spec.max_rounds, 3);
        assert_eq!(spec.k, 3);
        assert_eq!(spec.paradigms.len(), 3);
        assert!(spec.strict);
        let config = spec.pipeline_config().unwrap();
        assert_eq!(config.mode, PipelineMode::Full);
        assert_eq!(config.retrieval_k, 3);
    }

    #[test]
    fn parses_full_config_with_overrides() {
        let text = r#"
mode = "sr-ma"
fellows = 5
k = 2
paradigms = ["logits"]

[backends.fellow]
kind = "scripted"
dir = "scripts"

[backends.attending]
kind = "remote"
endpoint = "https://api.example.com/v1"
model = "gpt-test"
"#;
        let mut spec: RunSpec = toml::from_str(text).unwrap();
        assert_eq!(spec.fellows, 5);
        assert!(matches!(spec.backends.attending, Some(BackendSpec::Remote { .. })));

        spec.apply(&RunOverrides {
            mode: Some("full".into()),
            fellows: Some(2),
            ..Default::default()
        });
        assert_eq!(spec.mode().unwrap(), PipelineMode::Full);
        assert_eq!(spec.fellows, 2);
        assert_eq!(spec.paradigms().unwrap(), vec![RetrievalParadigm::LogitsBased]);
    }

    #[test]
    fn bad_mode_and_paradigm_are_rejected() {
        let bad_mode = RunSpec { mode: "turbo".into(), ..RunSpec::default() };
        assert!(matches!(bad_mode.mode().unwrap_err(), CliError::Validation(_)));
        let bad_paradigm = RunSpec { paradigms: vec!["psychic".into()], ..RunSpec::default() };
        assert!(matches!(bad_paradigm.paradigms().unwrap_err(), CliError::Validation(_)));
    }
}
