//! Prompt templates with `{{name}}` placeholders.
//!
//! The five role templates ship embedded in the binary and can be
//! overridden per template id from files at startup. Placeholder syntax is
//! normalized to moustaches so that literal angle-bracket tokens (e.g.
//! feature markers inside the resident prompt) never collide with
//! substitution.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {template}: missing binding for {{{{{name}}}}}")]
    MissingBinding { template: String, name: String },
    #[error("template {template}: binding {name} does not appear in the template")]
    UnknownBinding { template: String, name: String },
    #[error("unknown template id: {0}")]
    UnknownTemplate(String),
    #[error("failed to read template override {path}: {message}")]
    Io { path: String, message: String },
}

fn placeholder_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{([A-Za-z0-9_]+)\}\}").expect("static regex"))
}

/// A prompt body plus the set of placeholder names it requires, derived
/// from the body so the two can never disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub template_id: String,
    pub body: String,
    pub required_bindings: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn new(template_id: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let required_bindings = placeholder_regex()
            .captures_iter(&body)
            .map(|c| c[1].to_string())
            .collect();
        PromptTemplate {
            template_id: template_id.into(),
            body,
            required_bindings,
        }
    }
}

/// Substitutes every placeholder in a single pass. Bindings must cover the
/// template's placeholders exactly — nothing missing, nothing extra.
pub fn render_prompt(
    template: &PromptTemplate,
    bindings: &BTreeMap<String, String>,
) -> Result<String, TemplateError> {
    for name in &template.required_bindings {
        if !bindings.contains_key(name) {
            return Err(TemplateError::MissingBinding {
                template: template.template_id.clone(),
                name: name.clone(),
            });
        }
    }
    for name in bindings.keys() {
        if !template.required_bindings.contains(name) {
            return Err(TemplateError::UnknownBinding {
                template: template.template_id.clone(),
                name: name.clone(),
            });
        }
    }
    let rendered = placeholder_regex().replace_all(&template.body, |caps: &regex::Captures<'_>| {
        bindings[&caps[1]].clone()
    });
    Ok(rendered.into_owned())
}

pub const TEMPLATE_IDS: [&str; 5] = [
    "resident_draft",
    "fellow_revision",
    "attending_synthesis",
    "fellow_stance",
    "attending_adjudication",
];

/// The five role templates, resolvable by id.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    resident_draft: PromptTemplate,
    fellow_revision: PromptTemplate,
    attending_synthesis: PromptTemplate,
    fellow_stance: PromptTemplate,
    attending_adjudication: PromptTemplate,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet {
            resident_draft: PromptTemplate::new(
                "resident_draft",
                include_str!("../../templates/resident_draft.txt"),
            ),
            fellow_revision: PromptTemplate::new(
                "fellow_revision",
                include_str!("../../templates/fellow_revision.txt"),
            ),
            attending_synthesis: PromptTemplate::new(
                "attending_synthesis",
                include_str!("../../templates/attending_synthesis.txt"),
            ),
            fellow_stance: PromptTemplate::new(
                "fellow_stance",
                include_str!("../../templates/fellow_stance.txt"),
            ),
            attending_adjudication: PromptTemplate::new(
                "attending_adjudication",
                include_str!("../../templates/attending_adjudication.txt"),
            ),
        }
    }
}

impl TemplateSet {
    pub fn get(&self, template_id: &str) -> Result<&PromptTemplate, TemplateError> {
        match template_id {
            "resident_draft" => Ok(&self.resident_draft),
            "fellow_revision" => Ok(&self.fellow_revision),
            "attending_synthesis" => Ok(&self.attending_synthesis),
            "fellow_stance" => Ok(&self.fellow_stance),
            "attending_adjudication" => Ok(&self.attending_adjudication),
            other => Err(TemplateError::UnknownTemplate(other.to_string())),
        }
    }

    /// Replaces one template's body with the contents of `path`.
    pub fn override_from_file(
        &mut self,
        template_id: &str,
        path: impl AsRef<Path>,
    ) -> Result<(), TemplateError> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let template = PromptTemplate::new(template_id, body);
        match template_id {
            "resident_draft" => self.resident_draft = template,
            "fellow_revision" => self.fellow_revision = template,
            "attending_synthesis" => self.attending_synthesis = template,
            "fellow_stance" => self.fellow_stance = template,
            "attending_adjudication" => self.attending_adjudication = template,
            other => return Err(TemplateError::UnknownTemplate(other.to_string())),
        }
        Ok(())
    }
}
