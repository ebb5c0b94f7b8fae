//! Region-structured reports and their canonical text form.
//!
//! A report is an ordered map from region to free text. The canonical text
//! form numbers the present regions sequentially and reads
//! `The region 0 is abdomen: ... The region 1 is bone: ...`; section
//! indices are positional, not bound to region names, so reports covering
//! any subset of the 10 regions serialize cleanly.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::RegionId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("unparseable report prefix at byte {position}: {snippet:?}")]
    UnparseablePrefix { position: usize, snippet: String },
    #[error("unknown region name: {0:?}")]
    UnknownRegion(String),
    #[error("duplicate region: {0}")]
    DuplicateRegion(RegionId),
    #[error("empty section text for region {0}")]
    EmptySection(RegionId),
}

/// An ordered region → text map. Section text is stored trimmed and is
/// never empty; iteration follows the canonical region order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Report {
    sections: BTreeMap<RegionId, String>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a report from `(region, text)` pairs, rejecting duplicates
    /// and empty sections.
    pub fn from_sections<I, S>(sections: I) -> Result<Self, ReportError>
    where
        I: IntoIterator<Item = (RegionId, S)>,
        S: Into<String>,
    {
        let mut report = Report::new();
        for (region, text) in sections {
            report.insert(region, text)?;
        }
        Ok(report)
    }

    /// Adds a section. The text is trimmed; empty text and duplicate
    /// regions are rejected.
    pub fn insert(&mut self, region: RegionId, text: impl Into<String>) -> Result<(), ReportError> {
        let text = text.into().trim().to_string();
        if text.is_empty() {
            return Err(ReportError::EmptySection(region));
        }
        if self.sections.contains_key(&region) {
            return Err(ReportError::DuplicateRegion(region));
        }
        self.sections.insert(region, text);
        Ok(())
    }

    pub fn get(&self, region: RegionId) -> Option<&str> {
        self.sections.get(&region).map(String::as_str)
    }

    pub fn contains(&self, region: RegionId) -> bool {
        self.sections.contains_key(&region)
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    /// Sections in canonical region order.
    pub fn iter(&self) -> impl Iterator<Item = (RegionId, &str)> {
        self.sections.iter().map(|(r, t)| (*r, t.as_str()))
    }

    /// Canonical text form; the inverse of [`parse_report`].
    pub fn to_canonical_text(&self) -> String {
        serialize_report(self)
    }
}

/// Renders a report in the canonical text form: one
/// `The region <k> is <name>: <text>` clause per present region, joined by
/// single spaces, with `k` counting present regions from 0 in canonical
/// region order. An empty report renders as the empty string.
pub fn serialize_report(report: &Report) -> String {
    report
        .iter()
        .enumerate()
        .map(|(k, (region, text))| format!("The region {k} is {region}: {text}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn header_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"The region (\d+) is ([A-Za-z/]+): ?").expect("static regex"))
}

/// Parses the canonical text form back into a [`Report`].
///
/// Empty (or whitespace-only) input yields an empty report. Unknown region
/// names, duplicated regions, empty section bodies, and text that does not
/// begin with a section header are rejected.
pub fn parse_report(text: &str) -> Result<Report, ReportError> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Report::new());
    }

    let headers: Vec<_> = header_regex().captures_iter(text).collect();
    let first = headers.first().ok_or_else(|| ReportError::UnparseablePrefix {
        position: 0,
        snippet: snippet_of(text),
    })?;
    let first_start = first.get(0).expect("capture 0").start();
    if first_start != 0 {
        return Err(ReportError::UnparseablePrefix {
            position: 0,
            snippet: snippet_of(text),
        });
    }

    let mut report = Report::new();
    for (i, caps) in headers.iter().enumerate() {
        let whole = caps.get(0).expect("capture 0");
        let name = caps.get(2).expect("region name").as_str();
        let region = RegionId::from_name(name).ok_or_else(|| ReportError::UnknownRegion(name.to_string()))?;
        let body_start = whole.end();
        let body_end = headers
            .get(i + 1)
            .map(|next| next.get(0).expect("capture 0").start())
            .unwrap_or(text.len());
        let body = text[body_start..body_end].trim();
        if body.is_empty() {
            return Err(ReportError::EmptySection(region));
        }
        report.insert(region, body)?;
    }
    Ok(report)
}

fn snippet_of(text: &str) -> String {
    let mut end = text.len().min(40);
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    text[..end].to_string()
}
