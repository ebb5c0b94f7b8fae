//! Structured-output parsing for agent completions.
//!
//! Models are told to respond with bare JSON but in practice wrap it in
//! code fences or prose, so extraction takes the longest balanced-brace
//! object in the completion (string-aware) before schema validation.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::report::{parse_report, Report, ReportError};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("no JSON object found in completion")]
    NoJson,
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("malformed report: {0}")]
    MalformedReport(#[from] ReportError),
}

/// A fellow's verdict on the current consensus report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stance {
    pub answer: StanceAnswer,
    /// 1 = low, 2 = moderate, 3 = high.
    pub confidence: u8,
    pub reason: String,
    pub evidences: Vec<String>,
    /// Stamped by the orchestrator; empty straight out of the parser.
    #[serde(default)]
    pub fellow_id: String,
    /// Stamped by the orchestrator; 0 straight out of the parser.
    #[serde(default)]
    pub round: u32,
}

impl Stance {
    pub fn is_agreement(&self) -> bool {
        self.answer == StanceAnswer::Agree
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StanceAnswer {
    Agree,
    Disagree,
}

/// Whether the attending keeps the discussion going.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionAction {
    Continue,
    Stop,
}

/// The attending's round verdict: action, revised report, reasons, and
/// next-round instructions for the fellows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttendingDecision {
    pub action: DecisionAction,
    pub report: Report,
    pub reasons: Vec<String>,
    pub instructions: Vec<String>,
}

/// Strips code fences, then returns the longest balanced top-level
/// `{...}` span. Braces inside JSON strings are ignored.
fn extract_json_object(completion: &str) -> Option<&str> {
    let text = strip_fences(completion);
    let bytes = text.as_bytes();
    let mut best: Option<(usize, usize)> = None;
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' if depth > 0 => in_string = true,
            b'{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    let len = i + 1 - start;
                    if best.is_none_or(|(s, e)| len > e - s) {
                        best = Some((start, i + 1));
                    }
                }
            }
            _ => {}
        }
    }
    best.map(|(s, e)| &text[s..e])
}

fn strip_fences(completion: &str) -> &str {
    let trimmed = completion.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return completion;
    };
    // Drop an optional language tag on the fence line.
    let body = match rest.find('\n') {
        Some(nl) => &rest[nl + 1..],
        None => rest,
    };
    match body.rfind("```") {
        Some(end) => body[..end].trim(),
        None => completion,
    }
}

fn parsed_object(completion: &str) -> Result<serde_json::Map<String, Value>, ParseError> {
    let span = extract_json_object(completion).ok_or(ParseError::NoJson)?;
    let value: Value = serde_json::from_str(span).map_err(|_| ParseError::NoJson)?;
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(ParseError::NoJson),
    }
}

fn required<'a>(
    map: &'a serde_json::Map<String, Value>,
    key: &str,
) -> Result<&'a Value, ParseError> {
    map.get(key)
        .ok_or_else(|| ParseError::Schema(format!("missing required key {key:?}")))
}

fn as_str<'a>(value: &'a Value, key: &str) -> Result<&'a str, ParseError> {
    value
        .as_str()
        .ok_or_else(|| ParseError::Schema(format!("{key:?} must be a string")))
}

fn string_list(value: &Value, key: &str) -> Result<Vec<String>, ParseError> {
    let arr = value
        .as_array()
        .ok_or_else(|| ParseError::Schema(format!("{key:?} must be an array of strings")))?;
    arr.iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| ParseError::Schema(format!("{key:?} must contain only strings")))
        })
        .collect()
}

/// Parses a fellow stance completion:
/// `{"answer": "agree"|"disagree", "confidence": 1..3, "reason": ...,
/// "evidences": [...]}`. A disagreement must carry evidence.
pub fn parse_fellow_stance(completion: &str) -> Result<Stance, ParseError> {
    let map = parsed_object(completion)?;
    let answer = match as_str(required(&map, "answer")?, "answer")?
        .to_ascii_lowercase()
        .as_str()
    {
        "agree" => StanceAnswer::Agree,
        "disagree" => StanceAnswer::Disagree,
        other => {
            return Err(ParseError::Schema(format!(
                "\"answer\" must be \"agree\" or \"disagree\", got {other:?}"
            )))
        }
    };
    let confidence_value = required(&map, "confidence")?;
    let confidence = confidence_value
        .as_i64()
        .filter(|_| confidence_value.as_f64().is_some_and(|f| f.fract() == 0.0))
        .ok_or_else(|| ParseError::Schema("\"confidence\" must be an integer".to_string()))?;
    if !(1..=3).contains(&confidence) {
        return Err(ParseError::Schema(format!(
            "\"confidence\" must be 1, 2, or 3, got {confidence}"
        )));
    }
    let reason = as_str(required(&map, "reason")?, "reason")?.to_string();
    let evidences = string_list(required(&map, "evidences")?, "evidences")?;
    if answer == StanceAnswer::Disagree && evidences.is_empty() {
        return Err(ParseError::Schema(
            "a \"disagree\" stance must list at least one evidence".to_string(),
        ));
    }
    Ok(Stance {
        answer,
        confidence: confidence as u8,
        reason,
        evidences,
        fellow_id: String::new(),
        round: 0,
    })
}

/// Parses an attending adjudication completion:
/// `{"action": "Yes"|"No", "report": ..., "reasons": [...],
/// "instructions": [...]}`. "Yes" continues the discussion, "No" stops it.
pub fn parse_attending_decision(completion: &str) -> Result<AttendingDecision, ParseError> {
    let map = parsed_object(completion)?;
    let action = match as_str(required(&map, "action")?, "action")?
        .to_ascii_lowercase()
        .as_str()
    {
        "yes" => DecisionAction::Continue,
        "no" => DecisionAction::Stop,
        other => {
            return Err(ParseError::Schema(format!(
                "\"action\" must be \"Yes\" or \"No\", got {other:?}"
            )))
        }
    };
    let report = parse_report(as_str(required(&map, "report")?, "report")?)?;
    let reasons = string_list(required(&map, "reasons")?, "reasons")?;
    let instructions = string_list(required(&map, "instructions")?, "instructions")?;
    Ok(AttendingDecision {
        action,
        report,
        reasons,
        instructions,
    })
}

/// Parses a fellow revision completion: `{"report": "<canonical text>"}`.
pub fn parse_fellow_revision(completion: &str) -> Result<Report, ParseError> {
    let map = parsed_object(completion)?;
    let text = as_str(required(&map, "report")?, "report")?;
    Ok(parse_report(text)?)
}

/// Parses an attending synthesis completion:
/// `{"report": ..., "reasons": [...]}`; reasons default to empty.
pub fn parse_attending_synthesis(completion: &str) -> Result<(Report, Vec<String>), ParseError> {
    let map = parsed_object(completion)?;
    let report = parse_report(as_str(required(&map, "report")?, "report")?)?;
    let reasons = match map.get("reasons") {
        Some(v) => string_list(v, "reasons")?,
        None => Vec::new(),
    };
    Ok((report, reasons))
}
