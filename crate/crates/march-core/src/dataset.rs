//! Case records and JSONL database ingestion.
//!
//! A database file holds one JSON object per line:
//!
//! ```json
//! {"case_id": "c1", "report": {"lung": "Clear."}, "image_embedding": [..],
//!  "text_embedding": [..], "logits": [..18 numbers..], "draft": {"lung": ".."}}
//! ```
//!
//! `image_embedding`, `text_embedding`, and `logits` may be omitted (or
//! empty) when a case lacks that feature; present logits must have exactly
//! 18 entries and present embeddings must agree in dimension across the
//! whole file.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::Report;
use crate::taxonomy::AbnormalityId;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: {field} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        line: usize,
        field: &'static str,
        expected: usize,
        found: usize,
    },
}

impl DatasetError {
    fn schema(line: usize, message: impl Into<String>) -> Self {
        DatasetError::Schema {
            line,
            message: message.into(),
        }
    }
}

/// One CT study: reference report plus the precomputed features retrieval
/// runs on, and optionally a precomputed draft report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub report: Report,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub image_embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub text_embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub logits: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draft: Option<Report>,
}

impl CaseRecord {
    pub fn has_image_embedding(&self) -> bool {
        !self.image_embedding.is_empty()
    }

    pub fn has_text_embedding(&self) -> bool {
        !self.text_embedding.is_empty()
    }

    pub fn has_logits(&self) -> bool {
        !self.logits.is_empty()
    }
}

/// Embedding dimensions and provenance shared by all cases in a database.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseMeta {
    /// Image-embedding dimension; 0 when no case carries one.
    pub d_img: usize,
    /// Text-embedding dimension; 0 when no case carries one.
    pub d_txt: usize,
    pub provenance: String,
}

/// An immutable, id-indexed collection of case records.
#[derive(Debug, Clone, Default)]
pub struct CaseDatabase {
    cases: Vec<CaseRecord>,
    by_id: HashMap<String, usize>,
    meta: DatabaseMeta,
}

impl CaseDatabase {
    /// Validates records (unique ids, logit length, embedding-dimension
    /// consistency) and builds the id index. `line_offsets`, when given,
    /// maps record index → source line for diagnostics.
    pub fn from_records(
        records: Vec<CaseRecord>,
        provenance: impl Into<String>,
        line_offsets: Option<&[usize]>,
    ) -> Result<Self, DatasetError> {
        let line_of = |idx: usize| line_offsets.map(|ls| ls[idx]).unwrap_or(idx + 1);
        let mut d_img = 0usize;
        let mut d_txt = 0usize;
        let mut by_id = HashMap::with_capacity(records.len());

        for (idx, case) in records.iter().enumerate() {
            let line = line_of(idx);
            if case.case_id.is_empty() {
                return Err(DatasetError::schema(line, "empty case_id"));
            }
            if by_id.insert(case.case_id.clone(), idx).is_some() {
                return Err(DatasetError::schema(
                    line,
                    format!("duplicate case_id {:?}", case.case_id),
                ));
            }
            if case.has_logits() && case.logits.len() != AbnormalityId::COUNT {
                return Err(DatasetError::DimensionMismatch {
                    line,
                    field: "logits",
                    expected: AbnormalityId::COUNT,
                    found: case.logits.len(),
                });
            }
            if case.has_image_embedding() {
                if d_img == 0 {
                    d_img = case.image_embedding.len();
                } else if case.image_embedding.len() != d_img {
                    return Err(DatasetError::DimensionMismatch {
                        line,
                        field: "image_embedding",
                        expected: d_img,
                        found: case.image_embedding.len(),
                    });
                }
            }
            if case.has_text_embedding() {
                if d_txt == 0 {
                    d_txt = case.text_embedding.len();
                } else if case.text_embedding.len() != d_txt {
                    return Err(DatasetError::DimensionMismatch {
                        line,
                        field: "text_embedding",
                        expected: d_txt,
                        found: case.text_embedding.len(),
                    });
                }
            }
        }

        Ok(CaseDatabase {
            cases: records,
            by_id,
            meta: DatabaseMeta {
                d_img,
                d_txt,
                provenance: provenance.into(),
            },
        })
    }

    pub fn cases(&self) -> &[CaseRecord] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn meta(&self) -> &DatabaseMeta {
        &self.meta
    }

    pub fn get(&self, case_id: &str) -> Option<&CaseRecord> {
        self.by_id.get(case_id).map(|&i| &self.cases[i])
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    case_id: String,
    report: BTreeMap<String, String>,
    #[serde(default)]
    image_embedding: Vec<f64>,
    #[serde(default)]
    text_embedding: Vec<f64>,
    #[serde(default)]
    logits: Vec<f64>,
    #[serde(default)]
    draft: Option<BTreeMap<String, String>>,
}

fn report_from_map(map: BTreeMap<String, String>, line: usize, field: &str) -> Result<Report, DatasetError> {
    let mut report = Report::new();
    for (name, text) in map {
        let region = crate::taxonomy::RegionId::from_name(&name)
            .ok_or_else(|| DatasetError::schema(line, format!("{field}: unknown region name {name:?}")))?;
        report
            .insert(region, text)
            .map_err(|e| DatasetError::schema(line, format!("{field}: {e}")))?;
    }
    Ok(report)
}

/// Loads and validates a JSONL case database. Blank lines are skipped; an
/// empty file yields an empty (still valid) database.
pub fn load_database(path: impl AsRef<Path>) -> Result<CaseDatabase, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let reader = BufReader::new(file);

    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawCase = serde_json::from_str(&line)
            .map_err(|e| DatasetError::schema(line_no, format!("invalid record: {e}")))?;
        let report = report_from_map(raw.report, line_no, "report")?;
        let draft = raw
            .draft
            .map(|d| report_from_map(d, line_no, "draft"))
            .transpose()?;
        records.push(CaseRecord {
            case_id: raw.case_id,
            report,
            image_embedding: raw.image_embedding,
            text_embedding: raw.text_embedding,
            logits: raw.logits,
            draft,
        });
        lines.push(line_no);
    }

    CaseDatabase::from_records(records, path.display().to_string(), Some(&lines))
}

/// Writes a database back out as normalized JSONL (stable key order, one
/// record per line, LF endings).
pub fn write_database(db: &CaseDatabase, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let mut file = File::create(path)?;
    for case in db.cases() {
        let line = serde_json::to_string(case).expect("case record serializes");
        file.write_all(line.as_bytes())?;
        file.write_all(b"\n")?;
    }
    Ok(())
}
