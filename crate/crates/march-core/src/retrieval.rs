//! Similarity retrieval over a case database.
//!
//! Three paradigms share one exact top-k scan: image-vs-image,
//! image-vs-text (requires a shared embedding space), and logit-vs-logit.
//! Cosine similarity is used throughout; it is scale-invariant, which
//! matters for logits whose calibration is unknown. The scan is exhaustive
//! — at desk scale exactness beats index structures, and the [`scan`]
//! module exposes both the sequential and the data-parallel path so they
//! can be compared directly.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{CaseDatabase, CaseRecord};
use crate::report::serialize_report;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("dimension mismatch: {context} ({left} vs {right})")]
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },
    #[error("zero vector: {0}")]
    ZeroVector(&'static str),
    #[error("probe is missing the {0} feature")]
    MissingFeature(&'static str),
    #[error("unknown case id: {0}")]
    UnknownCaseId(String),
}

/// The three ways a probe can be matched against the database.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalParadigm {
    ImageToImage,
    ImageToText,
    LogitsBased,
}

impl RetrievalParadigm {
    pub const ALL: [RetrievalParadigm; 3] = [
        RetrievalParadigm::ImageToImage,
        RetrievalParadigm::ImageToText,
        RetrievalParadigm::LogitsBased,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RetrievalParadigm::ImageToImage => "image-to-image",
            RetrievalParadigm::ImageToText => "image-to-text",
            RetrievalParadigm::LogitsBased => "logits",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "image-to-image" | "i2i" => Some(RetrievalParadigm::ImageToImage),
            "image-to-text" | "i2t" => Some(RetrievalParadigm::ImageToText),
            "logits" | "logits-based" => Some(RetrievalParadigm::LogitsBased),
            _ => None,
        }
    }
}

impl fmt::Display for RetrievalParadigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One retrieved case with its similarity score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub case_id: String,
    pub score: f64,
    pub paradigm: RetrievalParadigm,
}

/// Evidence assembled for the fellows: per-paradigm neighbor reports plus
/// a deterministic rendered block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedEvidence {
    /// Paradigm → `(case_id, serialized report)` in rank order.
    pub per_paradigm: BTreeMap<RetrievalParadigm, Vec<(String, String)>>,
    /// One `[<paradigm>#<rank>] <serialized report>` line per entry, in
    /// paradigm order then rank order.
    pub rendered: String,
}

/// Cosine similarity of two equal-dimension, non-zero vectors, clamped to
/// [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, RetrievalError> {
    if a.is_empty() || b.is_empty() || a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch {
            context: "cosine_similarity",
            left: a.len(),
            right: b.len(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 {
        return Err(RetrievalError::ZeroVector("left operand"));
    }
    if nb == 0.0 {
        return Err(RetrievalError::ZeroVector("right operand"));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

fn probe_vector(
    probe: &CaseRecord,
    paradigm: RetrievalParadigm,
) -> Result<&[f64], RetrievalError> {
    let (vector, feature) = match paradigm {
        RetrievalParadigm::ImageToImage | RetrievalParadigm::ImageToText => {
            (&probe.image_embedding, "image_embedding")
        }
        RetrievalParadigm::LogitsBased => (&probe.logits, "logits"),
    };
    if vector.is_empty() {
        return Err(RetrievalError::MissingFeature(feature));
    }
    Ok(vector)
}

fn candidate_vector(case: &CaseRecord, paradigm: RetrievalParadigm) -> &[f64] {
    match paradigm {
        RetrievalParadigm::ImageToImage => &case.image_embedding,
        RetrievalParadigm::ImageToText => &case.text_embedding,
        RetrievalParadigm::LogitsBased => &case.logits,
    }
}

/// The exhaustive scoring scan, in both execution flavors. Results are
/// identical; only the iteration strategy differs. Scoring works on case
/// indices so only the returned top-k allocates.
pub mod scan {
    use super::*;

    fn score_case(
        index: usize,
        case: &CaseRecord,
        probe_id: &str,
        probe_vec: &[f64],
        paradigm: RetrievalParadigm,
    ) -> Option<(usize, f64)> {
        if case.case_id == probe_id {
            return None;
        }
        let candidate = candidate_vector(case, paradigm);
        if candidate.len() != probe_vec.len() {
            // Missing feature on a database case: ineligible, not fatal.
            return None;
        }
        let score = cosine_similarity(probe_vec, candidate).ok()?;
        Some((index, score))
    }

    fn rank(
        cases: &[CaseRecord],
        mut scored: Vec<(usize, f64)>,
        paradigm: RetrievalParadigm,
        k: usize,
    ) -> Vec<Neighbor> {
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("scores are finite")
                .then_with(|| cases[a.0].case_id.cmp(&cases[b.0].case_id))
        });
        scored.truncate(k);
        scored
            .into_iter()
            .map(|(index, score)| Neighbor {
                case_id: cases[index].case_id.clone(),
                score,
                paradigm,
            })
            .collect()
    }

    /// Sequential scan.
    pub fn top_k_seq(
        cases: &[CaseRecord],
        probe_id: &str,
        probe_vec: &[f64],
        paradigm: RetrievalParadigm,
        k: usize,
    ) -> Vec<Neighbor> {
        let scored = cases
            .iter()
            .enumerate()
            .filter_map(|(i, c)| score_case(i, c, probe_id, probe_vec, paradigm))
            .collect();
        rank(cases, scored, paradigm, k)
    }

    /// Data-parallel scan; same output as [`top_k_seq`].
    #[cfg(feature = "parallel")]
    pub fn top_k_par(
        cases: &[CaseRecord],
        probe_id: &str,
        probe_vec: &[f64],
        paradigm: RetrievalParadigm,
        k: usize,
    ) -> Vec<Neighbor> {
        use rayon::prelude::*;
        let scored = cases
            .par_iter()
            .enumerate()
            .filter_map(|(i, c)| score_case(i, c, probe_id, probe_vec, paradigm))
            .collect();
        rank(cases, scored, paradigm, k)
    }
}

/// Top-k retrieval by descending similarity, ties broken by ascending
/// case id. The probe itself (matched by case id) is excluded; database
/// cases lacking the paradigm's feature are skipped.
pub fn query(
    db: &CaseDatabase,
    probe: &CaseRecord,
    paradigm: RetrievalParadigm,
    k: usize,
) -> Result<Vec<Neighbor>, RetrievalError> {
    if db.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let probe_vec = probe_vector(probe, paradigm)?;
    match paradigm {
        RetrievalParadigm::ImageToImage => {
            if db.meta().d_img != 0 && probe_vec.len() != db.meta().d_img {
                return Err(RetrievalError::DimensionMismatch {
                    context: "probe image vs database image space",
                    left: probe_vec.len(),
                    right: db.meta().d_img,
                });
            }
        }
        RetrievalParadigm::ImageToText => {
            // Cross-modal comparison needs a shared embedding space.
            if db.meta().d_txt != 0 && db.meta().d_img != 0 && db.meta().d_img != db.meta().d_txt {
                return Err(RetrievalError::DimensionMismatch {
                    context: "image-to-text requires d_img == d_txt",
                    left: db.meta().d_img,
                    right: db.meta().d_txt,
                });
            }
            if db.meta().d_txt != 0 && probe_vec.len() != db.meta().d_txt {
                return Err(RetrievalError::DimensionMismatch {
                    context: "probe image vs database text space",
                    left: probe_vec.len(),
                    right: db.meta().d_txt,
                });
            }
        }
        RetrievalParadigm::LogitsBased => {
            if probe_vec.len() != crate::taxonomy::AbnormalityId::COUNT {
                return Err(RetrievalError::DimensionMismatch {
                    context: "probe logits",
                    left: probe_vec.len(),
                    right: crate::taxonomy::AbnormalityId::COUNT,
                });
            }
        }
    }

    // Below this size the fork/join overhead outweighs the scan itself;
    // batch-level parallelism already covers the small-database case.
    #[cfg(feature = "parallel")]
    const PARALLEL_SCAN_THRESHOLD: usize = 4096;
    #[cfg(feature = "parallel")]
    let neighbors = if db.len() >= PARALLEL_SCAN_THRESHOLD {
        scan::top_k_par(db.cases(), &probe.case_id, probe_vec, paradigm, k)
    } else {
        scan::top_k_seq(db.cases(), &probe.case_id, probe_vec, paradigm, k)
    };
    #[cfg(not(feature = "parallel"))]
    let neighbors = scan::top_k_seq(db.cases(), &probe.case_id, probe_vec, paradigm, k);
    Ok(neighbors)
}

/// Builds the fellows' evidence block from per-paradigm neighbor lists.
/// Paradigms render in canonical order; entries keep their rank order and
/// are truncated to `k` per paradigm.
pub fn assemble_evidence(
    neighbors_by_paradigm: &BTreeMap<RetrievalParadigm, Vec<Neighbor>>,
    db: &CaseDatabase,
    k: usize,
) -> Result<RetrievedEvidence, RetrievalError> {
    let mut per_paradigm = BTreeMap::new();
    let mut lines = Vec::new();
    for paradigm in RetrievalParadigm::ALL {
        let Some(neighbors) = neighbors_by_paradigm.get(&paradigm) else {
            continue;
        };
        let mut entries = Vec::new();
        for (rank, neighbor) in neighbors.iter().take(k).enumerate() {
            let case = db
                .get(&neighbor.case_id)
                .ok_or_else(|| RetrievalError::UnknownCaseId(neighbor.case_id.clone()))?;
            let text = serialize_report(&case.report);
            lines.push(format!("[{}#{}] {}", paradigm, rank + 1, text));
            entries.push((neighbor.case_id.clone(), text));
        }
        per_paradigm.insert(paradigm, entries);
    }
    Ok(RetrievedEvidence {
        per_paradigm,
        rendered: lines.join("\n"),
    })
}
