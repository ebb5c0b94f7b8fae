//! Orchestration engine for hierarchical multi-agent radiology report
//! generation: drafting, retrieval-augmented revision, stance-based
//! consensus, and reference-based evaluation.
//!
//! The engine is organized around four agent roles (resident, fellows,
//! attending, retrieval) wired into a three-stage per-case pipeline, with
//! pluggable agent backends (remote chat endpoints or deterministic
//! scripted fixtures), an exact similarity index over precomputed case
//! features, and lexical plus clinical-efficacy metrics.
//!
//! Data-parallel inner loops (retrieval scans, batch runs, corpus metrics)
//! use rayon when the default `parallel` feature is enabled and fall back
//! to sequential iteration otherwise; outputs are identical either way.

pub mod agents;
pub mod consensus;
pub mod dataset;
pub mod eval;
pub mod pipeline;
pub mod report;
pub mod retrieval;
pub mod taxonomy;

pub use dataset::{CaseDatabase, CaseRecord, DatasetError};
pub use report::{parse_report, serialize_report, Report, ReportError};
pub use taxonomy::{AbnormalityId, RegionId};
