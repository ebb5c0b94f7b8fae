//! End-to-end per-case execution: drafting, retrieval-augmented revision,
//! and consensus, plus batch running and the fellow-count sweep.
//!
//! Modes trade protocol depth for cost: `ResidentOnly` passes the draft
//! through untouched; `SingleRoundSingleAgent` stops after one fellow
//! revision; `SingleRoundMultiAgent` adds the attending synthesis;
//! `MultiRoundMultiAgent` runs the full stance protocol; `Full` adds the
//! unanimity short circuit and attending-instruction feedback on top.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    invoke_with_repair, parse_fellow_revision, AgentBackend, Exchange, ParseError, TemplateSet,
};
use crate::consensus::{
    run_consensus, synthesize_initial, ConsensusConfig, ConsensusTranscript, FellowSeat,
};
use crate::dataset::{CaseDatabase, CaseRecord};
use crate::eval::{evaluate, EvalError, Labeler, MetricsTable};
use crate::report::{parse_report, serialize_report, Report};
use crate::retrieval::{assemble_evidence, query, Neighbor, RetrievalParadigm};
use crate::taxonomy::RegionId;

/// Protocol depth for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineMode {
    ResidentOnly,
    SingleRoundSingleAgent,
    SingleRoundMultiAgent,
    MultiRoundMultiAgent,
    Full,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 5] = [
        PipelineMode::ResidentOnly,
        PipelineMode::SingleRoundSingleAgent,
        PipelineMode::SingleRoundMultiAgent,
        PipelineMode::MultiRoundMultiAgent,
        PipelineMode::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PipelineMode::ResidentOnly => "resident-only",
            PipelineMode::SingleRoundSingleAgent => "sr-sa",
            PipelineMode::SingleRoundMultiAgent => "sr-ma",
            PipelineMode::MultiRoundMultiAgent => "mr-ma",
            PipelineMode::Full => "full",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "resident-only" | "resident_only" | "residentonly" => Some(PipelineMode::ResidentOnly),
            "sr-sa" | "single-round-single-agent" => Some(PipelineMode::SingleRoundSingleAgent),
            "sr-ma" | "single-round-multi-agent" => Some(PipelineMode::SingleRoundMultiAgent),
            "mr-ma" | "multi-round-multi-agent" => Some(PipelineMode::MultiRoundMultiAgent),
            "full" => Some(PipelineMode::Full),
            _ => None,
        }
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Execution settings for one run.
#[derive(Clone)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    pub consensus: ConsensusConfig,
    /// Neighbors retrieved per paradigm.
    pub retrieval_k: usize,
    /// Enabled paradigms; assigned to fellows round-robin.
    pub paradigms: Vec<RetrievalParadigm>,
    pub templates: TemplateSet,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: PipelineMode::Full,
            consensus: ConsensusConfig::default(),
            retrieval_k: 3,
            paradigms: RetrievalParadigm::ALL.to_vec(),
            templates: TemplateSet::default(),
        }
    }
}

impl PipelineConfig {
    /// Fellows actually seated for this mode.
    pub fn effective_fellows(&self) -> usize {
        match self.mode {
            PipelineMode::ResidentOnly => 0,
            PipelineMode::SingleRoundSingleAgent => 1,
            _ => self.consensus.num_fellows.max(1),
        }
    }

    /// Consensus settings with the mode's overrides applied: SR-* cap at
    /// one round, MR-MA disables the short circuit and instruction
    /// feedback, Full enables both.
    pub fn effective_consensus(&self) -> ConsensusConfig {
        let mut cfg = self.consensus.clone();
        cfg.num_fellows = self.effective_fellows().max(1);
        match self.mode {
            PipelineMode::SingleRoundSingleAgent | PipelineMode::SingleRoundMultiAgent => {
                cfg.max_rounds = 1;
            }
            PipelineMode::MultiRoundMultiAgent => {
                cfg.unanimity_short_circuit = false;
                cfg.feed_instructions = false;
            }
            PipelineMode::Full => {
                cfg.unanimity_short_circuit = true;
                cfg.feed_instructions = true;
            }
            PipelineMode::ResidentOnly => {}
        }
        cfg
    }
}

/// Backends bound for one case.
#[derive(Clone, Default)]
pub struct CaseBackends {
    pub resident: Option<Arc<dyn AgentBackend>>,
    pub fellows: Vec<Arc<dyn AgentBackend>>,
    pub attending: Option<Arc<dyn AgentBackend>>,
}

/// Creates the per-case backends for a batch run. `fellows` is the seat
/// count the current mode needs.
pub trait BackendFactory: Send + Sync {
    fn backends_for(&self, case: &CaseRecord, fellows: usize) -> Result<CaseBackends, String>;
}

impl<F> BackendFactory for F
where
    F: Fn(&CaseRecord, usize) -> Result<CaseBackends, String> + Send + Sync,
{
    fn backends_for(&self, case: &CaseRecord, fellows: usize) -> Result<CaseBackends, String> {
        self(case, fellows)
    }
}

/// Call and character accounting for one case. Characters stand in for
/// tokens; no tokenizer is assumed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageStats {
    pub calls: u64,
    pub prompt_chars: u64,
    pub completion_chars: u64,
}

impl UsageStats {
    fn add_exchanges<'a>(&mut self, exchanges: impl Iterator<Item = &'a Exchange>) {
        for e in exchanges {
            self.calls += 1;
            self.prompt_chars += e.prompt.chars().count() as u64;
            self.completion_chars += e.completion.chars().count() as u64;
        }
    }
}

/// Wall-clock stage timings; in-memory only so persisted results stay
/// byte-stable across runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CaseTiming {
    pub total_ms: u128,
    pub draft_ms: u128,
    pub retrieval_ms: u128,
    pub revision_ms: u128,
    pub consensus_ms: u128,
}

/// Everything produced for one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub draft: Report,
    pub revised: Vec<Report>,
    #[serde(rename = "final")]
    pub final_report: Report,
    /// Drafting, revision, and synthesis traffic; consensus traffic lives
    /// in the transcript.
    pub exchanges: Vec<Exchange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<ConsensusTranscript>,
    pub usage: UsageStats,
    #[serde(skip)]
    pub timing: CaseTiming,
}

impl CaseResult {
    /// A result whose final report is the draft itself.
    pub fn passthrough(case_id: impl Into<String>, report: Report) -> Self {
        CaseResult {
            case_id: case_id.into(),
            draft: report.clone(),
            revised: Vec::new(),
            final_report: report,
            exchanges: Vec::new(),
            transcript: None,
            usage: UsageStats::default(),
            timing: CaseTiming::default(),
        }
    }
}

/// A recorded per-case failure; batches carry on past these.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("case {case_id} failed during {stage}: {message}")]
pub struct CaseFailure {
    pub case_id: String,
    pub stage: String,
    pub message: String,
}

fn resident_prompt(case: &CaseRecord, templates: &TemplateSet) -> String {
    let global_context = if case.has_image_embedding() {
        format!(
            "[global image features: {}-dimensional embedding for case {}]",
            case.image_embedding.len(),
            case.case_id
        )
    } else {
        format!("[global image features unavailable for case {}]", case.case_id)
    };
    let region_context = RegionId::ALL
        .iter()
        .enumerate()
        .map(|(i, r)| format!("The region {} is [regional features for {}].", i + 1, r.name()))
        .collect::<Vec<_>>()
        .join("\n");
    let bindings: BTreeMap<String, String> = [
        ("global_context".to_string(), global_context),
        ("region_context".to_string(), region_context),
    ]
    .into_iter()
    .collect();
    crate::agents::render_prompt(templates.get("resident_draft").expect("shipped template"), &bindings)
        .expect("resident bindings cover the template")
}

fn parse_resident_draft(completion: &str) -> Result<Report, ParseError> {
    let report = parse_report(completion.trim())?;
    if report.is_empty() {
        return Err(ParseError::Schema(
            "draft must contain at least one region section".to_string(),
        ));
    }
    Ok(report)
}

struct FellowContext {
    evidence: String,
}

fn fellow_evidence(
    case: &CaseRecord,
    db: &CaseDatabase,
    config: &PipelineConfig,
    fellow_count: usize,
) -> Result<Vec<FellowContext>, CaseFailure> {
    let fail = |message: String| CaseFailure {
        case_id: case.case_id.clone(),
        stage: "retrieval".to_string(),
        message,
    };
    let mut enabled: Vec<RetrievalParadigm> = config.paradigms.clone();
    enabled.sort();
    enabled.dedup();

    let mut per_paradigm: BTreeMap<RetrievalParadigm, Vec<Neighbor>> = BTreeMap::new();
    for &paradigm in &enabled {
        let neighbors = query(db, case, paradigm, config.retrieval_k).map_err(|e| fail(e.to_string()))?;
        per_paradigm.insert(paradigm, neighbors);
    }

    (0..fellow_count)
        .map(|i| {
            if enabled.is_empty() {
                return Ok(FellowContext { evidence: String::new() });
            }
            let paradigm = enabled[i % enabled.len()];
            let mut one = BTreeMap::new();
            one.insert(paradigm, per_paradigm[&paradigm].clone());
            let evidence =
                assemble_evidence(&one, db, config.retrieval_k).map_err(|e| fail(e.to_string()))?;
            Ok(FellowContext { evidence: evidence.rendered })
        })
        .collect()
}

fn revise_drafts(
    case: &CaseRecord,
    draft: &Report,
    contexts: &[FellowContext],
    fellows: &[Arc<dyn AgentBackend>],
    config: &PipelineConfig,
) -> Result<(Vec<Report>, Vec<Exchange>), CaseFailure> {
    let template = config.templates.get("fellow_revision").expect("shipped template");
    let draft_text = serialize_report(draft);
    let revise_one = |i: usize| {
        let bindings: BTreeMap<String, String> = [
            ("init_report".to_string(), draft_text.clone()),
            ("retrieved_report".to_string(), contexts[i].evidence.clone()),
        ]
        .into_iter()
        .collect();
        let prompt = crate::agents::render_prompt(template, &bindings)
            .expect("revision bindings cover the template");
        invoke_with_repair(
            fellows[i].as_ref(),
            &prompt,
            parse_fellow_revision,
            config.consensus.max_repairs,
        )
    };

    #[cfg(feature = "parallel")]
    let outcomes: Vec<_> = {
        use rayon::prelude::*;
        (0..contexts.len()).into_par_iter().map(revise_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<_> = (0..contexts.len()).map(revise_one).collect();

    let mut revised = Vec::with_capacity(contexts.len());
    let mut exchanges = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(invocation) => {
                revised.push(invocation.value);
                exchanges.extend(invocation.exchanges);
            }
            Err(err) => {
                return Err(CaseFailure {
                    case_id: case.case_id.clone(),
                    stage: "revision".to_string(),
                    message: err.to_string(),
                })
            }
        }
    }
    Ok((revised, exchanges))
}

/// Runs one case end to end against the training database. Failures are
/// typed and carry the stage that produced them; nothing in here panics
/// on bad input.
pub fn run_case(
    case: &CaseRecord,
    db: &CaseDatabase,
    config: &PipelineConfig,
    backends: &CaseBackends,
) -> Result<CaseResult, CaseFailure> {
    let started = Instant::now();
    let fail = |stage: &str, message: String| CaseFailure {
        case_id: case.case_id.clone(),
        stage: stage.to_string(),
        message,
    };

    // Stage 1: obtain the draft, preferring a precomputed one.
    let draft_started = Instant::now();
    let mut exchanges: Vec<Exchange> = Vec::new();
    let draft = match &case.draft {
        Some(d) => d.clone(),
        None => {
            let resident = backends.resident.as_ref().ok_or_else(|| {
                fail("draft", "case has no precomputed draft and no resident backend is bound".into())
            })?;
            let prompt = resident_prompt(case, &config.templates);
            let invocation = invoke_with_repair(
                resident.as_ref(),
                &prompt,
                parse_resident_draft,
                config.consensus.max_repairs,
            )
            .map_err(|e| fail("draft", e.to_string()))?;
            exchanges.extend(invocation.exchanges);
            invocation.value
        }
    };
    let draft_ms = draft_started.elapsed().as_millis();

    if config.mode == PipelineMode::ResidentOnly {
        if draft.is_empty() {
            return Err(fail("finalize", "final report has no sections".into()));
        }
        let mut result = CaseResult::passthrough(case.case_id.clone(), draft);
        result.exchanges = exchanges;
        let mut usage = UsageStats::default();
        usage.add_exchanges(result.exchanges.iter());
        result.usage = usage;
        result.timing = CaseTiming {
            total_ms: started.elapsed().as_millis(),
            draft_ms,
            ..CaseTiming::default()
        };
        return Ok(result);
    }

    // Stage 2: retrieval and fellow revisions.
    let fellow_count = config.effective_fellows();
    if backends.fellows.len() < fellow_count {
        return Err(fail(
            "revision",
            format!("{} fellow backends bound, {} needed", backends.fellows.len(), fellow_count),
        ));
    }
    let retrieval_started = Instant::now();
    let contexts = fellow_evidence(case, db, config, fellow_count)?;
    let retrieval_ms = retrieval_started.elapsed().as_millis();

    let revision_started = Instant::now();
    let (revised, revision_exchanges) =
        revise_drafts(case, &draft, &contexts, &backends.fellows, config)?;
    exchanges.extend(revision_exchanges);
    let revision_ms = revision_started.elapsed().as_millis();

    // Stage 3: per-mode finalization.
    let consensus_started = Instant::now();
    let consensus_config = config.effective_consensus();
    let (final_report, transcript) = match config.mode {
        PipelineMode::SingleRoundSingleAgent => (revised[0].clone(), None),
        PipelineMode::SingleRoundMultiAgent => {
            let attending = backends
                .attending
                .as_ref()
                .ok_or_else(|| fail("synthesis", "no attending backend is bound".into()))?;
            let synthesis = synthesize_initial(
                attending.as_ref(),
                &draft,
                &revised,
                &config.templates,
                consensus_config.max_repairs,
            )
            .map_err(|e| fail("synthesis", e.to_string()))?;
            exchanges.extend(synthesis.exchanges);
            (synthesis.report, None)
        }
        PipelineMode::MultiRoundMultiAgent | PipelineMode::Full => {
            let attending = backends
                .attending
                .as_ref()
                .ok_or_else(|| fail("consensus", "no attending backend is bound".into()))?;
            let seats: Vec<FellowSeat> = (0..fellow_count)
                .map(|i| FellowSeat {
                    backend: backends.fellows[i].clone(),
                    revised: revised[i].clone(),
                    evidence: contexts[i].evidence.clone(),
                })
                .collect();
            let transcript = run_consensus(
                attending.as_ref(),
                &seats,
                &draft,
                &config.templates,
                &consensus_config,
            )
            .map_err(|e| fail("consensus", e.to_string()))?;
            (transcript.final_report.clone(), Some(transcript))
        }
        PipelineMode::ResidentOnly => unreachable!("handled above"),
    };
    let consensus_ms = consensus_started.elapsed().as_millis();

    if final_report.is_empty() {
        return Err(fail("finalize", "final report has no sections".into()));
    }

    let mut usage = UsageStats::default();
    usage.add_exchanges(exchanges.iter());
    if let Some(t) = &transcript {
        usage.add_exchanges(t.all_exchanges());
    }

    Ok(CaseResult {
        case_id: case.case_id.clone(),
        draft,
        revised,
        final_report,
        exchanges,
        transcript,
        usage,
        timing: CaseTiming {
            total_ms: started.elapsed().as_millis(),
            draft_ms,
            retrieval_ms,
            revision_ms,
            consensus_ms,
        },
    })
}

/// Outcome of a batch: successful results and recorded failures, both in
/// case-id order.
#[derive(Debug, Default)]
pub struct BatchReport {
    pub results: Vec<CaseResult>,
    pub failures: Vec<CaseFailure>,
}

/// Runs every case in `eval_db` against `train_db`. Case-level
/// concurrency is bounded by `parallelism`; one case's failure never
/// affects another, and output order is independent of scheduling.
pub fn run_batch(
    eval_db: &CaseDatabase,
    train_db: &CaseDatabase,
    config: &PipelineConfig,
    factory: &dyn BackendFactory,
    parallelism: usize,
) -> BatchReport {
    let run_one = |case: &CaseRecord| -> Result<CaseResult, CaseFailure> {
        let backends = factory
            .backends_for(case, config.effective_fellows())
            .map_err(|message| CaseFailure {
                case_id: case.case_id.clone(),
                stage: "backends".to_string(),
                message,
            })?;
        run_case(case, train_db, config, &backends)
    };

    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<CaseResult, CaseFailure>> = {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.max(1))
            .build()
            .expect("batch thread pool");
        pool.install(|| eval_db.cases().par_iter().map(run_one).collect())
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Result<CaseResult, CaseFailure>> = {
        let _ = parallelism;
        eval_db.cases().iter().map(run_one).collect()
    };

    let mut report = BatchReport::default();
    for outcome in outcomes {
        match outcome {
            Ok(result) => report.results.push(result),
            Err(failure) => report.failures.push(failure),
        }
    }
    report.results.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    report.failures.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    report
}

/// One row of the fellow-count sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub fellows: usize,
    pub metrics: MetricsTable,
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep at N={fellows}: {failures} case(s) failed; first: {first}")]
    CaseFailures {
        fellows: usize,
        failures: usize,
        first: CaseFailure,
    },
    #[error("sweep at N={fellows}: {source}")]
    Eval {
        fellows: usize,
        source: EvalError,
    },
}

/// Reruns the batch at each fellow count and evaluates every run against
/// the eval database's reference reports.
pub fn sweep_fellows(
    eval_db: &CaseDatabase,
    train_db: &CaseDatabase,
    base: &PipelineConfig,
    factory: &dyn BackendFactory,
    counts: &[usize],
    parallelism: usize,
    labeler: &dyn Labeler,
) -> Result<Vec<SweepRow>, SweepError> {
    counts
        .iter()
        .map(|&fellows| {
            let mut config = base.clone();
            config.consensus.num_fellows = fellows.max(1);
            let report = run_batch(eval_db, train_db, &config, factory, parallelism);
            if let Some(first) = report.failures.first() {
                return Err(SweepError::CaseFailures {
                    fellows,
                    failures: report.failures.len(),
                    first: first.clone(),
                });
            }
            let metrics = evaluate(&report.results, eval_db.cases(), labeler)
                .map_err(|source| SweepError::Eval { fellows, source })?;
            Ok(SweepRow { fellows, metrics })
        })
        .collect()
}
