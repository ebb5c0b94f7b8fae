//! One function per CLI subcommand. Each returns the text it wants
//! printed; errors map to process exit codes in `main`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use march_core::consensus::ConsensusTranscript;
use march_core::dataset::{load_database, write_database, CaseDatabase};
use march_core::eval::{evaluate, KeywordLabeler, Labeler};
use march_core::pipeline::{run_batch, sweep_fellows, CaseResult, PipelineMode};
use march_core::report::serialize_report;
use march_core::taxonomy::{AbnormalityId, RegionId};

use crate::config::{RunOverrides, RunSpec};
use crate::factory::ConfiguredFactory;
use crate::CliError;

fn load_db(path: &Path, what: &str) -> Result<CaseDatabase, CliError> {
    load_database(path)
        .map_err(|e| CliError::Validation(format!("{what} {}: {e}", path.display())))
}

fn db_profile(db: &CaseDatabase) -> String {
    let mut out = String::new();
    let meta = db.meta();
    let _ = writeln!(out, "{} case(s) (d_img={}, d_txt={})", db.len(), meta.d_img, meta.d_txt);

    let _ = writeln!(out, "\nregion counts");
    for region in RegionId::ALL {
        let count = db.cases().iter().filter(|c| c.report.contains(region)).count();
        let _ = writeln!(out, "  {:<20} {count}", region.name());
    }

    let labeler = KeywordLabeler::with_default_lexicon();
    let _ = writeln!(out, "\nabnormality prevalence ({})", labeler.descriptor());
    for abnormality in AbnormalityId::ALL {
        let count = db
            .cases()
            .iter()
            .filter(|c| labeler.label(&c.report).get(abnormality))
            .count();
        let _ = writeln!(out, "  {:<36} {count}", abnormality.name());
    }
    out
}

/// `march ingest`: validate, normalize, and profile a JSONL database.
pub fn cmd_ingest(input: &Path, output: &Path) -> Result<String, CliError> {
    let db = load_db(input, "input database")?;
    write_database(&db, output)
        .map_err(|e| CliError::Validation(format!("writing {}: {e}", output.display())))?;
    Ok(format!(
        "{}normalized output written to {}\n",
        db_profile(&db),
        output.display()
    ))
}

/// `march validate`: validate a JSONL database and print its profile.
pub fn cmd_validate(input: &Path) -> Result<String, CliError> {
    let db = load_db(input, "input database")?;
    Ok(db_profile(&db))
}

pub struct RunArgs<'a> {
    pub config: &'a Path,
    pub eval_db: &'a Path,
    pub train_db: &'a Path,
    pub overrides: RunOverrides,
    pub force: bool,
}

/// `march run`: execute the pipeline over every evaluation case, writing
/// one result file (and one transcript, when the mode produces one) per
/// case. Cases with existing result files are skipped unless `--force`.
pub fn cmd_run(args: RunArgs<'_>) -> Result<String, CliError> {
    let started = Instant::now();
    let mut spec = RunSpec::load(args.config)?;
    spec.apply(&args.overrides);
    let config = spec.pipeline_config()?;
    let factory = ConfiguredFactory::from_spec(&spec, config.mode)?;

    let eval_db = load_db(args.eval_db, "eval database")?;
    let train_db = load_db(args.train_db, "train database")?;

    std::fs::create_dir_all(&spec.results_dir)
        .map_err(|e| CliError::Validation(format!("creating {}: {e}", spec.results_dir.display())))?;
    std::fs::create_dir_all(&spec.transcript_dir).map_err(|e| {
        CliError::Validation(format!("creating {}: {e}", spec.transcript_dir.display()))
    })?;

    let result_path = |case_id: &str| spec.results_dir.join(format!("{case_id}.json"));
    let (pending, skipped): (Vec<_>, Vec<_>) = eval_db
        .cases()
        .iter()
        .cloned()
        .partition(|c| args.force || !result_path(&c.case_id).exists());
    let pending_db = CaseDatabase::from_records(pending, "pending", None)
        .expect("already-validated records");

    let report = run_batch(&pending_db, &train_db, &config, &factory, spec.parallelism);

    for result in &report.results {
        let json = serde_json::to_string_pretty(result).expect("result serializes");
        std::fs::write(result_path(&result.case_id), json)
            .map_err(|e| CliError::Validation(format!("writing result: {e}")))?;
        if let Some(transcript) = &result.transcript {
            let path = spec.transcript_dir.join(format!("{}.json", result.case_id));
            let json = serde_json::to_string_pretty(transcript).expect("transcript serializes");
            std::fs::write(path, json)
                .map_err(|e| CliError::Validation(format!("writing transcript: {e}")))?;
        }
    }
    if !report.failures.is_empty() {
        let path = spec.results_dir.join("failures.json");
        let json = serde_json::to_string_pretty(&report.failures).expect("failures serialize");
        std::fs::write(path, json)
            .map_err(|e| CliError::Validation(format!("writing failures: {e}")))?;
    }

    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "ran {} case(s), {} failure(s), skipped {} existing result(s)",
        report.results.len(),
        report.failures.len(),
        skipped.len()
    );
    let mut histogram: BTreeMap<u32, usize> = BTreeMap::new();
    for result in &report.results {
        if let Some(t) = &result.transcript {
            *histogram.entry(t.rounds_used).or_insert(0) += 1;
        }
    }
    if !histogram.is_empty() {
        let rendered: Vec<String> = histogram
            .iter()
            .map(|(rounds, count)| format!("{rounds} round(s) x {count}"))
            .collect();
        let _ = writeln!(summary, "rounds histogram: {}", rendered.join(", "));
    }
    let (mut calls, mut prompt_chars, mut completion_chars) = (0u64, 0u64, 0u64);
    let mut total_ms = 0u128;
    for result in &report.results {
        calls += result.usage.calls;
        prompt_chars += result.usage.prompt_chars;
        completion_chars += result.usage.completion_chars;
        total_ms += result.timing.total_ms;
    }
    let _ = writeln!(
        summary,
        "usage: {calls} backend call(s), {prompt_chars} prompt chars, {completion_chars} completion chars"
    );
    let _ = writeln!(
        summary,
        "case time {total_ms} ms total, wall time {} ms",
        started.elapsed().as_millis()
    );
    let _ = writeln!(
        summary,
        "results: {}, transcripts: {}",
        spec.results_dir.display(),
        spec.transcript_dir.display()
    );
    for failure in &report.failures {
        let _ = writeln!(summary, "FAILED {failure}");
    }

    if spec.strict && !report.failures.is_empty() {
        return Err(CliError::PartialBatch {
            failures: report.failures.len(),
            summary,
        });
    }
    Ok(summary)
}

fn read_results_dir(dir: &Path) -> Result<Vec<CaseResult>, CliError> {
    let mut results = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Validation(format!("results dir {}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Validation(e.to_string()))?;
        let path = entry.path();
        if path.extension().map(|e| e == "json").unwrap_or(false)
            && path.file_name().map(|n| n != "failures.json").unwrap_or(false)
        {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            let result: CaseResult = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            results.push(result);
        }
    }
    if results.is_empty() {
        return Err(CliError::Validation(format!(
            "no result files found in {}",
            dir.display()
        )));
    }
    results.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(results)
}

fn labeler_from(lexicon: Option<&Path>) -> Result<KeywordLabeler, CliError> {
    match lexicon {
        None => Ok(KeywordLabeler::with_default_lexicon()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("lexicon {}: {e}", path.display())))?;
            let map: BTreeMap<AbnormalityId, Vec<String>> = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("lexicon {}: {e}", path.display())))?;
            KeywordLabeler::new(&map, 5).map_err(|e| CliError::Validation(e.to_string()))
        }
    }
}

/// `march eval`: score a results directory against reference reports and
/// emit the metrics table as text plus machine-readable JSON.
pub fn cmd_eval(
    results_dir: &Path,
    references: &Path,
    lexicon: Option<&Path>,
    json_out: Option<&Path>,
) -> Result<String, CliError> {
    let results = read_results_dir(results_dir)?;
    let reference_db = load_db(references, "reference database")?;
    let labeler = labeler_from(lexicon)?;
    let table = evaluate(&results, reference_db.cases(), &labeler)
        .map_err(|e| CliError::Validation(e.to_string()))?;

    let json_path = json_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| results_dir.join("metrics.json"));
    let json = serde_json::to_string_pretty(&table).expect("metrics serialize");
    std::fs::write(&json_path, json)
        .map_err(|e| CliError::Validation(format!("writing {}: {e}", json_path.display())))?;

    Ok(format!(
        "{}\nmetrics JSON written to {}\n",
        table.render_text(),
        json_path.display()
    ))
}

/// `march sweep`: rerun the batch at each fellow count and print one
/// metrics row per count.
pub fn cmd_sweep(
    config_path: &Path,
    eval_db: &Path,
    train_db: &Path,
    counts: &[usize],
    parallelism: Option<usize>,
) -> Result<String, CliError> {
    if counts.is_empty() {
        return Err(CliError::Validation("--counts must list at least one fellow count".into()));
    }
    if counts.contains(&0) {
        return Err(CliError::Validation("fellow counts must be at least 1".into()));
    }
    let mut spec = RunSpec::load(config_path)?;
    if let Some(p) = parallelism {
        spec.parallelism = p;
    }
    let config = spec.pipeline_config()?;
    let factory = ConfiguredFactory::from_spec(&spec, config.mode)?;
    let eval_db = load_db(eval_db, "eval database")?;
    let train_db = load_db(train_db, "train database")?;
    let labeler = KeywordLabeler::with_default_lexicon();

    let rows = sweep_fellows(
        &eval_db,
        &train_db,
        &config,
        &factory,
        counts,
        spec.parallelism,
        &labeler,
    )
    .map_err(|e| CliError::Backend(e.to_string()))?;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>8} {:>8} {:>8} {:>8}",
        "fellows", "BLEU-1", "BLEU-4", "ROUGE-L", "CE-F1"
    );
    for row in &rows {
        let m = &row.metrics;
        let _ = writeln!(
            out,
            "{:<8} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            row.fellows, m.bleu_1, m.bleu_4, m.rouge_l, m.ce.micro.f1
        );
    }
    Ok(out)
}

/// `march inspect-transcript`: pretty-print a stored consensus
/// transcript round by round; `--raw` appends every prompt/completion.
pub fn cmd_inspect(path: &Path, raw: bool) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let transcript: ConsensusTranscript = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{} is not a transcript: {e}", path.display())))?;

    let mut out = String::new();
    let _ = writeln!(out, "transcript: {}", path.display());
    let _ = writeln!(
        out,
        "rounds used: {}, termination: {}",
        transcript.rounds_used,
        match transcript.termination {
            march_core::consensus::TerminationReason::UnanimousAgreement => "unanimous-agreement",
            march_core::consensus::TerminationReason::AttendingStop => "attending-stop",
            march_core::consensus::TerminationReason::MaxRoundsReached => "max-rounds-reached",
        }
    );

    let render_round = |out: &mut String, round: &march_core::consensus::RoundRecord| {
        if round.index == 0 {
            let _ = writeln!(out, "\nRound 0 (synthesis)");
        } else {
            let _ = writeln!(out, "\nRound {}", round.index);
        }
        for stance in &round.stances {
            let answer = if stance.is_agreement() { "agree" } else { "disagree" };
            let _ = writeln!(
                out,
                "  {}: {} (confidence {}) - {}",
                stance.fellow_id, answer, stance.confidence, stance.reason
            );
            for evidence in &stance.evidences {
                let _ = writeln!(out, "    evidence: {evidence}");
            }
        }
        if let Some(decision) = &round.decision {
            let action = match decision.action {
                march_core::agents::DecisionAction::Continue => "continue",
                march_core::agents::DecisionAction::Stop => "stop",
            };
            let _ = writeln!(out, "  decision: {action}");
            for reason in &decision.reasons {
                let _ = writeln!(out, "    reason: {reason}");
            }
            for instruction in &decision.instructions {
                let _ = writeln!(out, "    instruction: {instruction}");
            }
        } else if round.index > 0 {
            let _ = writeln!(out, "  decision: (skipped, unanimous agreement)");
        }
        let _ = writeln!(out, "  consensus: {}", serialize_report(&round.consensus_report));
        if raw {
            for exchange in &round.raw_exchanges {
                let _ = writeln!(out, "  --- {} prompt ---\n{}", exchange.agent, exchange.prompt);
                let _ = writeln!(out, "  --- {} completion ---\n{}", exchange.agent, exchange.completion);
            }
        }
    };

    render_round(&mut out, &transcript.synthesis);
    for round in &transcript.rounds {
        render_round(&mut out, round);
    }
    let _ = writeln!(out, "\nfinal: {}", serialize_report(&transcript.final_report));
    Ok(out)
}

/// Parses a `--mode` string early so bad values fail before any work.
pub fn parse_mode(mode: &str) -> Result<PipelineMode, CliError> {
    PipelineMode::from_name(mode).ok_or_else(|| {
        CliError::Validation(format!(
            "unknown mode {mode:?}; expected one of {}",
            PipelineMode::ALL.map(|m| m.name()).join(", ")
        ))
    })
}
