//! The consensus stage: synthesis of the fellows' revisions, per-round
//! stance collection, attending adjudication, and termination.
//!
//! The protocol is a bounded state machine. Round 0 synthesizes the
//! fellows' revised reports into an initial consensus. Each later round
//! collects one stance per fellow on the current consensus and lets the
//! attending either revise-and-continue or stop; a hard cap of
//! `max_rounds` stance rounds always terminates the discussion, and an
//! optional short circuit ends it without an attending call when every
//! fellow agrees. Every prompt and completion is recorded so a run can be
//! audited and replayed bit-for-bit.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    invoke_with_repair, parse_attending_decision, parse_attending_synthesis, parse_fellow_stance,
    AgentBackend, AttendingDecision, DecisionAction, Exchange, InvokeError, ParseError, Stance,
    StanceAnswer, TemplateSet,
};
use crate::report::{serialize_report, Report};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    /// Number of fellows N.
    pub num_fellows: usize,
    /// Hard cap T on stance rounds.
    pub max_rounds: u32,
    /// End the discussion without an attending call when every stance in a
    /// round is an agreement.
    pub unanimity_short_circuit: bool,
    /// Inject the attending's per-fellow instructions into the next
    /// round's stance prompts.
    pub feed_instructions: bool,
    /// Drop a failing fellow's stance instead of aborting the round.
    pub tolerate_fellow_failure: bool,
    /// Parse-repair retries per invocation.
    pub max_repairs: u32,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            num_fellows: 3,
            max_rounds: 3,
            unanimity_short_circuit: true,
            feed_instructions: true,
            tolerate_fellow_failure: false,
            max_repairs: 1,
        }
    }
}

/// One fellow's view of the case: its backend, its revised report, and the
/// retrieval evidence it was assigned in the revision stage (reused across
/// stance rounds; there is no re-retrieval).
#[derive(Clone)]
pub struct FellowSeat {
    pub backend: Arc<dyn AgentBackend>,
    pub revised: Report,
    pub evidence: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    UnanimousAgreement,
    AttendingStop,
    MaxRoundsReached,
}

/// One protocol round. Index 0 is the synthesis round (no stances, no
/// decision); later rounds carry one stance per fellow and, unless the
/// unanimity short circuit fired, the attending's decision.
/// `consensus_report` is the consensus standing after the round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub index: u32,
    pub consensus_report: Report,
    pub stances: Vec<Stance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<AttendingDecision>,
    pub raw_exchanges: Vec<Exchange>,
}

/// Full audit log of one consensus run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusTranscript {
    pub synthesis: RoundRecord,
    /// Stance rounds, indices 1..=rounds_used.
    pub rounds: Vec<RoundRecord>,
    pub final_report: Report,
    pub termination: TerminationReason,
    pub rounds_used: u32,
}

impl ConsensusTranscript {
    /// All exchanges in protocol order: synthesis first, then each round.
    pub fn all_exchanges(&self) -> impl Iterator<Item = &Exchange> {
        self.synthesis
            .raw_exchanges
            .iter()
            .chain(self.rounds.iter().flat_map(|r| r.raw_exchanges.iter()))
    }
}

/// What had been recorded when a run aborted.
#[derive(Debug, Clone, Default, Serialize)]
pub struct PartialTranscript {
    pub synthesis: Option<RoundRecord>,
    pub rounds: Vec<RoundRecord>,
}

#[derive(Debug, Error)]
#[error("consensus aborted during {stage}: {source}")]
pub struct ConsensusError {
    pub stage: String,
    pub source: InvokeError,
    pub partial: Box<PartialTranscript>,
}

/// The synthesized round-0 consensus plus its audit trail.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub report: Report,
    pub reasons: Vec<String>,
    pub exchanges: Vec<Exchange>,
}

fn render_doctor_info(revised: &[Report]) -> String {
    revised
        .iter()
        .enumerate()
        .map(|(i, r)| format!("Doctor {}: {}", i + 1, serialize_report(r)))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_fellow_info(stances: &[Stance]) -> String {
    stances
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let answer = match s.answer {
                StanceAnswer::Agree => "agree",
                StanceAnswer::Disagree => "disagree",
            };
            let evidence = if s.evidences.is_empty() {
                "(none)".to_string()
            } else {
                s.evidences.join("; ")
            };
            format!(
                "Doctor {}: {} (confidence {})\nReason: {}\nEvidence: {}",
                i + 1,
                answer,
                s.confidence,
                s.reason,
                evidence
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_reasons(reasons: &[String]) -> String {
    if reasons.is_empty() {
        "(none)".to_string()
    } else {
        reasons.join("\n")
    }
}

fn bindings(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Round 0: the attending folds the fellows' revised reports into one
/// consensus report.
pub fn synthesize_initial(
    attending: &dyn AgentBackend,
    draft: &Report,
    revised: &[Report],
    templates: &TemplateSet,
    max_repairs: u32,
) -> Result<Synthesis, InvokeError> {
    let template = templates.get("attending_synthesis").expect("shipped template");
    let prompt = crate::agents::render_prompt(
        template,
        &bindings(&[
            ("init_report", serialize_report(draft)),
            ("doctor_info", render_doctor_info(revised)),
        ]),
    )
    .expect("synthesis bindings cover the template");
    let invocation = invoke_with_repair(attending, &prompt, parse_attending_synthesis, max_repairs)?;
    let (report, reasons) = invocation.value;
    Ok(Synthesis {
        report,
        reasons,
        exchanges: invocation.exchanges,
    })
}

fn stance_prompt(
    seat: &FellowSeat,
    draft: &Report,
    current: &Report,
    prior_reasons: &[String],
    instruction: Option<&str>,
    templates: &TemplateSet,
) -> String {
    let template = templates.get("fellow_stance").expect("shipped template");
    let mut prompt = crate::agents::render_prompt(
        template,
        &bindings(&[
            ("retrieved_report", seat.evidence.clone()),
            ("init_report", serialize_report(draft)),
            ("fellow_report", serialize_report(&seat.revised)),
            ("attending_report", serialize_report(current)),
            ("attending_reason", render_reasons(prior_reasons)),
        ]),
    )
    .expect("stance bindings cover the template");
    if let Some(instruction) = instruction {
        prompt.push_str(&format!(
            "\n\nInstruction from the attending radiologist for this round:\n{instruction}"
        ));
    }
    prompt
}

/// Collects one stance per fellow on the current consensus. Stances come
/// back ordered by fellow index no matter how the backends interleave;
/// failures abort the round unless `tolerate_fellow_failure` is set, in
/// which case the failing fellow's exchanges are kept and its stance
/// dropped.
#[allow(clippy::too_many_arguments)]
pub fn collect_stances(
    seats: &[FellowSeat],
    draft: &Report,
    current: &Report,
    prior_reasons: &[String],
    round: u32,
    instructions: &[String],
    templates: &TemplateSet,
    config: &ConsensusConfig,
) -> Result<(Vec<Stance>, Vec<Exchange>), InvokeError> {
    let invoke_seat = |(i, seat): (usize, &FellowSeat)| {
        let instruction = if round >= 2 && config.feed_instructions {
            instructions.get(i).map(String::as_str).filter(|s| !s.is_empty())
        } else {
            None
        };
        let prompt = stance_prompt(seat, draft, current, prior_reasons, instruction, templates);
        invoke_with_repair(seat.backend.as_ref(), &prompt, parse_fellow_stance, config.max_repairs)
    };

    #[cfg(feature = "parallel")]
    let outcomes: Vec<_> = {
        use rayon::prelude::*;
        seats.par_iter().enumerate().map(invoke_seat).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<_> = seats.iter().enumerate().map(invoke_seat).collect();

    let mut stances = Vec::with_capacity(seats.len());
    let mut exchanges = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(invocation) => {
                let mut stance = invocation.value;
                stance.fellow_id = seats[i].backend.name().to_string();
                stance.round = round;
                stances.push(stance);
                exchanges.extend(invocation.exchanges);
            }
            Err(err) if config.tolerate_fellow_failure => {
                exchanges.extend(err.exchanges().iter().cloned());
            }
            Err(err) => return Err(err),
        }
    }
    Ok((stances, exchanges))
}

/// The attending weighs the stances against the current consensus and
/// either continues with a revision or stops. A revision that changes the
/// report must carry at least one reason.
pub fn adjudicate(
    attending: &dyn AgentBackend,
    current: &Report,
    stances: &[Stance],
    templates: &TemplateSet,
    max_repairs: u32,
) -> Result<(AttendingDecision, Vec<Exchange>), InvokeError> {
    let template = templates.get("attending_adjudication").expect("shipped template");
    let prompt = crate::agents::render_prompt(
        template,
        &bindings(&[
            ("current_report", serialize_report(current)),
            ("fellow_info", render_fellow_info(stances)),
        ]),
    )
    .expect("adjudication bindings cover the template");
    let parser = |completion: &str| -> Result<AttendingDecision, ParseError> {
        let decision = parse_attending_decision(completion)?;
        if decision.report != *current && decision.reasons.is_empty() {
            return Err(ParseError::Schema(
                "a revised report must be accompanied by at least one reason".to_string(),
            ));
        }
        Ok(decision)
    };
    let invocation = invoke_with_repair(attending, &prompt, parser, max_repairs)?;
    Ok((invocation.value, invocation.exchanges))
}

/// Runs the full consensus protocol and returns its transcript. On an
/// unrecoverable backend failure the error carries everything recorded up
/// to that point.
#[allow(clippy::result_large_err)]
pub fn run_consensus(
    attending: &dyn AgentBackend,
    seats: &[FellowSeat],
    draft: &Report,
    templates: &TemplateSet,
    config: &ConsensusConfig,
) -> Result<ConsensusTranscript, ConsensusError> {
    let revised: Vec<Report> = seats.iter().map(|s| s.revised.clone()).collect();
    let synthesis = synthesize_initial(attending, draft, &revised, templates, config.max_repairs)
        .map_err(|source| ConsensusError {
            stage: "synthesis".to_string(),
            source,
            partial: Box::default(),
        })?;

    let synthesis_record = RoundRecord {
        index: 0,
        consensus_report: synthesis.report.clone(),
        stances: Vec::new(),
        decision: None,
        raw_exchanges: synthesis.exchanges,
    };

    let mut rounds: Vec<RoundRecord> = Vec::new();
    let mut current = synthesis.report;
    let mut prior_reasons = synthesis.reasons;
    let mut instructions: Vec<String> = Vec::new();

    let abort = |stage: String, source: InvokeError, synthesis_record: &RoundRecord, rounds: &[RoundRecord]| {
        ConsensusError {
            stage,
            source,
            partial: Box::new(PartialTranscript {
                synthesis: Some(synthesis_record.clone()),
                rounds: rounds.to_vec(),
            }),
        }
    };

    for round in 1..=config.max_rounds {
        let (stances, mut exchanges) = collect_stances(
            seats,
            draft,
            &current,
            &prior_reasons,
            round,
            &instructions,
            templates,
            config,
        )
        .map_err(|source| abort(format!("stances round {round}"), source, &synthesis_record, &rounds))?;

        let unanimous = !stances.is_empty() && stances.iter().all(Stance::is_agreement);
        if config.unanimity_short_circuit && unanimous {
            rounds.push(RoundRecord {
                index: round,
                consensus_report: current.clone(),
                stances,
                decision: None,
                raw_exchanges: exchanges,
            });
            return Ok(ConsensusTranscript {
                synthesis: synthesis_record,
                final_report: current,
                termination: TerminationReason::UnanimousAgreement,
                rounds_used: round,
                rounds,
            });
        }

        let (decision, adj_exchanges) =
            adjudicate(attending, &current, &stances, templates, config.max_repairs).map_err(
                |source| abort(format!("adjudication round {round}"), source, &synthesis_record, &rounds),
            )?;
        exchanges.extend(adj_exchanges);
        rounds.push(RoundRecord {
            index: round,
            consensus_report: decision.report.clone(),
            stances,
            decision: Some(decision.clone()),
            raw_exchanges: exchanges,
        });

        if decision.action == DecisionAction::Stop || round == config.max_rounds {
            let termination = if decision.action == DecisionAction::Stop {
                TerminationReason::AttendingStop
            } else {
                TerminationReason::MaxRoundsReached
            };
            return Ok(ConsensusTranscript {
                synthesis: synthesis_record,
                final_report: decision.report,
                termination,
                rounds_used: round,
                rounds,
            });
        }

        current = decision.report;
        prior_reasons = decision.reasons;
        if config.feed_instructions {
            instructions = decision.instructions;
        }
    }

    unreachable!("the round loop always returns at or before max_rounds");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentRole, ScriptedBackend};
    use crate::report::parse_report;
    use std::time::Duration;

    fn report(text: &str) -> Report {
        parse_report(text).unwrap()
    }

    fn revision_json(report_text: &str) -> String {
        serde_json::to_string(&serde_json::json!({ "report": report_text })).unwrap()
    }

    fn synthesis_json(report_text: &str, reasons: &[&str]) -> String {
        serde_json::to_string(&serde_json::json!({ "report": report_text, "reasons": reasons })).unwrap()
    }

    fn stance_json(answer: &str, confidence: u8, reason: &str, evidences: &[&str]) -> String {
        serde_json::to_string(&serde_json::json!({
            "answer": answer, "confidence": confidence, "reason": reason, "evidences": evidences
        }))
        .unwrap()
    }

    fn decision_json(action: &str, report_text: &str, reasons: &[&str], instructions: &[&str]) -> String {
        serde_json::to_string(&serde_json::json!({
            "action": action, "report": report_text, "reasons": reasons, "instructions": instructions
        }))
        .unwrap()
    }

    fn seat(name: &str, revised_text: &str, completions: Vec<String>) -> (Arc<ScriptedBackend>, FellowSeat) {
        let backend = Arc::new(ScriptedBackend::new(name, AgentRole::Fellow, completions));
        let seat = FellowSeat {
            backend: backend.clone(),
            revised: report(revised_text),
            evidence: format!("[image-to-image#1] evidence for {name}"),
        };
        (backend, seat)
    }

    const DRAFT: &str = "The region 0 is lung: Clear.";

    #[test]
    fn synthesis_echoes_single_fellow() {
        let revised = report("The region 0 is lung: Small nodule.");
        let attending = ScriptedBackend::new(
            "att",
            AgentRole::Attending,
            vec![revision_json("The region 0 is lung: Small nodule.")],
        );
        let templates = TemplateSet::default();
        let out = synthesize_initial(&attending, &report(DRAFT), std::slice::from_ref(&revised), &templates, 1).unwrap();
        assert_eq!(out.report, revised);
        // The prompt labels the single revision as Doctor 1 and carries the draft.
        let prompt = &attending.prompts()[0];
        assert!(prompt.contains("Doctor 1: The region 0 is lung: Small nodule."));
        assert!(prompt.contains(DRAFT));
    }

    #[test]
    fn synthesis_of_three_identical_revisions() {
        let text = "The region 0 is lung: Clear.";
        let attending = ScriptedBackend::new("att", AgentRole::Attending, vec![revision_json(text)]);
        let out = synthesize_initial(
            &attending,
            &report(DRAFT),
            &[report(text), report(text), report(text)],
            &TemplateSet::default(),
            1,
        )
        .unwrap();
        assert_eq!(out.report, report(text));
        assert!(attending.prompts()[0].contains("Doctor 3:"));
    }

    #[test]
    fn synthesis_parses_fixture_with_reasons() {
        let fixture = synthesis_json(
            "The region 0 is lung: Nodule confirmed. The region 1 is pleura: No effusion.",
            &["Doctor 2 cited a matching prior study."],
        );
        let attending = ScriptedBackend::new("att", AgentRole::Attending, vec![fixture.clone()]);
        let out = synthesize_initial(
            &attending,
            &report(DRAFT),
            &[
                report("The region 0 is lung: Nodule."),
                report("The region 0 is lung: Clear."),
                report("The region 0 is lung: Nodule confirmed."),
            ],
            &TemplateSet::default(),
            1,
        )
        .unwrap();
        // Expected values come from running the parser on the fixture directly.
        let (expected_report, expected_reasons) = parse_attending_synthesis(&fixture).unwrap();
        assert_eq!(out.report, expected_report);
        assert_eq!(out.reasons, expected_reasons);
        assert_eq!(out.exchanges.len(), 1);
        assert_eq!(out.exchanges[0].completion, fixture);
    }

    #[test]
    fn stances_come_back_in_fellow_order() {
        let (_, s0) = seat("fellow-0", DRAFT, vec![stance_json("agree", 3, "fine", &[])]);
        let (_, s1) = seat("fellow-1", DRAFT, vec![stance_json("agree", 3, "fine", &[])]);
        let cfg = ConsensusConfig { num_fellows: 2, ..Default::default() };
        let (stances, exchanges) = collect_stances(
            &[s0, s1],
            &report(DRAFT),
            &report(DRAFT),
            &[],
            1,
            &[],
            &TemplateSet::default(),
            &cfg,
        )
        .unwrap();
        assert_eq!(stances.len(), 2);
        assert_eq!(stances[0].fellow_id, "fellow-0");
        assert_eq!(stances[1].fellow_id, "fellow-1");
        assert!(stances.iter().all(|s| s.round == 1 && s.is_agreement()));
        assert_eq!(exchanges.len(), 2);
    }

    #[test]
    fn disagreement_passes_through_verbatim() {
        let (_, s0) = seat(
            "fellow-0",
            DRAFT,
            vec![stance_json("disagree", 1, "missed the nodule", &["prior case shows a nodule"])],
        );
        let cfg = ConsensusConfig { num_fellows: 1, ..Default::default() };
        let (stances, _) = collect_stances(
            &[s0],
            &report(DRAFT),
            &report(DRAFT),
            &[],
            1,
            &[],
            &TemplateSet::default(),
            &cfg,
        )
        .unwrap();
        assert_eq!(stances[0].answer, StanceAnswer::Disagree);
        assert_eq!(stances[0].confidence, 1);
        assert_eq!(stances[0].reason, "missed the nodule");
        assert_eq!(stances[0].evidences, vec!["prior case shows a nodule".to_string()]);
    }

    #[test]
    fn stance_order_is_independent_of_completion_timing() {
        // Slowest fellow first: with 4 concurrent seats the completions
        // arrive in reverse, but the output stays seat-ordered.
        let mut seats = Vec::new();
        for i in 0..4 {
            let delay = Duration::from_millis(40 - 10 * i as u64);
            let backend = Arc::new(
                ScriptedBackend::new(
                    format!("fellow-{i}"),
                    AgentRole::Fellow,
                    vec![stance_json("agree", 3, &format!("reason {i}"), &[])],
                )
                .with_delays(vec![delay]),
            );
            seats.push(FellowSeat {
                backend,
                revised: report(DRAFT),
                evidence: String::new(),
            });
        }
        let cfg = ConsensusConfig { num_fellows: 4, ..Default::default() };
        let (stances, _) = collect_stances(
            &seats,
            &report(DRAFT),
            &report(DRAFT),
            &[],
            1,
            &[],
            &TemplateSet::default(),
            &cfg,
        )
        .unwrap();
        let ids: Vec<&str> = stances.iter().map(|s| s.fellow_id.as_str()).collect();
        assert_eq!(ids, ["fellow-0", "fellow-1", "fellow-2", "fellow-3"]);
        for (i, s) in stances.iter().enumerate() {
            assert_eq!(s.reason, format!("reason {i}"));
        }
    }

    #[test]
    fn fellow_failure_aborts_unless_tolerated() {
        let make_seats = || {
            let (_, ok) = seat("fellow-0", DRAFT, vec![stance_json("agree", 2, "ok", &[])]);
            let (_, broken) = seat("fellow-1", DRAFT, vec![]);
            vec![ok, broken]
        };
        let strict = ConsensusConfig { num_fellows: 2, ..Default::default() };
        let err = collect_stances(
            &make_seats(),
            &report(DRAFT),
            &report(DRAFT),
            &[],
            1,
            &[],
            &TemplateSet::default(),
            &strict,
        )
        .unwrap_err();
        assert!(matches!(err, InvokeError::Backend { .. }));

        let tolerant = ConsensusConfig {
            num_fellows: 2,
            tolerate_fellow_failure: true,
            ..Default::default()
        };
        let (stances, _) = collect_stances(
            &make_seats(),
            &report(DRAFT),
            &report(DRAFT),
            &[],
            1,
            &[],
            &TemplateSet::default(),
            &tolerant,
        )
        .unwrap();
        assert_eq!(stances.len(), 1);
        assert_eq!(stances[0].fellow_id, "fellow-0");
    }

    fn agree_stance(id: &str, round: u32) -> Stance {
        Stance {
            answer: StanceAnswer::Agree,
            confidence: 3,
            reason: "fine".into(),
            evidences: vec![],
            fellow_id: id.into(),
            round,
        }
    }

    fn disagree_stance(id: &str, round: u32) -> Stance {
        Stance {
            answer: StanceAnswer::Disagree,
            confidence: 3,
            reason: "not fine".into(),
            evidences: vec!["counterexample".into()],
            fellow_id: id.into(),
            round,
        }
    }

    #[test]
    fn adjudicate_stop_keeps_current_report() {
        let current = report(DRAFT);
        let attending = ScriptedBackend::new(
            "att",
            AgentRole::Attending,
            vec![decision_json("No", DRAFT, &[], &[])],
        );
        let stances = vec![agree_stance("f0", 1), agree_stance("f1", 1)];
        let (decision, _) =
            adjudicate(&attending, &current, &stances, &TemplateSet::default(), 1).unwrap();
        assert_eq!(decision.action, DecisionAction::Stop);
        assert_eq!(decision.report, current);
        // The prompt carries every stance.
        let prompt = &attending.prompts()[0];
        assert!(prompt.contains("Doctor 1: agree (confidence 3)"));
        assert!(prompt.contains("Doctor 2: agree (confidence 3)"));
    }

    #[test]
    fn adjudicate_continue_with_revision() {
        let current = report(DRAFT);
        let revised = "The region 0 is lung: Nodule added.";
        let attending = ScriptedBackend::new(
            "att",
            AgentRole::Attending,
            vec![decision_json("Yes", revised, &["doctor 2 cited a prior"], &["recheck lung"])],
        );
        let stances = vec![disagree_stance("f0", 1), disagree_stance("f1", 1), agree_stance("f2", 1)];
        let (decision, _) =
            adjudicate(&attending, &current, &stances, &TemplateSet::default(), 1).unwrap();
        assert_eq!(decision.action, DecisionAction::Continue);
        assert_eq!(decision.report, report(revised));
        assert_eq!(decision.instructions, vec!["recheck lung".to_string()]);
    }

    #[test]
    fn revision_without_reasons_is_repaired_then_rejected() {
        let current = report(DRAFT);
        let revised = "The region 0 is lung: Changed.";
        let bad = decision_json("Yes", revised, &[], &[]);
        let attending =
            ScriptedBackend::new("att", AgentRole::Attending, vec![bad.clone(), bad.clone()]);
        let err = adjudicate(&attending, &current, &[disagree_stance("f0", 1)], &TemplateSet::default(), 1)
            .unwrap_err();
        assert!(matches!(err, InvokeError::ExhaustedRepairs { .. }));
        assert_eq!(attending.calls(), 2);
    }

    fn run_fixture(
        fellow_scripts: Vec<Vec<String>>,
        attending_script: Vec<String>,
        config: &ConsensusConfig,
    ) -> (ConsensusTranscript, Arc<ScriptedBackend>, Vec<Arc<ScriptedBackend>>) {
        let mut seats = Vec::new();
        let mut fellow_backends = Vec::new();
        for (i, script) in fellow_scripts.into_iter().enumerate() {
            let (backend, s) = seat(&format!("fellow-{i}"), DRAFT, script);
            fellow_backends.push(backend);
            seats.push(s);
        }
        let attending = Arc::new(ScriptedBackend::new("attending", AgentRole::Attending, attending_script));
        let transcript = run_consensus(
            attending.as_ref(),
            &seats,
            &report(DRAFT),
            &TemplateSet::default(),
            config,
        )
        .unwrap();
        (transcript, attending, fellow_backends)
    }

    #[test]
    fn unanimous_agreement_short_circuits_after_round_one() {
        let config = ConsensusConfig { num_fellows: 2, ..Default::default() };
        let (transcript, attending, _) = run_fixture(
            vec![
                vec![stance_json("agree", 3, "fine", &[])],
                vec![stance_json("agree", 2, "fine", &[])],
            ],
            vec![synthesis_json(DRAFT, &["both matched"])],
            &config,
        );
        assert_eq!(transcript.termination, TerminationReason::UnanimousAgreement);
        assert_eq!(transcript.rounds_used, 1);
        assert_eq!(transcript.rounds.len(), 1);
        assert_eq!(transcript.final_report, transcript.synthesis.consensus_report);
        // Synthesis only; no adjudication call happened.
        assert_eq!(attending.calls(), 1);
        assert!(transcript.rounds[0].decision.is_none());
    }

    #[test]
    fn always_continue_hits_the_round_cap() {
        let config = ConsensusConfig {
            num_fellows: 1,
            max_rounds: 3,
            unanimity_short_circuit: true,
            ..Default::default()
        };
        let revised = |t: u32| format!("The region 0 is lung: Revision {t}.");
        let (transcript, attending, _) = run_fixture(
            vec![vec![
                stance_json("disagree", 2, "no", &["e"]),
                stance_json("disagree", 2, "no", &["e"]),
                stance_json("disagree", 2, "no", &["e"]),
            ]],
            vec![
                synthesis_json(DRAFT, &[]),
                decision_json("Yes", &revised(1), &["r1"], &["i1"]),
                decision_json("Yes", &revised(2), &["r2"], &["i2"]),
                decision_json("Yes", &revised(3), &["r3"], &["i3"]),
            ],
            &config,
        );
        assert_eq!(transcript.termination, TerminationReason::MaxRoundsReached);
        assert_eq!(transcript.rounds_used, 3);
        assert_eq!(transcript.final_report, report(&revised(3)));
        assert_eq!(attending.calls(), 4);
        // Consecutive rounds start from the prior round's decision report.
        assert_eq!(transcript.rounds[1].consensus_report, report(&revised(2)));
    }

    #[test]
    fn disagree_then_agree_ends_with_attending_stop() {
        // Shape: one disagreement round, attending revises, then the
        // attending stops on the agreed revision. Short circuit off so the
        // stop is the attending's call.
        let config = ConsensusConfig {
            num_fellows: 2,
            max_rounds: 3,
            unanimity_short_circuit: false,
            ..Default::default()
        };
        let revised = "The region 0 is lung: Nodule added after discussion.";
        let (transcript, attending, _) = run_fixture(
            vec![
                vec![
                    stance_json("disagree", 3, "missing nodule", &["prior study"]),
                    stance_json("agree", 3, "now correct", &[]),
                ],
                vec![
                    stance_json("agree", 2, "fine", &[]),
                    stance_json("agree", 3, "fine", &[]),
                ],
            ],
            vec![
                synthesis_json(DRAFT, &["initial synthesis"]),
                decision_json("Yes", revised, &["fellow-0 cited a prior study"], &["verify nodule", "confirm"]),
                decision_json("No", revised, &[], &[]),
            ],
            &config,
        );
        assert_eq!(transcript.termination, TerminationReason::AttendingStop);
        assert_eq!(transcript.rounds_used, 2);
        assert_eq!(transcript.final_report, report(revised));
        assert_eq!(transcript.rounds[1].decision.as_ref().unwrap().action, DecisionAction::Stop);
        assert_eq!(attending.calls(), 3);
        // Round-2 stance prompts carry the attending's instructions.
        let round2 = &transcript.rounds[1];
        let f0_prompt = &round2.raw_exchanges[0].prompt;
        assert!(f0_prompt.contains("Instruction from the attending radiologist"));
        assert!(f0_prompt.contains("verify nodule"));
    }

    #[test]
    fn instructions_are_withheld_when_feedback_is_off() {
        let config = ConsensusConfig {
            num_fellows: 1,
            max_rounds: 2,
            unanimity_short_circuit: false,
            feed_instructions: false,
            ..Default::default()
        };
        let (transcript, _, _) = run_fixture(
            vec![vec![
                stance_json("disagree", 3, "no", &["e"]),
                stance_json("agree", 3, "ok", &[]),
            ]],
            vec![
                synthesis_json(DRAFT, &[]),
                decision_json("Yes", "The region 0 is lung: Adjusted.", &["r"], &["do this"]),
                decision_json("No", "The region 0 is lung: Adjusted.", &[], &[]),
            ],
            &config,
        );
        let round2_prompt = &transcript.rounds[1].raw_exchanges[0].prompt;
        assert!(!round2_prompt.contains("Instruction from the attending radiologist"));
    }

    #[test]
    fn transcript_records_every_exchange_and_replays_identically() {
        let config = ConsensusConfig {
            num_fellows: 2,
            max_rounds: 3,
            unanimity_short_circuit: false,
            ..Default::default()
        };
        let revised = "The region 0 is lung: Final wording.";
        let fellow_scripts = vec![
            vec![
                stance_json("disagree", 3, "disputed", &["case A"]),
                stance_json("agree", 3, "resolved", &[]),
            ],
            vec![
                stance_json("agree", 2, "fine", &[]),
                stance_json("agree", 2, "fine", &[]),
            ],
        ];
        let attending_script = vec![
            synthesis_json(DRAFT, &["synthesis"]),
            decision_json("Yes", revised, &["took case A"], &["a", "b"]),
            decision_json("No", revised, &[], &[]),
        ];
        let (transcript, attending, fellows) =
            run_fixture(fellow_scripts.clone(), attending_script.clone(), &config);

        // Completeness: everything the backends saw is in the transcript.
        let recorded: Vec<(String, String)> = transcript
            .all_exchanges()
            .map(|e| (e.agent.clone(), e.prompt.clone()))
            .collect();
        let mut sent: Vec<(String, String)> = Vec::new();
        for f in &fellows {
            for p in f.prompts() {
                sent.push((f.name().to_string(), p));
            }
        }
        for p in attending.prompts() {
            sent.push(("attending".to_string(), p));
        }
        assert_eq!(recorded.len(), sent.len());
        for pair in &sent {
            assert!(recorded.contains(pair));
        }

        // Replay: drive fresh backends with the recorded completions and
        // compare transcripts byte for byte.
        let replay_fellow_scripts: Vec<Vec<String>> = (0..2)
            .map(|i| {
                let name = format!("fellow-{i}");
                transcript
                    .all_exchanges()
                    .filter(|e| e.agent == name)
                    .map(|e| e.completion.clone())
                    .collect()
            })
            .collect();
        let replay_attending_script: Vec<String> = transcript
            .all_exchanges()
            .filter(|e| e.agent == "attending")
            .map(|e| e.completion.clone())
            .collect();
        let (replayed, _, _) = run_fixture(replay_fellow_scripts, replay_attending_script, &config);
        assert_eq!(
            serde_json::to_string(&replayed).unwrap(),
            serde_json::to_string(&transcript).unwrap()
        );
    }

    #[test]
    fn abort_carries_partial_transcript() {
        // Attending has the synthesis plus one adjudication, then runs dry
        // while the protocol wants round 2.
        let config = ConsensusConfig {
            num_fellows: 1,
            max_rounds: 3,
            unanimity_short_circuit: false,
            ..Default::default()
        };
        let (_, s0) = seat(
            "fellow-0",
            DRAFT,
            vec![
                stance_json("disagree", 3, "no", &["e"]),
                stance_json("disagree", 3, "still no", &["e"]),
            ],
        );
        let attending = ScriptedBackend::new(
            "attending",
            AgentRole::Attending,
            vec![
                synthesis_json(DRAFT, &[]),
                decision_json("Yes", "The region 0 is lung: Take two.", &["r"], &[]),
            ],
        );
        let err = run_consensus(&attending, &[s0], &report(DRAFT), &TemplateSet::default(), &config)
            .unwrap_err();
        assert!(err.stage.contains("round 2"));
        assert!(err.partial.synthesis.is_some());
        assert_eq!(err.partial.rounds.len(), 1);
    }

    #[test]
    fn termination_is_guaranteed_for_randomized_scripts() {
        // Mini version of the acceptance property: every combination of
        // agree/disagree and Yes/No terminates within the cap.
        for seed in 0u64..25 {
            let n = 1 + (seed % 3) as usize;
            let t = [1u32, 3, 5][(seed % 3) as usize];
            let mut fellow_scripts = vec![Vec::new(); n];
            for round in 0..t {
                for (i, script) in fellow_scripts.iter_mut().enumerate() {
                    let agree = (seed + round as u64 + i as u64).is_multiple_of(2);
                    script.push(if agree {
                        stance_json("agree", 2, "ok", &[])
                    } else {
                        stance_json("disagree", 2, "no", &["e"])
                    });
                }
            }
            let mut attending_script = vec![synthesis_json(DRAFT, &[])];
            for round in 0..t {
                let stop = (seed + round as u64).is_multiple_of(3);
                attending_script.push(decision_json(
                    if stop { "No" } else { "Yes" },
                    DRAFT,
                    &[],
                    &[],
                ));
            }
            let config = ConsensusConfig {
                num_fellows: n,
                max_rounds: t,
                unanimity_short_circuit: seed % 2 == 0,
                ..Default::default()
            };
            let (transcript, _, _) = run_fixture(fellow_scripts, attending_script, &config);
            assert!(transcript.rounds_used <= t, "seed {seed}");
            assert_eq!(transcript.rounds.len() as u32, transcript.rounds_used);
        }
    }
}
