//! Reference-based evaluation: BLEU-1..4, ROUGE-L, and clinical-efficacy
//! precision/recall/F1 over the 18 abnormality labels.
//!
//! Lexical scores are averaged per case; clinical efficacy is reported
//! micro-averaged (headline), macro-averaged, and per abnormality.

pub mod labeler;
pub mod text;

use std::collections::BTreeMap;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use labeler::{KeywordLabeler, LabelVector, Labeler, LabelerError};
pub use text::{bleu_n, rouge_l, tokenize, LexicalScores};

use crate::dataset::CaseRecord;
use crate::pipeline::CaseResult;
use crate::report::serialize_report;
use crate::taxonomy::AbnormalityId;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("predicted and reference label lists differ in length ({predicted} vs {reference})")]
    LengthMismatch { predicted: usize, reference: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("no reference case for result {0:?}")]
    UnmatchedCase(String),
}

/// Precision / recall / F1 triple; zero-division yields 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfScores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        PrfScores { precision, recall, f1 }
    }
}

/// Clinical-efficacy block of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeMetrics {
    pub micro: PrfScores,
    #[serde(rename = "macro")]
    pub macro_avg: PrfScores,
    pub per_abnormality: BTreeMap<AbnormalityId, PrfScores>,
}

/// Per-abnormality and pooled precision/recall/F1 between two label
/// sequences of equal, nonzero length.
pub fn ce_metrics(predicted: &[LabelVector], reference: &[LabelVector]) -> Result<CeMetrics, EvalError> {
    if predicted.len() != reference.len() {
        return Err(EvalError::LengthMismatch {
            predicted: predicted.len(),
            reference: reference.len(),
        });
    }
    if predicted.is_empty() {
        return Err(EvalError::Empty);
    }

    let mut per_abnormality = BTreeMap::new();
    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    let mut macro_sum = (0.0f64, 0.0f64, 0.0f64);
    for abnormality in AbnormalityId::ALL {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (p, r) in predicted.iter().zip(reference) {
            match (p.get(abnormality), r.get(abnormality)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let scores = PrfScores::from_counts(tp, fp, fn_);
        macro_sum.0 += scores.precision;
        macro_sum.1 += scores.recall;
        macro_sum.2 += scores.f1;
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        per_abnormality.insert(abnormality, scores);
    }

    let n = AbnormalityId::COUNT as f64;
    Ok(CeMetrics {
        micro: PrfScores::from_counts(tp_all, fp_all, fn_all),
        macro_avg: PrfScores {
            precision: macro_sum.0 / n,
            recall: macro_sum.1 / n,
            f1: macro_sum.2 / n,
        },
        per_abnormality,
    })
}

/// The full metrics table for one evaluated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub rouge_l: f64,
    pub cases: usize,
    pub ce: CeMetrics,
}

impl MetricsTable {
    pub fn bleu(&self, n: usize) -> f64 {
        match n {
            1 => self.bleu_1,
            2 => self.bleu_2,
            3 => self.bleu_3,
            4 => self.bleu_4,
            other => panic!("bleu order must be 1..=4, got {other}"),
        }
    }

    /// Aligned plain-text rendering, headline rows first.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<12} {}\n", "cases", self.cases));
        for (name, value) in [
            ("BLEU-1", self.bleu_1),
            ("BLEU-2", self.bleu_2),
            ("BLEU-3", self.bleu_3),
            ("BLEU-4", self.bleu_4),
            ("ROUGE-L", self.rouge_l),
        ] {
            out.push_str(&format!("{name:<12} {value:.4}\n"));
        }
        for (name, s) in [("CE micro", self.ce.micro), ("CE macro", self.ce.macro_avg)] {
            out.push_str(&format!(
                "{name:<12} P {:.4}  R {:.4}  F1 {:.4}\n",
                s.precision, s.recall, s.f1
            ));
        }
        out.push_str("\nper-abnormality CE\n");
        out.push_str(&format!("  {:<36} {:>7} {:>7} {:>7}\n", "abnormality", "P", "R", "F1"));
        for (abnormality, s) in &self.ce.per_abnormality {
            out.push_str(&format!(
                "  {:<36} {:>7.4} {:>7.4} {:>7.4}\n",
                abnormality.name(),
                s.precision,
                s.recall,
                s.f1
            ));
        }
        out
    }
}

/// Scores pipeline results against their reference cases: per-case BLEU
/// and ROUGE-L averaged over the corpus, clinical efficacy via the given
/// labeler on both sides. Results are matched to references by case id
/// and processed in case-id order, so the table is independent of input
/// order.
pub fn evaluate(
    results: &[CaseResult],
    references: &[CaseRecord],
    labeler: &dyn Labeler,
) -> Result<MetricsTable, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let by_id: HashMap<&str, &CaseRecord> =
        references.iter().map(|c| (c.case_id.as_str(), c)).collect();

    let mut ordered: Vec<&CaseResult> = results.iter().collect();
    ordered.sort_by(|a, b| a.case_id.cmp(&b.case_id));

    let mut pairs = Vec::with_capacity(ordered.len());
    let mut predicted = Vec::with_capacity(ordered.len());
    let mut reference_labels = Vec::with_capacity(ordered.len());
    for result in ordered {
        let reference = by_id
            .get(result.case_id.as_str())
            .ok_or_else(|| EvalError::UnmatchedCase(result.case_id.clone()))?;
        pairs.push((
            serialize_report(&result.final_report),
            serialize_report(&reference.report),
        ));
        predicted.push(labeler.label(&result.final_report));
        reference_labels.push(labeler.label(&reference.report));
    }

    let scores = text::batch::score_pairs(&pairs);
    let n = scores.len() as f64;
    let mut bleu_sum = [0.0f64; 4];
    let mut rouge_sum = 0.0f64;
    for s in &scores {
        for (acc, v) in bleu_sum.iter_mut().zip(s.bleu) {
            *acc += v;
        }
        rouge_sum += s.rouge_l;
    }

    Ok(MetricsTable {
        bleu_1: bleu_sum[0] / n,
        bleu_2: bleu_sum[1] / n,
        bleu_3: bleu_sum[2] / n,
        bleu_4: bleu_sum[3] / n,
        rouge_l: rouge_sum / n,
        cases: scores.len(),
        ce: ce_metrics(&predicted, &reference_labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::CaseResult;
    use crate::report::parse_report;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn result_of(case_id: &str, final_text: &str) -> CaseResult {
        CaseResult::passthrough(case_id, parse_report(final_text).unwrap())
    }

    fn reference_of(case_id: &str, text: &str) -> CaseRecord {
        CaseRecord {
            case_id: case_id.to_string(),
            report: parse_report(text).unwrap(),
            image_embedding: vec![],
            text_embedding: vec![],
            logits: vec![],
            draft: None,
        }
    }

    #[test]
    fn identical_labels_score_one() {
        let mut a = LabelVector::default();
        a.set(AbnormalityId::Cardiomegaly, true);
        a.set(AbnormalityId::PleuralEffusion, true);
        let ce = ce_metrics(&[a, a], &[a, a]).unwrap();
        assert_eq!(ce.micro, PrfScores { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(ce.per_abnormality[&AbnormalityId::Cardiomegaly].f1, 1.0);
    }

    #[test]
    fn all_positive_vs_half_positive_is_analytic() {
        // Predicted always positive; reference positive in half the cases:
        // per label P = 0.5, R = 1.0, F1 = 2/3.
        let all = LabelVector::new([true; 18]);
        let none = LabelVector::default();
        let ce = ce_metrics(&[all, all], &[all, none]).unwrap();
        for s in ce.per_abnormality.values() {
            assert_eq!(s.precision, 0.5);
            assert_eq!(s.recall, 1.0);
            assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(ce.micro.precision, 0.5);
        assert_eq!(ce.micro.recall, 1.0);
    }

    #[test]
    fn zero_division_yields_zero() {
        let none = LabelVector::default();
        let ce = ce_metrics(&[none], &[none]).unwrap();
        assert_eq!(ce.micro, PrfScores::default());
    }

    #[test]
    fn length_mismatch_and_empty_are_errors() {
        let v = LabelVector::default();
        assert_eq!(
            ce_metrics(&[v], &[v, v]).unwrap_err(),
            EvalError::LengthMismatch { predicted: 1, reference: 2 }
        );
        assert_eq!(ce_metrics(&[], &[]).unwrap_err(), EvalError::Empty);
    }

    /// Brute-force confusion-matrix oracle: independent counting loops
    /// over raw booleans.
    fn oracle_counts(
        predicted: &[LabelVector],
        reference: &[LabelVector],
        abnormality: AbnormalityId,
    ) -> (usize, usize, usize) {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for i in 0..predicted.len() {
            let p = predicted[i].get(abnormality);
            let r = reference[i].get(abnormality);
            if p && r {
                tp += 1;
            }
            if p && !r {
                fp += 1;
            }
            if !p && r {
                fn_ += 1;
            }
        }
        (tp, fp, fn_)
    }

    #[test]
    fn ce_matches_brute_force_oracle_on_random_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let random_vec = |rng: &mut ChaCha8Rng| {
            let mut v = LabelVector::default();
            for a in AbnormalityId::ALL {
                v.set(a, rng.random_bool(0.3));
            }
            v
        };
        let predicted: Vec<_> = (0..200).map(|_| random_vec(&mut rng)).collect();
        let reference: Vec<_> = (0..200).map(|_| random_vec(&mut rng)).collect();
        let ce = ce_metrics(&predicted, &reference).unwrap();

        let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
        for abnormality in AbnormalityId::ALL {
            let (tp, fp, fn_) = oracle_counts(&predicted, &reference, abnormality);
            tp_all += tp;
            fp_all += fp;
            fn_all += fn_;
            assert_eq!(
                ce.per_abnormality[&abnormality],
                PrfScores::from_counts(tp, fp, fn_),
                "{abnormality}"
            );
        }
        assert_eq!(ce.micro, PrfScores::from_counts(tp_all, fp_all, fn_all));
    }

    #[test]
    fn identical_finals_and_references_score_one_everywhere() {
        let text = "The region 0 is heart: Cardiomegaly. The region 1 is lung: Pleural effusion.";
        let results = vec![result_of("a", text), result_of("b", text)];
        let references = vec![reference_of("a", text), reference_of("b", text)];
        let table = evaluate(&results, &references, &KeywordLabeler::with_default_lexicon()).unwrap();
        assert_eq!(table.bleu_1, 1.0);
        assert_eq!(table.bleu_4, 1.0);
        assert_eq!(table.rouge_l, 1.0);
        assert_eq!(table.ce.micro.f1, 1.0);
    }

    #[test]
    fn empty_results_error() {
        assert_eq!(
            evaluate(&[], &[], &KeywordLabeler::with_default_lexicon()).unwrap_err(),
            EvalError::Empty
        );
    }

    #[test]
    fn unmatched_case_errors() {
        let results = vec![result_of("ghost", "The region 0 is lung: Clear.")];
        let err = evaluate(&results, &[], &KeywordLabeler::with_default_lexicon()).unwrap_err();
        assert_eq!(err, EvalError::UnmatchedCase("ghost".into()));
    }

    /// The five-case corpus with expected values computed once by an
    /// independent script-based reimplementation of the documented
    /// formulas.
    fn golden_corpus() -> (Vec<CaseResult>, Vec<CaseRecord>) {
        let corpus = [
            (
                "e1",
                "The region 0 is heart: Mild cardiomegaly is present. The region 1 is lung: There is pleural effusion.",
                "The region 0 is heart: Mild cardiomegaly is present. The region 1 is lung: There is pleural effusion and atelectasis.",
            ),
            (
                "e2",
                "The region 0 is lung: Emphysema with scattered millimetric nodules. The region 1 is pleura: No pleural effusion.",
                "The region 0 is lung: Emphysematous changes with scattered millimetric nodules. The region 1 is pleura: No pleural effusion.",
            ),
            (
                "e3",
                "The region 0 is abdomen: Normal upper abdominal organs. The region 1 is lung: Consolidation in the right lower lobe.",
                "The region 0 is abdomen: Normal upper abdominal organs. The region 1 is lung: Consolidation in the right lower lobe.",
            ),
            (
                "e4",
                "The region 0 is lung: Diffuse ground glass opacities. The region 1 is mediastinum: Mediastinal lymphadenopathy.",
                "The region 0 is lung: Clear lungs. The region 1 is mediastinum: No lymphadenopathy.",
            ),
            (
                "e5",
                "The region 0 is bone: Preserved vertebral body heights. The region 1 is esophagus: Hiatal hernia is noted.",
                "The region 0 is bone: Preserved vertebral body heights. The region 1 is esophagus: Hiatal hernia is observed.",
            ),
        ];
        let results = corpus.iter().map(|(id, f, _)| result_of(id, f)).collect();
        let references = corpus.iter().map(|(id, _, r)| reference_of(id, r)).collect();
        (results, references)
    }

    #[test]
    fn five_case_corpus_matches_independent_oracle_values() {
        let (results, references) = golden_corpus();
        let table = evaluate(&results, &references, &KeywordLabeler::with_default_lexicon()).unwrap();
        let tol = 1e-9;
        assert!((table.bleu_1 - 0.905_954_904_725_852_2).abs() < tol, "bleu_1 {}", table.bleu_1);
        assert!((table.bleu_2 - 0.879_337_367_181_906_9).abs() < tol, "bleu_2 {}", table.bleu_2);
        assert!((table.bleu_3 - 0.856_659_254_387_850_5).abs() < tol, "bleu_3 {}", table.bleu_3);
        assert!((table.bleu_4 - 0.836_870_339_228_186_2).abs() < tol, "bleu_4 {}", table.bleu_4);
        assert!((table.rouge_l - 0.926_054_506_428_174_3).abs() < tol, "rouge {}", table.rouge_l);
        assert_eq!(table.ce.micro.precision, 0.75);
        assert!((table.ce.micro.recall - 6.0 / 7.0).abs() < tol);
        assert!((table.ce.micro.f1 - 0.8).abs() < tol);
        assert!((table.ce.macro_avg.f1 - 1.0 / 3.0).abs() < tol);
        assert_eq!(table.ce.per_abnormality[&AbnormalityId::Atelectasis].f1, 0.0);
        assert_eq!(table.ce.per_abnormality[&AbnormalityId::Consolidation].f1, 1.0);
    }

    #[test]
    fn evaluate_is_order_invariant() {
        let (mut results, references) = golden_corpus();
        let labeler = KeywordLabeler::with_default_lexicon();
        let forward = evaluate(&results, &references, &labeler).unwrap();
        results.reverse();
        let reversed = evaluate(&results, &references, &labeler).unwrap();
        assert_eq!(
            serde_json::to_string(&forward).unwrap(),
            serde_json::to_string(&reversed).unwrap()
        );
    }

    #[test]
    fn text_rendering_is_aligned_and_complete() {
        let (results, references) = golden_corpus();
        let table = evaluate(&results, &references, &KeywordLabeler::with_default_lexicon()).unwrap();
        let text = table.render_text();
        assert!(text.contains("BLEU-1"));
        assert!(text.contains("CE micro"));
        for abnormality in AbnormalityId::ALL {
            assert!(text.contains(abnormality.name()), "missing {abnormality}");
        }
    }
}
