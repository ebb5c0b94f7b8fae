//! Lexical metrics: tokenizer, n-gram precision BLEU, and LCS-based
//! ROUGE-L.
//!
//! Tokenization is shared by every metric in this crate: lowercase, split
//! on whitespace, and split punctuation off into separate tokens, so
//! scores are internally comparable across the whole artifact.

use std::collections::HashMap;

/// Lowercased word/punctuation tokens. `"No pleural effusion."` becomes
/// `["no", "pleural", "effusion", "."]`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Zero n-gram matches at orders >= 2 are smoothed to this epsilon so one
/// missing higher-order match does not zero the whole geometric mean.
/// Zero unigram overlap still scores exactly 0.
const HIGHER_ORDER_EPSILON: f64 = 1e-9;

/// BLEU-n for one candidate against one or more references: geometric
/// mean of modified n-gram precisions p_1..p_n with the closest-reference
/// brevity penalty. Empty candidate or empty references score 0.
pub fn bleu_n(candidate: &str, references: &[&str], n: usize) -> f64 {
    assert!((1..=4).contains(&n), "bleu order must be 1..=4, got {n}");
    let cand = tokenize(candidate);
    let refs: Vec<Vec<String>> = references
        .iter()
        .map(|r| tokenize(r))
        .filter(|r| !r.is_empty())
        .collect();
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }

    let c = cand.len();
    // Closest reference length; ties prefer the shorter reference.
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| ((len as i64 - c as i64).abs(), len))
        .expect("at least one reference");

    let mut log_sum = 0.0;
    for order in 1..=n {
        let cand_counts = ngram_counts(&cand, order);
        let total: usize = cand_counts.values().sum();
        let mut clipped = 0usize;
        for (gram, &count) in &cand_counts {
            let max_ref = refs
                .iter()
                .map(|r| ngram_counts(r, order).get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            clipped += count.min(max_ref);
        }
        let p = if total == 0 { 0.0 } else { clipped as f64 / total as f64 };
        if order == 1 && p == 0.0 {
            return 0.0;
        }
        let p = if p == 0.0 { HIGHER_ORDER_EPSILON } else { p };
        log_sum += p.ln();
    }

    let brevity_penalty = if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    brevity_penalty * (log_sum / n as f64).exp()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            row[j + 1] = if x == y {
                prev[j] + 1
            } else {
                row[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// Weight on recall in the ROUGE-L F-measure.
const ROUGE_BETA: f64 = 1.2;

/// ROUGE-L: LCS-based F-measure with recall weighted by `ROUGE_BETA`.
/// Empty input scores 0.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&cand, &refr) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let precision = lcs / cand.len() as f64;
    let recall = lcs / refr.len() as f64;
    let beta_sq = ROUGE_BETA * ROUGE_BETA;
    (1.0 + beta_sq) * recall * precision / (recall + beta_sq * precision)
}

/// Per-pair lexical scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LexicalScores {
    pub bleu: [f64; 4],
    pub rouge_l: f64,
}

pub fn score_pair(candidate: &str, reference: &str) -> LexicalScores {
    let refs = [reference];
    LexicalScores {
        bleu: [
            bleu_n(candidate, &refs, 1),
            bleu_n(candidate, &refs, 2),
            bleu_n(candidate, &refs, 3),
            bleu_n(candidate, &refs, 4),
        ],
        rouge_l: rouge_l(candidate, reference),
    }
}

/// Batch scoring over `(candidate, reference)` pairs; output order matches
/// input order in both flavors.
pub mod batch {
    use super::*;

    pub fn score_pairs_seq(pairs: &[(String, String)]) -> Vec<LexicalScores> {
        pairs.iter().map(|(c, r)| score_pair(c, r)).collect()
    }

    #[cfg(feature = "parallel")]
    pub fn score_pairs_par(pairs: &[(String, String)]) -> Vec<LexicalScores> {
        use rayon::prelude::*;
        pairs.par_iter().map(|(c, r)| score_pair(c, r)).collect()
    }

    pub fn score_pairs(pairs: &[(String, String)]) -> Vec<LexicalScores> {
        #[cfg(feature = "parallel")]
        {
            score_pairs_par(pairs)
        }
        #[cfg(not(feature = "parallel"))]
        {
            score_pairs_seq(pairs)
        }
    }
}
