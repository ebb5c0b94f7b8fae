//! Report labelers: report → 18 binary abnormality labels.
//!
//! The default is a keyword labeler over a phrase lexicon with a
//! token-window negation rule. It stands in for a trained label extractor
//! behind the same trait, so a stronger labeler can be plugged in without
//! touching the metrics.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::eval::text::tokenize;
use crate::report::Report;
use crate::taxonomy::AbnormalityId;

/// One boolean per abnormality, indexed canonically; all 18 always
/// present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LabelVector([bool; AbnormalityId::COUNT]);

impl LabelVector {
    pub fn new(values: [bool; AbnormalityId::COUNT]) -> Self {
        LabelVector(values)
    }

    pub fn get(&self, abnormality: AbnormalityId) -> bool {
        self.0[abnormality.index()]
    }

    pub fn set(&mut self, abnormality: AbnormalityId, value: bool) {
        self.0[abnormality.index()] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (AbnormalityId, bool)> + '_ {
        AbnormalityId::ALL.iter().map(|&a| (a, self.0[a.index()]))
    }

    pub fn count_positive(&self) -> usize {
        self.0.iter().filter(|&&v| v).count()
    }
}

impl Serialize for LabelVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(AbnormalityId::COUNT))?;
        for (abnormality, value) in self.iter() {
            map.serialize_entry(abnormality.name(), &value)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for LabelVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<AbnormalityId, bool>::deserialize(deserializer)?;
        if map.len() != AbnormalityId::COUNT {
            return Err(D::Error::custom(format!(
                "label vector must cover all {} abnormalities, got {}",
                AbnormalityId::COUNT,
                map.len()
            )));
        }
        let mut values = [false; AbnormalityId::COUNT];
        for (abnormality, value) in map {
            values[abnormality.index()] = value;
        }
        Ok(LabelVector(values))
    }
}

/// Anything that maps a report to the 18 binary labels.
pub trait Labeler: Send + Sync {
    fn label(&self, report: &Report) -> LabelVector;

    fn descriptor(&self) -> String;
}

#[derive(Debug, thiserror::Error)]
pub enum LabelerError {
    #[error("lexicon is missing entries for: {}", .0.join(", "))]
    IncompleteLexicon(Vec<String>),
    #[error("lexicon entry for {0} has no phrases")]
    EmptyEntry(String),
}

const NEGATION_CUES: [&str; 3] = ["no", "without", "not"];
const SENTENCE_BOUNDARIES: [&str; 4] = [".", ";", "!", "?"];

/// Phrase-lexicon labeler: a label is positive when any of its phrases
/// occurs (case-insensitive, whole-token) with no negation cue within
/// `negation_window` tokens before the match. The backward cue scan stops
/// at sentence boundaries so a negation never leaks into the next
/// sentence.
#[derive(Debug)]
pub struct KeywordLabeler {
    phrases: Vec<(AbnormalityId, Vec<Vec<String>>)>,
    negation_window: usize,
}

impl KeywordLabeler {
    pub fn new(
        lexicon: &BTreeMap<AbnormalityId, Vec<String>>,
        negation_window: usize,
    ) -> Result<Self, LabelerError> {
        let missing: Vec<String> = AbnormalityId::ALL
            .iter()
            .filter(|a| !lexicon.contains_key(a))
            .map(|a| a.name().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(LabelerError::IncompleteLexicon(missing));
        }
        let mut phrases = Vec::with_capacity(AbnormalityId::COUNT);
        for (&abnormality, entry) in lexicon {
            let tokenized: Vec<Vec<String>> = entry
                .iter()
                .map(|p| tokenize(p))
                .filter(|t| !t.is_empty())
                .collect();
            if tokenized.is_empty() {
                return Err(LabelerError::EmptyEntry(abnormality.name().to_string()));
            }
            phrases.push((abnormality, tokenized));
        }
        Ok(KeywordLabeler {
            phrases,
            negation_window,
        })
    }

    /// The lexicon shipped with the crate.
    pub fn default_lexicon() -> BTreeMap<AbnormalityId, Vec<String>> {
        serde_json::from_str(include_str!("../../assets/default_lexicon.json"))
            .expect("shipped lexicon parses and uses canonical abnormality names")
    }

    /// Labeler over the shipped lexicon with a 5-token negation window.
    pub fn with_default_lexicon() -> Self {
        KeywordLabeler::new(&Self::default_lexicon(), 5).expect("shipped lexicon is complete")
    }

    fn negated_before(&self, tokens: &[String], match_start: usize) -> bool {
        let window_start = match_start.saturating_sub(self.negation_window);
        for j in (window_start..match_start).rev() {
            let token = tokens[j].as_str();
            if SENTENCE_BOUNDARIES.contains(&token) {
                return false;
            }
            if NEGATION_CUES.contains(&token) {
                return true;
            }
            if token == "negative" && tokens.get(j + 1).map(String::as_str) == Some("for") {
                return true;
            }
        }
        false
    }

    fn phrase_matches(&self, tokens: &[String], phrase: &[String]) -> bool {
        if tokens.len() < phrase.len() {
            return false;
        }
        for start in 0..=(tokens.len() - phrase.len()) {
            if tokens[start..start + phrase.len()] == *phrase && !self.negated_before(tokens, start) {
                return true;
            }
        }
        false
    }
}

impl Labeler for KeywordLabeler {
    fn label(&self, report: &Report) -> LabelVector {
        let tokens = tokenize(&crate::report::serialize_report(report));
        let mut labels = LabelVector::default();
        for (abnormality, phrases) in &self.phrases {
            if phrases.iter().any(|p| self.phrase_matches(&tokens, p)) {
                labels.set(*abnormality, true);
            }
        }
        labels
    }

    fn descriptor(&self) -> String {
        format!(
            "keyword-lexicon({} abnormalities, negation window {})",
            self.phrases.len(),
            self.negation_window
        )
    }
}
