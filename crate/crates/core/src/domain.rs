//! Shared domain types: cases, candidate lists, query pairs, evidence and
//! diagnosis reports, plus the canonical label folding used for every
//! diagnosis comparison in the engine.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of candidate diagnoses produced by the initial doctor.
pub const CANDIDATE_COUNT: usize = 10;
/// Number of differentials that follow the primary diagnosis in a report.
pub const DIFFERENTIAL_COUNT: usize = 4;
/// Total ranked labels in a report (primary plus differentials).
pub const REPORT_SLOTS: usize = 1 + DIFFERENTIAL_COUNT;
/// Upper bound on retrieval keyword length, in characters.
pub const MAX_KEYWORD_CHARS: usize = 100;
/// Answer text used when no retrieved evidence backs an answer.
pub const NO_EVIDENCE: &str = "No evidence found.";

/// A list of every violated field or constraint found while validating input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub violations: Vec<String>,
}

impl ValidationError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self {
            violations: vec![msg.into()],
        }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.violations.join("; "))
    }
}

impl std::error::Error for ValidationError {}

/// Folds a diagnosis label into its canonical comparison form.
///
/// Letters are lowercased and runs of whitespace or punctuation collapse to a
/// single space. Hyphens survive only between two word characters, so
/// `"IDH-wildtype"` keeps its hyphen while a trailing `"-"` is dropped.
/// Digits are kept. The result is a fixed point: folding it again returns it
/// unchanged.
pub fn canonical_fold(label: &str) -> Result<String, ValidationError> {
    if label.is_empty() {
        return Err(ValidationError::new("label empty"));
    }
    // lowercase before splitting: some capitals lowercase to a letter plus a
    // combining mark, which must not survive as a separator on a second pass
    let lowered: String = label.chars().flat_map(char::to_lowercase).collect();
    let mut words: Vec<String> = Vec::new();
    for raw in lowered.split(|c: char| !(c.is_alphanumeric() || c == '-')) {
        let mut word = String::with_capacity(raw.len());
        for part in raw.split('-').filter(|p| !p.is_empty()) {
            if !word.is_empty() {
                word.push('-');
            }
            word.push_str(part);
        }
        if !word.is_empty() {
            words.push(word);
        }
    }
    if words.is_empty() {
        return Err(ValidationError::new(format!(
            "label {label:?} has no alphanumeric content"
        )));
    }
    Ok(words.join(" "))
}

/// One patient record: imaging findings, clinical history and the reference
/// diagnosis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Case {
    pub id: String,
    pub caption: String,
    pub clinical_data: String,
    pub truth_label: String,
    /// 0 is the original caption, 1..=4 its paraphrases.
    pub paraphrase_id: u32,
}

/// A case record as read from disk, before validation.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct RawCase {
    pub id: Option<String>,
    pub caption: Option<String>,
    pub clinical_data: Option<String>,
    pub truth_label: Option<String>,
    pub paraphrase_id: Option<i64>,
}

/// Checks a raw record and reports every violated field at once.
pub fn validate_case(raw: RawCase) -> Result<Case, ValidationError> {
    let mut violations = Vec::new();
    let mut required = |name: &str, value: Option<String>| -> String {
        match value {
            None => {
                violations.push(format!("{name} missing"));
                String::new()
            }
            Some(v) if v.trim().is_empty() => {
                violations.push(format!("{name} empty"));
                String::new()
            }
            Some(v) => v,
        }
    };
    let id = required("id", raw.id);
    let caption = required("caption", raw.caption);
    let truth_label = required("truth_label", raw.truth_label);
    let clinical_data = raw.clinical_data.unwrap_or_default();
    let paraphrase_id = match raw.paraphrase_id {
        None => 0,
        Some(p) => match u32::try_from(p) {
            Ok(p) => p,
            Err(_) => {
                violations.push(format!("paraphrase_id {p} negative or too large"));
                0
            }
        },
    };
    if !violations.is_empty() {
        return Err(ValidationError { violations });
    }
    Ok(Case {
        id,
        caption,
        clinical_data,
        truth_label,
        paraphrase_id,
    })
}

/// Parses a line-delimited JSON case file. Blank lines are skipped; errors
/// carry the 1-based line number.
pub fn parse_cases_jsonl(text: &str) -> Result<Vec<Case>, ValidationError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut cases = Vec::new();
    let mut violations = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawCase = match serde_json::from_str(line) {
            Ok(raw) => raw,
            Err(e) => {
                violations.push(format!("line {}: {e}", lineno + 1));
                continue;
            }
        };
        match validate_case(raw) {
            Ok(case) => cases.push(case),
            Err(e) => violations.extend(
                e.violations
                    .into_iter()
                    .map(|v| format!("line {}: {v}", lineno + 1)),
            ),
        }
    }
    if violations.is_empty() {
        Ok(cases)
    } else {
        Err(ValidationError { violations })
    }
}

/// The initial doctor's ten distinct candidate diagnoses, in model order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CandidateList(Vec<String>);

impl CandidateList {
    pub fn new(candidates: Vec<String>) -> Result<Self, ValidationError> {
        let mut violations = Vec::new();
        if candidates.len() != CANDIDATE_COUNT {
            violations.push(format!(
                "expected {CANDIDATE_COUNT} candidates, got {}",
                candidates.len()
            ));
        }
        let mut seen = HashSet::new();
        for (i, c) in candidates.iter().enumerate() {
            match canonical_fold(c) {
                Err(_) => violations.push(format!("candidate {} empty", i + 1)),
                Ok(folded) => {
                    if !seen.insert(folded.clone()) {
                        violations.push(format!("candidate {} duplicates {folded:?}", i + 1));
                    }
                }
            }
        }
        if violations.is_empty() {
            Ok(Self(candidates))
        } else {
            Err(ValidationError { violations })
        }
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }
}

/// A diagnostic question and the short keyword used to retrieve evidence for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPair {
    pub question: String,
    pub keyword: String,
}

impl QueryPair {
    pub fn new(question: impl Into<String>, keyword: impl Into<String>) -> Result<Self, ValidationError> {
        let question = question.into().trim().to_string();
        let keyword = keyword.into().trim().to_string();
        let mut violations = Vec::new();
        if question.is_empty() {
            violations.push("question empty".to_string());
        }
        if keyword.is_empty() {
            violations.push("keyword empty".to_string());
        } else if keyword.chars().count() > MAX_KEYWORD_CHARS {
            violations.push(format!("keyword longer than {MAX_KEYWORD_CHARS} characters"));
        }
        if violations.is_empty() {
            Ok(Self { question, keyword })
        } else {
            Err(ValidationError { violations })
        }
    }
}

/// An answer to one generated question, grounded in retrieved chunks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceAnswer {
    pub question: String,
    pub keyword: String,
    pub answer: String,
    pub supporting_chunk_ids: Vec<String>,
}

impl EvidenceAnswer {
    pub fn grounded(
        question: impl Into<String>,
        keyword: impl Into<String>,
        answer: impl Into<String>,
        supporting_chunk_ids: Vec<String>,
    ) -> Result<Self, ValidationError> {
        let answer = answer.into();
        if answer.trim().is_empty() {
            return Err(ValidationError::new("answer empty"));
        }
        if supporting_chunk_ids.is_empty() && answer != NO_EVIDENCE {
            return Err(ValidationError::new(
                "answer cites no supporting chunks and is not the no-evidence sentinel",
            ));
        }
        Ok(Self {
            question: question.into(),
            keyword: keyword.into(),
            answer,
            supporting_chunk_ids,
        })
    }

    pub fn no_evidence(question: impl Into<String>, keyword: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            keyword: keyword.into(),
            answer: NO_EVIDENCE.to_string(),
            supporting_chunk_ids: Vec::new(),
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.answer == NO_EVIDENCE && self.supporting_chunk_ids.is_empty()
    }
}

/// A ranked label with the model-reported confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedLabel {
    pub label: String,
    pub confidence: f64,
}

/// Final output of every topology: one primary diagnosis, four ranked
/// differentials, aligned confidences and the evidence trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub case_id: String,
    pub primary: String,
    pub differentials: Vec<String>,
    pub confidences: Vec<f64>,
    pub evidence: Vec<EvidenceAnswer>,
    pub trace_id: String,
}

impl DiagnosisReport {
    /// Builds a report from five ranked labels. Labels must be distinct after
    /// folding and confidences must lie in `[0, 1]` and never increase.
    pub fn new(
        case_id: impl Into<String>,
        ranked: Vec<RankedLabel>,
        evidence: Vec<EvidenceAnswer>,
        trace_id: impl Into<String>,
    ) -> Result<Self, ValidationError> {
        let mut violations = Vec::new();
        if ranked.len() != REPORT_SLOTS {
            violations.push(format!(
                "expected {REPORT_SLOTS} ranked diagnoses (1 primary + {DIFFERENTIAL_COUNT} differentials), got {}",
                ranked.len()
            ));
        }
        let mut seen = HashSet::new();
        for (i, r) in ranked.iter().enumerate() {
            match canonical_fold(&r.label) {
                Err(_) => violations.push(format!("diagnosis {} empty", i + 1)),
                Ok(folded) => {
                    if !seen.insert(folded.clone()) {
                        violations.push(format!("diagnosis {} duplicates {folded:?}", i + 1));
                    }
                }
            }
            if !(r.confidence.is_finite() && (0.0..=1.0).contains(&r.confidence)) {
                violations.push(format!(
                    "confidence {} of diagnosis {} outside [0, 1]",
                    r.confidence,
                    i + 1
                ));
            }
        }
        for (i, pair) in ranked.windows(2).enumerate() {
            if pair[1].confidence > pair[0].confidence {
                violations.push(format!(
                    "confidence increases from rank {} ({}) to rank {} ({})",
                    i + 1,
                    pair[0].confidence,
                    i + 2,
                    pair[1].confidence
                ));
            }
        }
        if !violations.is_empty() {
            return Err(ValidationError { violations });
        }
        let mut labels = ranked.iter().map(|r| r.label.trim().to_string());
        let primary = labels.next().unwrap_or_default();
        Ok(Self {
            case_id: case_id.into(),
            primary,
            differentials: labels.collect(),
            confidences: ranked.iter().map(|r| r.confidence).collect(),
            evidence,
            trace_id: trace_id.into(),
        })
    }

    /// Primary followed by the differentials, in rank order.
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.primary.as_str()).chain(self.differentials.iter().map(String::as_str))
    }

    pub fn ranked(&self) -> Vec<RankedLabel> {
        self.labels()
            .zip(&self.confidences)
            .map(|(label, &confidence)| RankedLabel {
                label: label.to_string(),
                confidence,
            })
            .collect()
    }
}
