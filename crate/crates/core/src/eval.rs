//! Top-1 / Top-5 scoring of diagnosis reports against ground truth, label
//! normalization, and mean ± sample deviation across repeated runs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{parse_as, AgentConfig, AgentRole, SchemaId, TemplateRegistry};
use crate::agents::parse::CanonicalOut;
use crate::domain::{canonical_fold, DiagnosisReport, ValidationError};
use crate::provider::{chat_complete, ChatProvider, ChatRequest, Sampling};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    Empty,
    #[error("no truth label for case ids: {}", .0.join(", "))]
    MissingTruth(Vec<String>),
    #[error("case ids reported more than once: {}", .0.join(", "))]
    DuplicateCase(Vec<String>),
    #[error("invalid label: {0}")]
    Label(#[from] ValidationError),
    #[error("synonym table: {0}")]
    Synonyms(String),
    #[error("truth file: {0}")]
    Truths(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedPrediction {
    pub raw: String,
    pub canonical: String,
    pub normalizer_id: String,
    /// Set when the normalizer could not be consulted and the folded raw
    /// label was used instead.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

pub trait Normalizer: Send + Sync {
    fn id(&self) -> &str;
    fn normalize(&self, raw: &str) -> Result<NormalizedPrediction, EvalError>;
}

/// Folds the label, then maps it through a synonym table. Table keys and
/// values are folded on load and chains (`a -> b -> c`) are resolved, so
/// normalization is idempotent.
#[derive(Debug, Clone, Default)]
pub struct DictionaryNormalizer {
    table: HashMap<String, String>,
}

impl DictionaryNormalizer {
    pub fn new(table: BTreeMap<String, String>) -> Result<Self, EvalError> {
        let mut folded = HashMap::with_capacity(table.len());
        for (k, v) in &table {
            let fk = canonical_fold(k).map_err(|e| EvalError::Synonyms(format!("key {k:?}: {e}")))?;
            let fv = canonical_fold(v).map_err(|e| EvalError::Synonyms(format!("value for {k:?}: {e}")))?;
            if let Some(prev) = folded.insert(fk.clone(), fv.clone()) {
                if prev != fv {
                    return Err(EvalError::Synonyms(format!("{fk:?} maps to both {prev:?} and {fv:?}")));
                }
            }
        }
        let mut resolved = HashMap::with_capacity(folded.len());
        for start in folded.keys() {
            let mut seen = HashSet::from([start.clone()]);
            let mut cur = &folded[start];
            while let Some(next) = folded.get(cur) {
                if next == cur {
                    break;
                }
                if !seen.insert(cur.clone()) {
                    return Err(EvalError::Synonyms(format!("cycle through {start:?}")));
                }
                cur = next;
            }
            resolved.insert(start.clone(), cur.clone());
        }
        Ok(Self { table: resolved })
    }

    /// Reads a JSON object of raw label to canonical label.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| EvalError::Synonyms(format!("{}: {e}", path.display())))?;
        let table: BTreeMap<String, String> =
            serde_json::from_str(&text).map_err(|e| EvalError::Synonyms(format!("{}: {e}", path.display())))?;
        Self::new(table)
    }

    pub fn canonical(&self, raw: &str) -> Result<String, ValidationError> {
        let folded = canonical_fold(raw)?;
        Ok(self.table.get(&folded).cloned().unwrap_or(folded))
    }
}

impl Normalizer for DictionaryNormalizer {
    fn id(&self) -> &str {
        "dictionary"
    }

    fn normalize(&self, raw: &str) -> Result<NormalizedPrediction, EvalError> {
        Ok(NormalizedPrediction {
            raw: raw.to_string(),
            canonical: self.canonical(raw)?,
            normalizer_id: self.id().to_string(),
            fallback: false,
        })
    }
}

/// Asks a chat model for the canonical term, then folds its answer. Results
/// are cached per folded label. Provider or parse failures fall back to the
/// folded raw label with `fallback` set.
pub struct ProviderNormalizer<'a> {
    provider: &'a dyn ChatProvider,
    templates: &'a TemplateRegistry,
    cfg: AgentConfig,
    id: String,
    cache: Mutex<HashMap<String, (String, bool)>>,
}

impl<'a> ProviderNormalizer<'a> {
    pub fn new(provider: &'a dyn ChatProvider, templates: &'a TemplateRegistry) -> Self {
        let mut cfg = AgentConfig::new(AgentRole::FinalDoctor, "normalizer");
        cfg.sampling = Sampling::LOW;
        cfg.max_tokens = 64;
        Self {
            id: format!("provider:{}", provider.id()),
            provider,
            templates,
            cfg,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn ask(&self, raw: &str) -> Result<String, String> {
        let vars = HashMap::from([("label", raw.to_string())]);
        let messages = self.templates.render(&self.cfg.template_id, &vars).map_err(|e| e.to_string())?;
        let req = ChatRequest::new(messages, self.cfg.sampling, self.cfg.max_tokens);
        let resp = chat_complete(self.provider, &req).map_err(|e| e.to_string())?;
        let out: CanonicalOut = parse_as(&resp.content, SchemaId::Canonical).map_err(|e| e.to_string())?;
        canonical_fold(&out.canonical).map_err(|e| e.to_string())
    }
}

impl Normalizer for ProviderNormalizer<'_> {
    fn id(&self) -> &str {
        &self.id
    }

    fn normalize(&self, raw: &str) -> Result<NormalizedPrediction, EvalError> {
        let folded = canonical_fold(raw)?;
        let cached = self.cache.lock().expect("normalizer cache poisoned").get(&folded).cloned();
        let (canonical, fallback) = match cached {
            Some(hit) => hit,
            None => {
                let fresh = match self.ask(raw) {
                    Ok(c) => (c, false),
                    Err(e) => {
                        log::warn!("normalizer fell back to folded label for {raw:?}: {e}");
                        (folded.clone(), true)
                    }
                };
                self.cache
                    .lock()
                    .expect("normalizer cache poisoned")
                    .insert(folded, fresh.clone());
                fresh
            }
        };
        Ok(NormalizedPrediction {
            raw: raw.to_string(),
            canonical,
            normalizer_id: self.id.clone(),
            fallback,
        })
    }
}

/// `(top1_hit, top5_hit)` for one report.
pub fn score_case(report: &DiagnosisReport, truth: &str, normalizer: &dyn Normalizer) -> Result<(bool, bool), EvalError> {
    let truth = normalizer.normalize(truth)?.canonical;
    let mut top1 = false;
    let mut top5 = false;
    for (rank, label) in report.labels().enumerate() {
        if normalizer.normalize(label)?.canonical == truth {
            top1 |= rank == 0;
            top5 = true;
        }
    }
    Ok((top1, top5))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub top1_hit: bool,
    pub top5_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub run_id: String,
    pub n_cases: usize,
    pub top1: f64,
    pub top5: f64,
    /// Sorted by case id.
    pub per_case: Vec<CaseScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub mean_top1: f64,
    pub std_top1: f64,
    pub mean_top5: f64,
    pub std_top5: f64,
    pub n_runs: usize,
}

/// Scores every report of one run. Order of `reports` does not matter.
pub fn evaluate_run(
    run_id: &str,
    reports: &[DiagnosisReport],
    truths: &HashMap<String, String>,
    normalizer: &dyn Normalizer,
) -> Result<EvalResult, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut missing: Vec<String> = reports
        .iter()
        .filter(|r| !truths.contains_key(&r.case_id))
        .map(|r| r.case_id.clone())
        .collect();
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(EvalError::MissingTruth(missing));
    }
    let mut seen = HashSet::new();
    let mut dups: Vec<String> = reports
        .iter()
        .filter(|r| !seen.insert(r.case_id.as_str()))
        .map(|r| r.case_id.clone())
        .collect();
    if !dups.is_empty() {
        dups.sort();
        dups.dedup();
        return Err(EvalError::DuplicateCase(dups));
    }
    let mut per_case = reports
        .iter()
        .map(|r| {
            let (top1_hit, top5_hit) = score_case(r, &truths[&r.case_id], normalizer)?;
            Ok(CaseScore {
                case_id: r.case_id.clone(),
                top1_hit,
                top5_hit,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    per_case.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let n = per_case.len();
    let hits1 = per_case.iter().filter(|c| c.top1_hit).count();
    let hits5 = per_case.iter().filter(|c| c.top5_hit).count();
    Ok(EvalResult {
        run_id: run_id.to_string(),
        n_cases: n,
        top1: hits1 as f64 / n as f64,
        top5: hits5 as f64 / n as f64,
        per_case,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation (n − 1) across runs, in percent.
pub fn aggregate(results: &[EvalResult]) -> Result<AggregateResult, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let pct = |f: fn(&EvalResult) -> f64| results.iter().map(|r| 100.0 * f(r)).collect::<Vec<_>>();
    let (mean_top1, std_top1) = mean_std(&pct(|r| r.top1));
    let (mean_top5, std_top5) = mean_std(&pct(|r| r.top5));
    Ok(AggregateResult {
        mean_top1,
        std_top1,
        mean_top5,
        std_top5,
        n_runs: results.len(),
    })
}

#[derive(Debug, Deserialize)]
struct TruthLine {
    case_id: String,
    truth_label: String,
}

/// Parses line-delimited `{"case_id", "truth_label"}` records.
pub fn parse_truths_jsonl(text: &str) -> Result<HashMap<String, String>, EvalError> {
    let mut truths = HashMap::new();
    for (i, line) in text.trim_start_matches('\u{feff}').lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: TruthLine = serde_json::from_str(line).map_err(|e| EvalError::Truths(format!("line {}: {e}", i + 1)))?;
        if t.truth_label.trim().is_empty() {
            return Err(EvalError::Truths(format!("line {}: truth_label empty", i + 1)));
        }
        if truths.insert(t.case_id.clone(), t.truth_label).is_some() {
            return Err(EvalError::Truths(format!("line {}: duplicate case_id {}", i + 1, t.case_id)));
        }
    }
    Ok(truths)
}

/// Contents of `eval.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub runs: Vec<EvalResult>,
    pub aggregate: AggregateResult,
}
