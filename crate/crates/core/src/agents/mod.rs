//! Prompted agents over a chat provider: initial doctor, query generator,
//! answer generator, final doctor, and the doctor/challenger roles used by
//! the baseline topologies.
//!
//! Every agent reply must contain JSON matching the agent's schema. A reply
//! that does not parse or violates a domain contract is re-asked, with the
//! bad reply and a format reminder appended, up to `max_retries` times.

pub mod parse;
pub mod templates;

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::domain::{CandidateList, Case, DiagnosisReport, EvidenceAnswer, QueryPair, RankedLabel, NO_EVIDENCE};
use crate::index::ScoredChunk;
use crate::provider::{chat_complete, short_digest, ChatMessage, ChatProvider, ChatRequest, ProviderError, Sampling};
use crate::trace::{now, RunTrace, StepKind, StepStatus, TraceStep};

pub use parse::{parse_as, parse_structured, ParseError, SchemaId};
pub use templates::{TemplateError, TemplateRegistry};

use parse::{AnswerOut, CandidatesOut, CritiqueOut, QueriesOut, ReportOut};

pub const DEFAULT_MAX_RETRIES: u32 = 2;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_N_QUERIES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    InitialDoctor,
    QueryGenerator,
    AnswerGenerator,
    FinalDoctor,
    Collaborator,
    Challenger,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::InitialDoctor => "initial_doctor",
            AgentRole::QueryGenerator => "query_generator",
            AgentRole::AnswerGenerator => "answer_generator",
            AgentRole::FinalDoctor => "final_doctor",
            AgentRole::Collaborator => "collaborator",
            AgentRole::Challenger => "challenger",
        }
    }

    /// High for hypothesis and query generation, low for answers bound to
    /// retrieved text, mid for diagnostic reasoning.
    pub fn default_sampling(self) -> Sampling {
        match self {
            AgentRole::InitialDoctor | AgentRole::QueryGenerator | AgentRole::Challenger => Sampling::HIGH,
            AgentRole::AnswerGenerator => Sampling::LOW,
            AgentRole::FinalDoctor | AgentRole::Collaborator => Sampling::MID,
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub role: AgentRole,
    pub sampling: Sampling,
    pub max_tokens: u32,
    pub template_id: String,
    pub max_retries: u32,
}

impl AgentConfig {
    pub fn new(role: AgentRole, template_id: &str) -> Self {
        Self {
            role,
            sampling: role.default_sampling(),
            max_tokens: DEFAULT_MAX_TOKENS,
            template_id: template_id.to_string(),
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }

    pub fn validate(&self, templates: &TemplateRegistry) -> Result<(), AgentError> {
        let s = self.sampling;
        if !(s.temperature.is_finite() && s.temperature >= 0.0) {
            return Err(AgentError::Config(format!("{}: temperature {} must be >= 0", self.role, s.temperature)));
        }
        if !(s.top_p > 0.0 && s.top_p <= 1.0) {
            return Err(AgentError::Config(format!("{}: top_p {} outside (0, 1]", self.role, s.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(AgentError::Config(format!("{}: max_tokens must be positive", self.role)));
        }
        if !templates.contains(&self.template_id) {
            return Err(AgentError::Config(format!("{}: unknown template {:?}", self.role, self.template_id)));
        }
        Ok(())
    }
}

/// Configuration of every agent used by the four topologies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSuite {
    pub initial: AgentConfig,
    pub query: AgentConfig,
    pub answer: AgentConfig,
    pub final_doctor: AgentConfig,
    /// Single-agent topology, and the challenger topology's draft.
    pub single: AgentConfig,
    pub collaborator: AgentConfig,
    pub discuss: AgentConfig,
    pub critique: AgentConfig,
    pub revise: AgentConfig,
}

impl Default for AgentSuite {
    fn default() -> Self {
        Self {
            initial: AgentConfig::new(AgentRole::InitialDoctor, "initial_doctor"),
            query: AgentConfig::new(AgentRole::QueryGenerator, "query_generator"),
            answer: AgentConfig::new(AgentRole::AnswerGenerator, "answer_generator"),
            final_doctor: AgentConfig::new(AgentRole::FinalDoctor, "final_doctor"),
            single: AgentConfig::new(AgentRole::FinalDoctor, "single_doctor"),
            collaborator: AgentConfig::new(AgentRole::Collaborator, "collaborator"),
            discuss: AgentConfig::new(AgentRole::Collaborator, "collaborator_discuss"),
            critique: AgentConfig::new(AgentRole::Challenger, "challenger"),
            revise: AgentConfig::new(AgentRole::FinalDoctor, "revise"),
        }
    }
}

impl AgentSuite {
    pub fn all_mut(&mut self) -> [&mut AgentConfig; 9] {
        [
            &mut self.initial,
            &mut self.query,
            &mut self.answer,
            &mut self.final_doctor,
            &mut self.single,
            &mut self.collaborator,
            &mut self.discuss,
            &mut self.critique,
            &mut self.revise,
        ]
    }

    pub fn all(&self) -> [&AgentConfig; 9] {
        [
            &self.initial,
            &self.query,
            &self.answer,
            &self.final_doctor,
            &self.single,
            &self.collaborator,
            &self.discuss,
            &self.critique,
            &self.revise,
        ]
    }

    pub fn validate(&self, templates: &TemplateRegistry) -> Result<(), AgentError> {
        self.all().into_iter().try_for_each(|c| c.validate(templates))
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{role} output unusable after {attempts} attempts: {reason}")]
    Output {
        role: AgentRole,
        attempts: u32,
        reason: String,
        raw: String,
    },
    #[error("{role}: {source}")]
    Provider { role: AgentRole, source: ProviderError },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("agent config error: {0}")]
    Config(String),
}

/// What a validated reply produced, plus its trace payload.
struct Accepted<T> {
    value: T,
    detail: Value,
}

/// Chat provider, templates and seed shared by the agents of one run.
#[derive(Clone, Copy)]
pub struct Agents<'a> {
    pub provider: &'a dyn ChatProvider,
    pub templates: &'a TemplateRegistry,
    pub seed: Option<u64>,
}

impl<'a> Agents<'a> {
    pub fn new(provider: &'a dyn ChatProvider, templates: &'a TemplateRegistry) -> Self {
        Self {
            provider,
            templates,
            seed: None,
        }
    }

    fn ask<T>(
        &self,
        cfg: &AgentConfig,
        vars: &HashMap<&str, String>,
        step: StepKind,
        trace: &mut RunTrace,
        accept: impl Fn(&str) -> Result<Accepted<T>, String>,
    ) -> Result<T, AgentError> {
        let mut messages = self.templates.render(&cfg.template_id, vars)?;
        let attempts = cfg.max_retries + 1;
        let mut last = (String::new(), String::new());
        for attempt in 1..=attempts {
            let mut req = ChatRequest::new(messages.clone(), cfg.sampling, cfg.max_tokens);
            req.seed = self.seed;
            let request_digest = req.fingerprint();
            let mut record = |status, response_digest, detail| {
                trace.push(TraceStep {
                    step_kind: step,
                    agent_role: Some(cfg.role.to_string()),
                    request_digest: Some(request_digest.clone()),
                    response_digest,
                    timestamp: now(),
                    status,
                    detail,
                })
            };
            let resp = match chat_complete(self.provider, &req) {
                Ok(r) => r,
                Err(source) => {
                    record(StepStatus::Failed, None, json!({"attempts": attempt, "error": source.to_string()}));
                    return Err(AgentError::Provider { role: cfg.role, source });
                }
            };
            let response_digest = short_digest(resp.content.as_bytes());
            match accept(&resp.content) {
                Ok(a) => {
                    record(StepStatus::Ok, Some(response_digest), json!({"attempts": attempt, "output": a.detail}));
                    return Ok(a.value);
                }
                Err(reason) => {
                    log::debug!("{} reply rejected (attempt {attempt}/{attempts}): {reason}", cfg.role);
                    if attempt == attempts {
                        record(
                            StepStatus::Failed,
                            Some(response_digest),
                            json!({"attempts": attempt, "error": reason, "raw": resp.content}),
                        );
                    }
                    messages.push(ChatMessage::assistant(resp.content.clone()));
                    messages.push(ChatMessage::user(format_reminder(&reason)));
                    last = (resp.content, reason);
                }
            }
        }
        Err(AgentError::Output {
            role: cfg.role,
            attempts,
            reason: last.1,
            raw: last.0,
        })
    }

    /// Ten distinct candidate diagnoses for the case.
    pub fn initial_diagnosis(&self, cfg: &AgentConfig, case: &Case, trace: &mut RunTrace) -> Result<CandidateList, AgentError> {
        self.ask(cfg, &case_vars(case), StepKind::InitialDiagnosis, trace, |text| {
            let out: CandidatesOut = parse_as(text, SchemaId::Candidates).map_err(|e| e.to_string())?;
            let list = CandidateList::new(out.candidates).map_err(|e| e.to_string())?;
            Ok(Accepted {
                detail: json!({"candidates": list.as_slice()}),
                value: list,
            })
        })
    }

    /// Exactly `n` question/keyword pairs.
    pub fn generate_queries(
        &self,
        cfg: &AgentConfig,
        case: &Case,
        candidates: &CandidateList,
        n: usize,
        trace: &mut RunTrace,
    ) -> Result<Vec<QueryPair>, AgentError> {
        if n == 0 {
            return Err(AgentError::Config("number of queries must be positive".into()));
        }
        let mut vars = case_vars(case);
        vars.insert("candidates", format_candidates(candidates));
        vars.insert("n", n.to_string());
        self.ask(cfg, &vars, StepKind::GenerateQueries, trace, |text| {
            let out: QueriesOut = parse_as(text, SchemaId::Queries).map_err(|e| e.to_string())?;
            if out.queries.len() != n {
                return Err(format!("expected {n} question/keyword pairs, got {}", out.queries.len()));
            }
            let pairs = out
                .queries
                .into_iter()
                .enumerate()
                .map(|(i, q)| QueryPair::new(q.question, q.keyword).map_err(|e| format!("pair {}: {e}", i + 1)))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Accepted {
                detail: json!({"queries": pairs}),
                value: pairs,
            })
        })
    }

    /// Answers `query` from the retrieved chunks only. With nothing
    /// retrieved the no-evidence sentinel is returned without a provider call.
    pub fn answer_question(
        &self,
        cfg: &AgentConfig,
        query: &QueryPair,
        retrieved: &[ScoredChunk],
        chunk_texts: &[(String, String)],
        trace: &mut RunTrace,
    ) -> Result<EvidenceAnswer, AgentError> {
        if retrieved.is_empty() {
            let answer = EvidenceAnswer::no_evidence(&query.question, &query.keyword);
            trace.note(StepKind::AnswerQuestion, StepStatus::Ok, json!({"sentinel": true, "answer": answer}));
            return Ok(answer);
        }
        let allowed: HashSet<&str> = retrieved.iter().map(|r| r.chunk_id.as_str()).collect();
        let texts: HashMap<&str, &str> = chunk_texts.iter().map(|(id, t)| (id.as_str(), t.as_str())).collect();
        let chunks = retrieved
            .iter()
            .map(|r| format!("[{}] {}", r.chunk_id, texts.get(r.chunk_id.as_str()).copied().unwrap_or("")))
            .collect::<Vec<_>>()
            .join("\n\n");
        let vars = HashMap::from([("question", query.question.clone()), ("chunks", chunks)]);
        self.ask(cfg, &vars, StepKind::AnswerQuestion, trace, |text| {
            let out: AnswerOut = parse_as(text, SchemaId::Answer).map_err(|e| e.to_string())?;
            if let Some(bad) = out.supporting_chunk_ids.iter().find(|id| !allowed.contains(id.as_str())) {
                return Err(format!("cited chunk {bad:?} was not among the retrieved excerpts"));
            }
            let answer = if out.supporting_chunk_ids.is_empty() && out.answer.trim() == NO_EVIDENCE {
                EvidenceAnswer::no_evidence(&query.question, &query.keyword)
            } else {
                EvidenceAnswer::grounded(&query.question, &query.keyword, out.answer.trim(), out.supporting_chunk_ids)
                    .map_err(|e| e.to_string())?
            };
            Ok(Accepted {
                detail: json!({"answer": answer.answer, "supporting_chunk_ids": answer.supporting_chunk_ids}),
                value: answer,
            })
        })
    }

    /// Ranked 1+4 report over the candidates and gathered evidence. The
    /// evidence is attached to the report verbatim.
    pub fn final_diagnosis(
        &self,
        cfg: &AgentConfig,
        case: &Case,
        candidates: &CandidateList,
        evidence: Vec<EvidenceAnswer>,
        trace: &mut RunTrace,
    ) -> Result<DiagnosisReport, AgentError> {
        let mut vars = case_vars(case);
        vars.insert("candidates", format_candidates(candidates));
        vars.insert("evidence", format_evidence(&evidence));
        self.report(cfg, vars, StepKind::FinalDiagnosis, case, evidence, trace)
    }

    /// A 1+4 report from a template taking the case plus `extra` values.
    pub fn diagnose(
        &self,
        cfg: &AgentConfig,
        case: &Case,
        extra: &[(&'static str, String)],
        step: StepKind,
        trace: &mut RunTrace,
    ) -> Result<DiagnosisReport, AgentError> {
        let mut vars = case_vars(case);
        vars.extend(extra.iter().cloned());
        self.report(cfg, vars, step, case, Vec::new(), trace)
    }

    fn report(
        &self,
        cfg: &AgentConfig,
        vars: HashMap<&str, String>,
        step: StepKind,
        case: &Case,
        evidence: Vec<EvidenceAnswer>,
        trace: &mut RunTrace,
    ) -> Result<DiagnosisReport, AgentError> {
        let trace_id = trace.trace_id.clone();
        self.ask(cfg, &vars, step, trace, |text| {
            let out: ReportOut = parse_as(text, SchemaId::Report).map_err(|e| e.to_string())?;
            let ranked: Vec<RankedLabel> = std::iter::once(out.primary)
                .chain(out.differentials)
                .map(|l| RankedLabel {
                    label: l.label,
                    confidence: l.confidence,
                })
                .collect();
            let report = DiagnosisReport::new(&case.id, ranked, evidence.clone(), &trace_id).map_err(|e| e.to_string())?;
            Ok(Accepted {
                detail: json!({"ranked": report.ranked()}),
                value: report,
            })
        })
    }

    /// The challenger's objections to a draft report; may be empty.
    pub fn critique(
        &self,
        cfg: &AgentConfig,
        case: &Case,
        draft: &DiagnosisReport,
        trace: &mut RunTrace,
    ) -> Result<Vec<String>, AgentError> {
        let mut vars = case_vars(case);
        vars.insert("draft", format_report(draft));
        self.ask(cfg, &vars, StepKind::Critique, trace, |text| {
            let out: CritiqueOut = parse_as(text, SchemaId::Critique).map_err(|e| e.to_string())?;
            let objections: Vec<String> = out
                .objections
                .into_iter()
                .map(|o| o.trim().to_string())
                .filter(|o| !o.is_empty())
                .collect();
            Ok(Accepted {
                detail: json!({"objections": objections}),
                value: objections,
            })
        })
    }
}

fn format_reminder(reason: &str) -> String {
    format!(
        "Your previous reply could not be used: {reason}. Reply again with only the JSON described above, \
         following the required format exactly."
    )
}

fn case_vars(case: &Case) -> HashMap<&'static str, String> {
    let clinical = if case.clinical_data.trim().is_empty() {
        "(none provided)".to_string()
    } else {
        case.clinical_data.clone()
    };
    HashMap::from([("caption", case.caption.clone()), ("clinical_data", clinical)])
}

pub fn format_candidates(candidates: &CandidateList) -> String {
    candidates
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {c}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn format_evidence(evidence: &[EvidenceAnswer]) -> String {
    if evidence.is_empty() {
        return "(none)".to_string();
    }
    evidence
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let cites = if e.supporting_chunk_ids.is_empty() {
                String::new()
            } else {
                format!(" [{}]", e.supporting_chunk_ids.join(", "))
            };
            format!("{}. Q: {} (keyword: {})\n   A: {}{cites}", i + 1, e.question, e.keyword, e.answer)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn format_report(report: &DiagnosisReport) -> String {
    let ranked = report.ranked();
    let mut lines = vec![format!("Primary: {} (confidence {})", ranked[0].label, ranked[0].confidence)];
    for (i, r) in ranked.iter().enumerate().skip(1) {
        lines.push(format!("Differential {i}: {} (confidence {})", r.label, r.confidence));
    }
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::ScriptedProvider;
    use crate::trace::Topology;

    pub(crate) fn case() -> Case {
        Case {
            id: "c1".into(),
            caption: "Ring-enhancing lesion crossing the corpus callosum.".into(),
            clinical_data: "62-year-old with headaches.".into(),
            truth_label: "glioblastoma".into(),
            paraphrase_id: 0,
        }
    }

    fn candidates_json(n: usize) -> String {
        let c: Vec<String> = (0..n).map(|i| format!("diagnosis {i}")).collect();
        json!({"candidates": c}).to_string()
    }

    fn report_json(labels: &[&str], conf: &[f64]) -> String {
        let mut it = labels.iter().zip(conf).map(|(l, c)| json!({"label": l, "confidence": c}));
        let primary = it.next().unwrap();
        json!({"primary": primary, "differentials": it.collect::<Vec<_>>()}).to_string()
    }

    fn run<T>(
        responses: Vec<String>,
        f: impl FnOnce(&Agents, &mut RunTrace) -> Result<T, AgentError>,
    ) -> (Result<T, AgentError>, RunTrace, usize) {
        let provider = ScriptedProvider::from_responses(responses);
        let templates = TemplateRegistry::builtin();
        let agents = Agents::new(&provider, &templates);
        let mut trace = RunTrace::new(Topology::Radar, "c1", 0);
        let out = f(&agents, &mut trace);
        (out, trace, provider.calls())
    }

    #[test]
    fn initial_diagnosis_parses_ten() {
        let cfg = AgentSuite::default().initial;
        let (out, trace, calls) = run(vec![format!("Sure:\n```json\n{}\n```", candidates_json(10))], |a, t| {
            a.initial_diagnosis(&cfg, &case(), t)
        });
        let list = out.unwrap();
        assert_eq!(list.as_slice().len(), 10);
        assert_eq!(list.as_slice()[0], "diagnosis 0");
        assert_eq!(calls, 1);
        assert_eq!(trace.kinds(), [StepKind::InitialDiagnosis]);
        assert_eq!(trace.steps[0].agent_role.as_deref(), Some("initial_doctor"));
    }

    #[test]
    fn short_candidate_list_is_reasked_then_fails() {
        let cfg = AgentSuite::default().initial;
        let (out, trace, calls) = run(vec![candidates_json(8); 3], |a, t| a.initial_diagnosis(&cfg, &case(), t));
        match out {
            Err(AgentError::Output { attempts, reason, raw, .. }) => {
                assert_eq!(attempts, 3);
                assert!(reason.contains("expected 10 candidates"), "{reason}");
                assert!(raw.contains("diagnosis 7"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(calls, 3);
        assert_eq!(trace.steps.last().unwrap().status, StepStatus::Failed);
    }

    #[test]
    fn duplicate_candidates_are_reasked() {
        let cfg = AgentSuite::default().initial;
        let mut dup: Vec<String> = (0..9).map(|i| format!("d{i}")).collect();
        dup.push("D0".into());
        let (out, trace, calls) = run(vec![json!({"candidates": dup}).to_string(), candidates_json(10)], |a, t| {
            a.initial_diagnosis(&cfg, &case(), t)
        });
        assert!(out.is_ok());
        assert_eq!(calls, 2);
        assert_eq!(trace.steps[0].detail["attempts"], 2);
    }

    #[test]
    fn reask_appends_reply_and_reminder() {
        let provider = ScriptedProvider::from_responses(["nonsense", &candidates_json(10)]);
        let recorder = crate::provider::RecordingProvider::new(std::sync::Arc::new(provider));
        let templates = TemplateRegistry::builtin();
        let agents = Agents::new(&recorder, &templates);
        let mut trace = RunTrace::new(Topology::Radar, "c1", 0);
        agents.initial_diagnosis(&AgentSuite::default().initial, &case(), &mut trace).unwrap();
        // two distinct requests were made, the second one longer
        assert_eq!(recorder.script().len(), 2);
    }

    #[test]
    fn queries_must_match_n() {
        let cfg = AgentSuite::default().query;
        let cands = CandidateList::new((0..10).map(|i| format!("d{i}")).collect()).unwrap();
        let pairs = |n: usize, empty_kw: bool| {
            let q: Vec<Value> = (0..n)
                .map(|i| json!({"question": format!("q{i}?"), "keyword": if empty_kw && i == 0 { "".to_string() } else { format!("k{i}") }}))
                .collect();
            json!({"queries": q}).to_string()
        };
        let (out, _, _) = run(vec![pairs(5, false)], |a, t| a.generate_queries(&cfg, &case(), &cands, 5, t));
        assert_eq!(out.unwrap()[4], QueryPair::new("q4?", "k4").unwrap());

        let (out, _, calls) = run(vec![pairs(3, false); 3], |a, t| a.generate_queries(&cfg, &case(), &cands, 5, t));
        assert!(matches!(out, Err(AgentError::Output { .. })));
        assert_eq!(calls, 3);

        let (out, _, calls) = run(vec![pairs(5, true), pairs(5, false)], |a, t| {
            a.generate_queries(&cfg, &case(), &cands, 5, t)
        });
        assert!(out.is_ok());
        assert_eq!(calls, 2);
    }

    fn retrieved(ids: &[&str]) -> (Vec<ScoredChunk>, Vec<(String, String)>) {
        let hits = ids
            .iter()
            .map(|id| ScoredChunk {
                chunk_id: id.to_string(),
                score: 0.5,
                keyword: "glioma".into(),
            })
            .collect();
        let texts = ids.iter().map(|id| (id.to_string(), format!("text of {id}"))).collect();
        (hits, texts)
    }

    #[test]
    fn answers_are_grounded() {
        let cfg = AgentSuite::default().answer;
        let q = QueryPair::new("Does it cross the midline?", "glioblastoma").unwrap();
        let (hits, texts) = retrieved(&["a#0", "a#1", "b#0", "b#1", "c#0"]);
        let good = json!({"answer": "Yes, often.", "supporting_chunk_ids": ["a#1", "c#0"]}).to_string();
        let (out, _, _) = run(vec![good.clone()], |a, t| a.answer_question(&cfg, &q, &hits, &texts, t));
        assert_eq!(out.unwrap().supporting_chunk_ids, ["a#1", "c#0"]);

        let bad = json!({"answer": "Yes.", "supporting_chunk_ids": ["z#9"]}).to_string();
        let (out, trace, calls) = run(vec![bad, good], |a, t| a.answer_question(&cfg, &q, &hits, &texts, t));
        assert!(out.is_ok());
        assert_eq!(calls, 2);
        assert_eq!(trace.steps.len(), 1);

        let sentinel = json!({"answer": NO_EVIDENCE, "supporting_chunk_ids": []}).to_string();
        let (out, _, _) = run(vec![sentinel], |a, t| a.answer_question(&cfg, &q, &hits, &texts, t));
        assert!(out.unwrap().is_sentinel());
    }

    #[test]
    fn empty_retrieval_skips_provider() {
        let cfg = AgentSuite::default().answer;
        let q = QueryPair::new("q?", "k").unwrap();
        let (out, trace, calls) = run(vec![], |a, t| a.answer_question(&cfg, &q, &[], &[], t));
        assert!(out.unwrap().is_sentinel());
        assert_eq!(calls, 0);
        assert_eq!(trace.provider_steps(), 0);
        assert_eq!(trace.kinds(), [StepKind::AnswerQuestion]);
    }

    #[test]
    fn final_report_contract() {
        let cfg = AgentSuite::default().final_doctor;
        let cands = CandidateList::new((0..10).map(|i| format!("d{i}")).collect()).unwrap();
        let labels = ["glioblastoma", "metastasis", "lymphoma", "abscess", "tumefactive demyelination"];
        let ok = report_json(&labels, &[0.6, 0.2, 0.1, 0.06, 0.04]);
        let ev = vec![EvidenceAnswer::no_evidence("q", "k")];
        let (out, _, _) = run(vec![ok.clone()], |a, t| a.final_diagnosis(&cfg, &case(), &cands, ev.clone(), t));
        let r = out.unwrap();
        assert_eq!(r.primary, "glioblastoma");
        assert_eq!(r.confidences, [0.6, 0.2, 0.1, 0.06, 0.04]);
        assert_eq!(r.evidence, ev);
        assert_eq!(r.case_id, "c1");

        let unordered = report_json(&labels, &[0.2, 0.6, 0.1, 0.06, 0.04]);
        let (out, _, calls) = run(vec![unordered, ok], |a, t| a.final_diagnosis(&cfg, &case(), &cands, vec![], t));
        assert!(out.is_ok());
        assert_eq!(calls, 2);

        let four = report_json(&labels[..4], &[0.6, 0.2, 0.1, 0.06]);
        let (out, _, _) = run(vec![four; 3], |a, t| a.final_diagnosis(&cfg, &case(), &cands, vec![], t));
        assert!(matches!(out, Err(AgentError::Output { .. })));
    }

    #[test]
    fn provider_failure_is_recorded() {
        let cfg = AgentSuite::default().single;
        let (out, trace, _) = run(vec![], |a, t| a.diagnose(&cfg, &case(), &[], StepKind::SingleDiagnosis, t));
        assert!(matches!(out, Err(AgentError::Provider { .. })));
        assert_eq!(trace.steps[0].status, StepStatus::Failed);
    }

    #[test]
    fn suite_validation() {
        let templates = TemplateRegistry::builtin();
        let mut suite = AgentSuite::default();
        suite.validate(&templates).unwrap();
        suite.answer.template_id = "missing".into();
        assert!(suite.validate(&templates).is_err());
        let mut suite = AgentSuite::default();
        suite.query.sampling.temperature = -0.1;
        assert!(suite.validate(&templates).is_err());
    }
}
