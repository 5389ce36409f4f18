//! The four diagnostic configurations: single agent, collaborative panel,
//! doctor plus challenger, and the retrieval-augmented pipeline. Each maps a
//! case to a report and a full trace.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::agents::{format_report, AgentError, AgentSuite, Agents, DEFAULT_N_QUERIES};
use crate::domain::{canonical_fold, Case, DiagnosisReport, EvidenceAnswer, RankedLabel, ValidationError, REPORT_SLOTS};
use crate::index::DEFAULT_TOP_K;
use crate::kb::{DocumentSource, Hit, KnowledgeBase};
use crate::provider::{embed_text, Embedder};
use crate::trace::{RunTrace, StepKind, StepStatus, Topology};

pub const DEFAULT_COLLAB_AGENTS: usize = 3;
pub const DEFAULT_COLLAB_ROUNDS: usize = 2;

/// Which indexed chunks a question may be answered from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalScope {
    /// Everything in the knowledge base.
    #[default]
    Global,
    /// Only chunks of documents fetched for the question's own keyword.
    Keyword,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySettings {
    pub n_queries: usize,
    pub top_k: usize,
    pub collab_agents: usize,
    pub collab_max_rounds: usize,
    pub retrieval_scope: RetrievalScope,
}

impl Default for TopologySettings {
    fn default() -> Self {
        Self {
            n_queries: DEFAULT_N_QUERIES,
            top_k: DEFAULT_TOP_K,
            collab_agents: DEFAULT_COLLAB_AGENTS,
            collab_max_rounds: DEFAULT_COLLAB_ROUNDS,
            retrieval_scope: RetrievalScope::Global,
        }
    }
}

impl TopologySettings {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut violations = Vec::new();
        if self.n_queries == 0 {
            violations.push("n_queries must be positive".to_string());
        }
        if self.top_k == 0 {
            violations.push("top_k must be positive".to_string());
        }
        if self.collab_agents < 2 {
            violations.push("collaborative topology needs at least 2 agents".to_string());
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ValidationError { violations })
        }
    }
}

/// Knowledge base plus the source and embedder that feed it.
#[derive(Clone, Copy)]
pub struct Retrieval<'a> {
    pub kb: &'a KnowledgeBase,
    pub source: &'a dyn DocumentSource,
    pub embedder: &'a dyn Embedder,
}

#[derive(Clone, Copy)]
pub struct Runner<'a> {
    pub agents: Agents<'a>,
    pub suite: &'a AgentSuite,
    pub settings: TopologySettings,
    /// Required by the retrieval-augmented topology only.
    pub retrieval: Option<Retrieval<'a>>,
}

/// A failed case run with everything traced up to the failure.
#[derive(Debug, Error)]
#[error("case {}: {error}", trace.case_id)]
pub struct RunFailure {
    pub error: AgentError,
    pub trace: RunTrace,
}

pub type RunResult = Result<(DiagnosisReport, RunTrace), Box<RunFailure>>;

fn finish(trace: RunTrace, out: Result<DiagnosisReport, AgentError>) -> RunResult {
    match out {
        Ok(report) => Ok((report, trace)),
        Err(error) => Err(Box::new(RunFailure { error, trace })),
    }
}

impl Runner<'_> {
    pub fn run(&self, topology: Topology, case: &Case) -> RunResult {
        match topology {
            Topology::Single => self.run_single(case),
            Topology::Collaborative => self.run_collaborative(case),
            Topology::Challenger => self.run_challenger(case),
            Topology::Radar => self.run_radar(case),
        }
    }

    /// One doctor call, no candidates and no evidence.
    pub fn run_single(&self, case: &Case) -> RunResult {
        let mut trace = RunTrace::new(Topology::Single, &case.id, case.paraphrase_id);
        let out = self.agents.diagnose(&self.suite.single, case, &[], StepKind::SingleDiagnosis, &mut trace);
        finish(trace, out)
    }

    /// Independent reports, then discussion rounds until every primary
    /// agrees; without agreement the final rankings are Borda-aggregated.
    pub fn run_collaborative(&self, case: &Case) -> RunResult {
        let mut trace = RunTrace::new(Topology::Collaborative, &case.id, case.paraphrase_id);
        let out = self.collaborate(case, &mut trace);
        finish(trace, out)
    }

    fn collaborate(&self, case: &Case, trace: &mut RunTrace) -> Result<DiagnosisReport, AgentError> {
        let n = self.settings.collab_agents;
        if n < 2 {
            return Err(AgentError::Config("collaborative topology needs at least 2 agents".into()));
        }
        let ident = |i: usize| [("agent", (i + 1).to_string()), ("n_agents", n.to_string())];
        let mut reports = Vec::with_capacity(n);
        for i in 0..n {
            reports.push(self.agents.diagnose(&self.suite.collaborator, case, &ident(i), StepKind::CollabInitial, trace)?);
        }
        for round in 0..=self.settings.collab_max_rounds {
            if round > 0 {
                let previous = reports.clone();
                for (i, slot) in reports.iter_mut().enumerate() {
                    let others = previous
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(j, r)| format!("Doctor {}:\n{}", j + 1, format_report(r)))
                        .collect::<Vec<_>>()
                        .join("\n\n");
                    let mut extra = ident(i).to_vec();
                    extra.push(("round", round.to_string()));
                    extra.push(("own_report", format_report(&previous[i])));
                    extra.push(("reports", others));
                    *slot = self.agents.diagnose(&self.suite.discuss, case, &extra, StepKind::CollabDiscuss, trace)?;
                }
            }
            if consensus(&reports) {
                trace.note(
                    StepKind::Consensus,
                    StepStatus::Ok,
                    json!({"round": round, "primary": reports[0].primary}),
                );
                return Ok(reports.swap_remove(0));
            }
        }
        let rankings: Vec<Vec<String>> = reports.iter().map(|r| r.labels().map(str::to_string).collect()).collect();
        let ranked = borda(&rankings).map_err(|e| AgentError::Config(e.to_string()))?;
        trace.note(StepKind::Borda, StepStatus::Ok, json!({"rounds": self.settings.collab_max_rounds, "ranked": ranked}));
        DiagnosisReport::new(&case.id, ranked, Vec::new(), &trace.trace_id).map_err(|e| AgentError::Config(e.to_string()))
    }

    /// Draft, critique, and one revision. An empty critique returns the
    /// draft unchanged.
    pub fn run_challenger(&self, case: &Case) -> RunResult {
        let mut trace = RunTrace::new(Topology::Challenger, &case.id, case.paraphrase_id);
        let out = (|| {
            let draft = self.agents.diagnose(&self.suite.single, case, &[], StepKind::Draft, &mut trace)?;
            let objections = self.agents.critique(&self.suite.critique, case, &draft, &mut trace)?;
            if objections.is_empty() {
                return Ok(draft);
            }
            let critique = objections.iter().map(|o| format!("- {o}")).collect::<Vec<_>>().join("\n");
            let extra = [("draft", format_report(&draft)), ("critique", critique)];
            self.agents.diagnose(&self.suite.revise, case, &extra, StepKind::Revise, &mut trace)
        })();
        finish(trace, out)
    }

    /// Initial diagnosis, query generation, per-question retrieval and
    /// answering, then the final diagnosis. A question whose retrieval fails
    /// gets the no-evidence sentinel and the run continues.
    pub fn run_radar(&self, case: &Case) -> RunResult {
        let mut trace = RunTrace::new(Topology::Radar, &case.id, case.paraphrase_id);
        let out = self.radar(case, &mut trace);
        finish(trace, out)
    }

    fn radar(&self, case: &Case, trace: &mut RunTrace) -> Result<DiagnosisReport, AgentError> {
        let r = self
            .retrieval
            .ok_or_else(|| AgentError::Config("retrieval-augmented topology needs a knowledge base".into()))?;
        let s = &self.suite;
        let candidates = self.agents.initial_diagnosis(&s.initial, case, trace)?;
        let queries = self.agents.generate_queries(&s.query, case, &candidates, self.settings.n_queries, trace)?;
        let mut evidence = Vec::with_capacity(queries.len());
        for q in &queries {
            match r.kb.lookup_or_fetch(&q.keyword, r.source, r.embedder) {
                Ok(outcome) => {
                    let kind = match outcome.hit {
                        Hit::Internal => StepKind::KbHit,
                        Hit::Fetched => StepKind::KbFetch,
                    };
                    trace.note(kind, StepStatus::Ok, json!({"keyword": outcome.keyword, "new_docs": outcome.new_docs}));
                }
                Err(e) => {
                    log::warn!("case {}: retrieval for {:?} failed: {e}", case.id, q.keyword);
                    trace.note(StepKind::KbFetchFailed, StepStatus::Failed, json!({"keyword": q.keyword, "error": e.to_string()}));
                    let answer = EvidenceAnswer::no_evidence(&q.question, &q.keyword);
                    trace.note(StepKind::AnswerQuestion, StepStatus::Ok, json!({"sentinel": true, "answer": answer}));
                    evidence.push(answer);
                    continue;
                }
            }
            let scope = match self.settings.retrieval_scope {
                RetrievalScope::Global => None,
                RetrievalScope::Keyword => Some(std::slice::from_ref(&q.keyword)),
            };
            let retrieved = embed_text(r.embedder, &q.question)
                .map_err(|e| e.to_string())
                .and_then(|v| r.kb.search(&v, self.settings.top_k, scope).map_err(|e| e.to_string()));
            let retrieved = match retrieved {
                Ok(hits) => {
                    trace.note(
                        StepKind::Retrieve,
                        StepStatus::Ok,
                        json!({"question": q.question, "chunk_ids": hits.iter().map(|h| &h.chunk_id).collect::<Vec<_>>(),
                               "scores": hits.iter().map(|h| h.score).collect::<Vec<_>>()}),
                    );
                    hits
                }
                Err(e) => {
                    trace.note(StepKind::Retrieve, StepStatus::Failed, json!({"question": q.question, "error": e}));
                    Vec::new()
                }
            };
            let ids: Vec<String> = retrieved.iter().map(|h| h.chunk_id.clone()).collect();
            let texts = r.kb.chunk_texts(&ids);
            evidence.push(self.agents.answer_question(&s.answer, q, &retrieved, &texts, trace)?);
        }
        self.agents.final_diagnosis(&s.final_doctor, case, &candidates, evidence, trace)
    }
}

fn consensus(reports: &[DiagnosisReport]) -> bool {
    let mut primaries = reports.iter().map(|r| canonical_fold(&r.primary).unwrap_or_default());
    let first = primaries.next();
    primaries.all(|p| Some(p) == first)
}

/// Borda count over five-slot rankings: slot 1 earns 5 points down to 1 for
/// slot 5. Labels are compared after folding and spelled as first seen.
/// Ties go to the label seen first, scanning agents in order and each
/// ranking top-down. Confidence is the score over the maximum possible.
pub fn borda(rankings: &[Vec<String>]) -> Result<Vec<RankedLabel>, ValidationError> {
    if rankings.is_empty() {
        return Err(ValidationError::new("no rankings to aggregate"));
    }
    let mut order: Vec<(String, String)> = Vec::new();
    let mut scores: HashMap<String, usize> = HashMap::new();
    for ranking in rankings {
        for (slot, label) in ranking.iter().take(REPORT_SLOTS).enumerate() {
            let key = canonical_fold(label)?;
            let points = REPORT_SLOTS - slot;
            match scores.get_mut(&key) {
                Some(s) => *s += points,
                None => {
                    scores.insert(key.clone(), points);
                    order.push((key, label.trim().to_string()));
                }
            }
        }
    }
    if order.len() < REPORT_SLOTS {
        return Err(ValidationError::new(format!("only {} distinct labels to rank", order.len())));
    }
    // stable sort keeps first-seen order among equal scores
    order.sort_by(|a, b| scores[&b.0].cmp(&scores[&a.0]));
    let max = (REPORT_SLOTS * rankings.len()) as f64;
    Ok(order
        .into_iter()
        .take(REPORT_SLOTS)
        .map(|(key, label)| RankedLabel {
            label,
            confidence: scores[&key] as f64 / max,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::TemplateRegistry;
    use crate::chunking::ChunkParams;
    use crate::domain::{CANDIDATE_COUNT, NO_EVIDENCE};
    use crate::kb::tests_support::corpus;
    use crate::kb::FixtureSource;
    use crate::provider::{HashEmbedder, RetryPolicy, ScriptedProvider};

    fn case(id: &str) -> Case {
        Case {
            id: id.into(),
            caption: "Ring-enhancing lesion crossing the corpus callosum.".into(),
            clinical_data: "62-year-old with headaches.".into(),
            truth_label: "glioblastoma".into(),
            paraphrase_id: 0,
        }
    }

    fn report(labels: &[&str]) -> String {
        let conf = [0.5, 0.2, 0.15, 0.1, 0.05];
        let mut it = labels.iter().zip(conf).map(|(l, c)| json!({"label": l, "confidence": c}));
        let primary = it.next().unwrap();
        json!({"primary": primary, "differentials": it.collect::<Vec<_>>()}).to_string()
    }

    const ABCDE: [&str; 5] = ["A", "B", "C", "D", "E"];
    const BACDE: [&str; 5] = ["B", "A", "C", "D", "E"];

    fn with_runner<T>(
        responses: Vec<String>,
        settings: TopologySettings,
        retrieval: Option<Retrieval>,
        f: impl FnOnce(&Runner) -> T,
    ) -> (T, usize) {
        let provider = ScriptedProvider::from_responses(responses);
        let templates = TemplateRegistry::builtin();
        let suite = AgentSuite::default();
        let runner = Runner {
            agents: Agents::new(&provider, &templates),
            suite: &suite,
            settings,
            retrieval,
        };
        let out = f(&runner);
        (out, provider.calls())
    }

    #[test]
    fn borda_example() {
        let r = |l: [&str; 5]| l.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let ranked = borda(&[r(ABCDE), r(ABCDE), r(BACDE)]).unwrap();
        let labels: Vec<&str> = ranked.iter().map(|x| x.label.as_str()).collect();
        assert_eq!(labels, ABCDE);
        assert_eq!(ranked[0].confidence, 14.0 / 15.0);
        assert_eq!(ranked[1].confidence, 13.0 / 15.0);
        // A and B tie at 9 with two agents; A was seen first
        let tie = borda(&[r(ABCDE), r(BACDE)]).unwrap();
        assert_eq!(tie[0].label, "A");
        assert_eq!(tie[0].confidence, tie[1].confidence);
        // folding merges spellings
        let merged = borda(&[r(["a", "B", "C", "D", "E"]), r(BACDE)]).unwrap();
        assert_eq!(merged[0].label, "a");
        assert!(borda(&[]).is_err());
    }

    #[test]
    fn single_topology() {
        let (out, calls) = with_runner(vec![report(&ABCDE)], TopologySettings::default(), None, |r| {
            r.run_single(&case("c1"))
        });
        let (rep, trace) = out.unwrap();
        assert_eq!(rep.primary, "A");
        assert_eq!(rep.trace_id, trace.trace_id);
        assert_eq!(trace.kinds(), [StepKind::SingleDiagnosis]);
        assert_eq!(calls, 1);

        let (out, _) = with_runner(vec![], TopologySettings::default(), None, |r| r.run_single(&case("c1")));
        let failure = out.unwrap_err();
        assert_eq!(failure.trace.steps[0].status, StepStatus::Failed);
    }

    #[test]
    fn collaborative_consensus_at_round_zero() {
        let resp = vec![report(&ABCDE), report(&["a", "C", "B", "D", "E"]), report(&ABCDE)];
        let (out, calls) = with_runner(resp, TopologySettings::default(), None, |r| r.run_collaborative(&case("c1")));
        let (rep, trace) = out.unwrap();
        assert_eq!(rep.primary, "A");
        assert_eq!(calls, 3);
        assert_eq!(trace.kinds(), [StepKind::CollabInitial, StepKind::CollabInitial, StepKind::CollabInitial, StepKind::Consensus]);
    }

    #[test]
    fn collaborative_converges_after_discussion() {
        let resp = vec![report(&ABCDE), report(&ABCDE), report(&BACDE), report(&ABCDE), report(&ABCDE), report(&ABCDE)];
        let (out, calls) = with_runner(resp, TopologySettings::default(), None, |r| r.run_collaborative(&case("c1")));
        let (rep, trace) = out.unwrap();
        assert_eq!(rep.primary, "A");
        assert_eq!(calls, 6);
        assert_eq!(trace.kinds().iter().filter(|k| **k == StepKind::CollabDiscuss).count(), 3);
        assert_eq!(trace.steps.last().unwrap().detail["round"], 1);
    }

    #[test]
    fn collaborative_falls_back_to_borda() {
        let rounds = 1 + DEFAULT_COLLAB_ROUNDS;
        let resp: Vec<String> = (0..rounds).flat_map(|_| [report(&ABCDE), report(&ABCDE), report(&BACDE)]).collect();
        let (out, calls) = with_runner(resp, TopologySettings::default(), None, |r| r.run_collaborative(&case("c1")));
        let (rep, trace) = out.unwrap();
        assert_eq!(calls, 9);
        assert_eq!(rep.primary, "A");
        assert_eq!(rep.differentials, ["B", "C", "D", "E"]);
        assert_eq!(rep.confidences[0], 14.0 / 15.0);
        assert_eq!(*trace.kinds().last().unwrap(), StepKind::Borda);
    }

    #[test]
    fn challenger_revises() {
        let resp = vec![
            report(&ABCDE),
            json!({"objections": ["B explains the callosal involvement better"]}).to_string(),
            report(&BACDE),
        ];
        let (out, _) = with_runner(resp, TopologySettings::default(), None, |r| r.run_challenger(&case("c1")));
        let (rep, trace) = out.unwrap();
        assert_eq!(rep.primary, "B");
        assert_eq!(trace.kinds(), [StepKind::Draft, StepKind::Critique, StepKind::Revise]);
        assert_eq!(trace.provider_steps(), 3);
    }

    #[test]
    fn challenger_without_objections_keeps_draft() {
        let resp = vec![report(&ABCDE), json!({"objections": []}).to_string()];
        let (out, calls) = with_runner(resp, TopologySettings::default(), None, |r| r.run_challenger(&case("c1")));
        let (rep, trace) = out.unwrap();
        assert_eq!(rep.labels().collect::<Vec<_>>(), ABCDE);
        assert_eq!(calls, 2);
        assert_eq!(trace.kinds(), [StepKind::Draft, StepKind::Critique]);
    }

    fn radar_script(keywords: &[&str]) -> Vec<String> {
        let cands: Vec<String> = (0..CANDIDATE_COUNT).map(|i| format!("candidate {i}")).collect();
        let queries: Vec<_> = keywords
            .iter()
            .enumerate()
            .map(|(i, k)| json!({"question": format!("What does {k} look like ({i})?"), "keyword": k}))
            .collect();
        let mut out = vec![json!({"candidates": cands}).to_string(), json!({"queries": queries}).to_string()];
        for _ in keywords {
            out.push(json!({"answer": NO_EVIDENCE, "supporting_chunk_ids": []}).to_string());
        }
        out.push(report(&ABCDE));
        out
    }

    #[test]
    fn radar_pipeline_order_and_degradation() {
        let mut docs = corpus("glioblastoma", 5, 5);
        docs.extend(corpus("lymphoma", 5, 5));
        let source = FixtureSource::from_documents(docs).unwrap().with_failing_keywords(["lymphoma"]);
        let embedder = HashEmbedder::new(64);
        let kb = KnowledgeBase::new(
            64,
            ChunkParams::default(),
            RetryPolicy {
                max_attempts: 2,
                base_delay_ms: 0,
            },
        )
        .unwrap();
        let retrieval = Retrieval {
            kb: &kb,
            source: &source,
            embedder: &embedder,
        };
        let keywords = ["glioblastoma", "GLIOBLASTOMA", "lymphoma", "glioblastoma", "glioblastoma"];
        // the failed keyword gets no answer call
        let mut script = radar_script(&keywords);
        script.remove(4);
        let (out, calls) = with_runner(script, TopologySettings::default(), Some(retrieval), |r| r.run_radar(&case("c1")));
        let (rep, trace) = out.unwrap();
        assert_eq!(calls, 2 + 4 + 1);
        use StepKind::*;
        assert_eq!(
            trace.kinds(),
            [
                InitialDiagnosis, GenerateQueries,
                KbFetch, Retrieve, AnswerQuestion,
                KbHit, Retrieve, AnswerQuestion,
                KbFetchFailed, AnswerQuestion,
                KbHit, Retrieve, AnswerQuestion,
                KbHit, Retrieve, AnswerQuestion,
                FinalDiagnosis,
            ]
        );
        assert_eq!(rep.evidence.len(), 5);
        assert!(rep.evidence[2].is_sentinel());
        for step in trace.steps.iter().filter(|s| s.step_kind == Retrieve) {
            assert_eq!(step.detail["chunk_ids"].as_array().unwrap().len(), 5);
        }
        assert!(!kb.contains_keyword("lymphoma"));
    }

    #[test]
    fn keyword_scope_limits_retrieval() {
        let source = FixtureSource::from_documents(corpus("glioblastoma", 2, 1)).unwrap();
        let embedder = HashEmbedder::new(64);
        let kb = KnowledgeBase::new(64, ChunkParams::default(), RetryPolicy::default()).unwrap();
        let retrieval = Retrieval {
            kb: &kb,
            source: &source,
            embedder: &embedder,
        };
        let settings = TopologySettings {
            retrieval_scope: RetrievalScope::Keyword,
            ..Default::default()
        };
        let keywords = ["glioblastoma", "unknown", "glioblastoma", "unknown", "glioblastoma"];
        // "unknown" fetches nothing, so its scoped search is empty and no answer call is made
        let mut script = radar_script(&keywords);
        script.remove(5);
        script.remove(3);
        let (out, calls) = with_runner(script, settings, Some(retrieval), |r| r.run_radar(&case("c1")));
        let (rep, trace) = out.unwrap();
        assert_eq!(calls, 2 + 3 + 1);
        assert!(rep.evidence[1].is_sentinel());
        let retrieved: Vec<usize> = trace
            .steps
            .iter()
            .filter(|s| s.step_kind == StepKind::Retrieve)
            .map(|s| s.detail["chunk_ids"].as_array().unwrap().len())
            .collect();
        assert_eq!(retrieved, [3, 0, 3, 0, 3]);
    }

    #[test]
    fn radar_requires_retrieval() {
        let (out, _) = with_runner(vec![], TopologySettings::default(), None, |r| r.run(Topology::Radar, &case("c1")));
        assert!(matches!(out.unwrap_err().error, AgentError::Config(_)));
    }

    #[test]
    fn settings_validation() {
        TopologySettings::default().validate().unwrap();
        let bad = TopologySettings {
            collab_agents: 1,
            top_k: 0,
            ..Default::default()
        };
        assert_eq!(bad.validate().unwrap_err().violations.len(), 2);
    }
}
