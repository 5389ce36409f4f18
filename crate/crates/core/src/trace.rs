//! Execution traces: one ordered record per agent call or knowledge-base
//! action taken while diagnosing a case.

use std::fmt;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::provider::short_digest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Single,
    Collaborative,
    Challenger,
    Radar,
}

impl Topology {
    pub const ALL: [Topology; 4] = [Topology::Single, Topology::Collaborative, Topology::Challenger, Topology::Radar];

    pub fn as_str(self) -> &'static str {
        match self {
            Topology::Single => "single",
            Topology::Collaborative => "collaborative",
            Topology::Challenger => "challenger",
            Topology::Radar => "radar",
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Topology::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown topology {s:?} (expected single, collaborative, challenger or radar)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    InitialDiagnosis,
    GenerateQueries,
    KbHit,
    KbFetch,
    KbFetchFailed,
    Retrieve,
    AnswerQuestion,
    FinalDiagnosis,
    SingleDiagnosis,
    CollabInitial,
    CollabDiscuss,
    Consensus,
    Borda,
    Draft,
    Critique,
    Revise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step_kind: StepKind,
    /// Agent role for provider calls, `None` for knowledge-base and
    /// aggregation steps.
    pub agent_role: Option<String>,
    pub request_digest: Option<String>,
    pub response_digest: Option<String>,
    pub timestamp: String,
    pub status: StepStatus,
    /// Step-specific payload (parsed output, retrieved ids, error text, …).
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub trace_id: String,
    pub topology: Topology,
    pub case_id: String,
    pub steps: Vec<TraceStep>,
}

/// Stable across runs so reports stay byte-identical.
pub fn trace_id(topology: Topology, case_id: &str, paraphrase_id: u32) -> String {
    short_digest(format!("{topology}|{case_id}|{paraphrase_id}").as_bytes())
}

impl RunTrace {
    pub fn new(topology: Topology, case_id: &str, paraphrase_id: u32) -> Self {
        Self {
            trace_id: trace_id(topology, case_id, paraphrase_id),
            topology,
            case_id: case_id.to_string(),
            steps: Vec::new(),
        }
    }

    pub fn push(&mut self, step: TraceStep) {
        self.steps.push(step);
    }

    /// Records a step without a provider exchange.
    pub fn note(&mut self, step_kind: StepKind, status: StepStatus, detail: Value) {
        self.push(TraceStep {
            step_kind,
            agent_role: None,
            request_digest: None,
            response_digest: None,
            timestamp: now(),
            status,
            detail,
        });
    }

    pub fn kinds(&self) -> Vec<StepKind> {
        self.steps.iter().map(|s| s.step_kind).collect()
    }

    /// Steps that reached a chat provider.
    pub fn provider_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.request_digest.is_some()).count()
    }
}

pub(crate) fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}
