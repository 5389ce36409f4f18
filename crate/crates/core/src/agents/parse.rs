//! Extraction of structured JSON from free-form model replies.

use std::fmt;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

/// Expected shape of an agent reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaId {
    /// `{"candidates": [string, …]}`
    Candidates,
    /// `{"queries": [{"question": string, "keyword": string}, …]}`
    Queries,
    /// `{"answer": string, "supporting_chunk_ids": [string, …]}`
    Answer,
    /// `{"primary": {"label", "confidence"}, "differentials": [{"label", "confidence"}, …]}`
    Report,
    /// `{"objections": [string, …]}`
    Critique,
    /// `{"canonical": string}`
    Canonical,
}

impl fmt::Display for SchemaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemaId::Candidates => "candidates",
            SchemaId::Queries => "queries",
            SchemaId::Answer => "answer",
            SchemaId::Report => "report",
            SchemaId::Critique => "critique",
            SchemaId::Canonical => "canonical",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no JSON object or array found in reply")]
    NoJson,
    #[error("JSON at byte {offset} does not match the {schema} schema: {message}")]
    Schema {
        schema: SchemaId,
        offset: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CandidatesOut {
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct QueryOut {
    pub question: String,
    pub keyword: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct QueriesOut {
    pub queries: Vec<QueryOut>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct AnswerOut {
    pub answer: String,
    pub supporting_chunk_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct LabelOut {
    pub label: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReportOut {
    pub primary: LabelOut,
    pub differentials: Vec<LabelOut>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CritiqueOut {
    pub objections: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CanonicalOut {
    pub canonical: String,
}

impl SchemaId {
    fn check(self, v: &Value) -> Result<(), String> {
        fn fits<T: DeserializeOwned>(v: &Value) -> Result<(), String> {
            T::deserialize(v).map(drop).map_err(|e| e.to_string())
        }
        match self {
            SchemaId::Candidates => fits::<CandidatesOut>(v),
            SchemaId::Queries => fits::<QueriesOut>(v),
            SchemaId::Answer => fits::<AnswerOut>(v),
            SchemaId::Report => fits::<ReportOut>(v),
            SchemaId::Critique => fits::<CritiqueOut>(v),
            SchemaId::Canonical => fits::<CanonicalOut>(v),
        }
    }
}

/// Returns the first JSON value in `text` that matches `schema`. Prose and
/// code fences around the value are ignored. When JSON is present but none
/// of it fits, the error points at the first candidate value.
pub fn parse_structured(text: &str, schema: SchemaId) -> Result<Value, ParseError> {
    let mut first_mismatch = None;
    for (offset, _) in text.match_indices(['{', '[']) {
        let mut stream = serde_json::Deserializer::from_str(&text[offset..]).into_iter::<Value>();
        let Some(Ok(value)) = stream.next() else {
            continue;
        };
        match schema.check(&value) {
            Ok(()) => return Ok(value),
            Err(message) => {
                first_mismatch.get_or_insert(ParseError::Schema { schema, offset, message });
            }
        }
    }
    Err(first_mismatch.unwrap_or(ParseError::NoJson))
}

/// [`parse_structured`] followed by conversion into the schema's type.
pub fn parse_as<T: DeserializeOwned>(text: &str, schema: SchemaId) -> Result<T, ParseError> {
    let value = parse_structured(text, schema)?;
    T::deserialize(value).map_err(|e| ParseError::Schema {
        schema,
        offset: 0,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const REPORT: &str = r#"{"primary": {"label": "glioblastoma", "confidence": 0.6}, "differentials": [{"label": "metastasis", "confidence": 0.2}]}"#;

    #[test]
    fn tolerates_prose() {
        let text = format!("Here you go: {REPORT} Hope that helps.");
        let v = parse_structured(&text, SchemaId::Report).unwrap();
        assert_eq!(v["primary"]["label"], "glioblastoma");
    }

    #[test]
    fn tolerates_code_fences() {
        let text = format!("Sure.\n```json\n{REPORT}\n```\n");
        let out: ReportOut = parse_as(&text, SchemaId::Report).unwrap();
        assert_eq!(out.differentials[0].label, "metastasis");
    }

    #[test]
    fn no_json() {
        assert_eq!(parse_structured("I think it is a glioma.", SchemaId::Report), Err(ParseError::NoJson));
        assert_eq!(parse_structured("broken { not json", SchemaId::Report), Err(ParseError::NoJson));
    }

    #[test]
    fn skips_non_matching_values() {
        let text = r#"Ranking [1, 2] then {"candidates": ["a", "b"]}"#;
        let out: CandidatesOut = parse_as(text, SchemaId::Candidates).unwrap();
        assert_eq!(out.candidates, ["a", "b"]);
    }

    #[test]
    fn schema_error_has_location() {
        let text = r#"abc {"candidates": "glioma"}"#;
        match parse_structured(text, SchemaId::Candidates) {
            Err(ParseError::Schema { offset, schema, .. }) => {
                assert_eq!(offset, 4);
                assert_eq!(schema, SchemaId::Candidates);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nested_match_is_found() {
        // the outer object does not fit, the inner one does
        let text = r#"{"result": {"objections": ["x"]}}"#;
        let out: CritiqueOut = parse_as(text, SchemaId::Critique).unwrap();
        assert_eq!(out.objections, ["x"]);
    }
}
