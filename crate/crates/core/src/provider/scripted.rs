use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ChatResponse, ProviderError, Usage};

/// One entry of a script file. Entries with a fingerprint answer the request
/// carrying that fingerprint every time it is seen; entries without one are
/// replayed in file order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    pub content: String,
}

impl ScriptEntry {
    pub fn ordered(content: impl Into<String>) -> Self {
        Self {
            fingerprint: None,
            content: content.into(),
        }
    }

    pub fn keyed(fingerprint: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            fingerprint: Some(fingerprint.into()),
            content: content.into(),
        }
    }
}

/// Deterministic chat provider replaying canned responses.
///
/// Keyed entries are consulted first; otherwise the next ordered entry is
/// served. Ordered replay is serialized so concurrent callers still consume
/// the script strictly in order.
#[derive(Debug)]
pub struct ScriptedProvider {
    id: String,
    keyed: HashMap<String, String>,
    ordered: Mutex<(Vec<String>, usize)>,
    calls: AtomicUsize,
}

impl ScriptedProvider {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        let mut keyed = HashMap::new();
        let mut ordered = Vec::new();
        for e in entries {
            match e.fingerprint {
                Some(fp) => {
                    keyed.insert(fp, e.content);
                }
                None => ordered.push(e.content),
            }
        }
        Self {
            id: "scripted".to_string(),
            keyed,
            ordered: Mutex::new((ordered, 0)),
            calls: AtomicUsize::new(0),
        }
    }

    /// Ordered script from plain strings.
    pub fn from_responses<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(responses.into_iter().map(ScriptEntry::ordered).collect())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("reading script {}: {e}", path.display())))?;
        let entries: Vec<ScriptEntry> = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Config(format!("parsing script {}: {e}", path.display())))?;
        let mut provider = Self::new(entries);
        provider.id = format!("scripted:{}", path.file_name().and_then(|n| n.to_str()).unwrap_or("script"));
        Ok(provider)
    }

    /// Total completions requested so far, successful or not.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for ScriptedProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let respond = |content: String| ChatResponse {
            content,
            provider_id: self.id.clone(),
            usage: Usage::default(),
        };
        let fingerprint = request.fingerprint();
        if let Some(content) = self.keyed.get(&fingerprint) {
            return Ok(respond(content.clone()));
        }
        let mut guard = self.ordered.lock().expect("script lock poisoned");
        let (script, cursor) = &mut *guard;
        if *cursor < script.len() {
            let content = script[*cursor].clone();
            *cursor += 1;
            return Ok(respond(content));
        }
        if script.is_empty() && !self.keyed.is_empty() {
            return Err(ProviderError::MissingKey { fingerprint });
        }
        Err(ProviderError::ScriptExhausted { served: *cursor })
    }
}

/// Wraps another provider and remembers every successful exchange, so a live
/// or synthetic run can be replayed later as a keyed script.
pub struct RecordingProvider {
    inner: Arc<dyn ChatProvider>,
    recorded: Mutex<BTreeMap<String, String>>,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn ChatProvider>) -> Self {
        Self {
            inner,
            recorded: Mutex::new(BTreeMap::new()),
        }
    }

    /// Keyed entries sorted by fingerprint.
    pub fn script(&self) -> Vec<ScriptEntry> {
        self.recorded
            .lock()
            .expect("recording lock poisoned")
            .iter()
            .map(|(fp, content)| ScriptEntry::keyed(fp.clone(), content.clone()))
            .collect()
    }

    pub fn write_script(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(&self.script()).expect("script serializes");
        fs::write(path, json + "\n")
    }
}

impl ChatProvider for RecordingProvider {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let response = self.inner.complete(request)?;
        self.recorded
            .lock()
            .expect("recording lock poisoned")
            .insert(request.fingerprint(), response.content.clone());
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{chat_complete, ChatMessage, Sampling};

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new(vec![ChatMessage::user(text)], Sampling::LOW, 32)
    }

    #[test]
    fn single_entry_answers_any_request() {
        let p = ScriptedProvider::from_responses(["A"]);
        assert_eq!(chat_complete(&p, &req("whatever")).unwrap().content, "A");
    }

    #[test]
    fn ordered_replay_then_exhaustion() {
        let p = ScriptedProvider::from_responses(["A", "B"]);
        assert_eq!(p.complete(&req("1")).unwrap().content, "A");
        assert_eq!(p.complete(&req("2")).unwrap().content, "B");
        assert!(matches!(
            p.complete(&req("3")),
            Err(ProviderError::ScriptExhausted { served: 2 })
        ));
        assert_eq!(p.calls(), 3);
    }

    #[test]
    fn keyed_lookup_and_missing_key() {
        let r = req("find me");
        let p = ScriptedProvider::new(vec![ScriptEntry::keyed(r.fingerprint(), "X")]);
        assert_eq!(p.complete(&r).unwrap().content, "X");
        // keyed entries are not consumed
        assert_eq!(p.complete(&r).unwrap().content, "X");
        assert!(matches!(
            p.complete(&req("other")),
            Err(ProviderError::MissingKey { .. })
        ));
    }

    #[test]
    fn file_with_three_responses_answers_three_calls() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        fs::write(
            &path,
            r#"[{"content":"one"},{"content":"two"},{"content":"three"}]"#,
        )
        .unwrap();
        let p = ScriptedProvider::from_file(&path).unwrap();
        for expected in ["one", "two", "three"] {
            assert_eq!(p.complete(&req("q")).unwrap().content, expected);
        }
        assert!(p.complete(&req("q")).is_err());
    }

    #[test]
    fn unparseable_file_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        fs::write(&path, "{not json").unwrap();
        assert!(matches!(
            ScriptedProvider::from_file(&path),
            Err(ProviderError::Config(_))
        ));
        assert!(matches!(
            ScriptedProvider::from_file(dir.path().join("absent.json")),
            Err(ProviderError::Config(_))
        ));
    }

    #[test]
    fn recording_round_trips_into_keyed_script() {
        let inner = Arc::new(ScriptedProvider::from_responses(["A", "B"]));
        let rec = RecordingProvider::new(inner);
        rec.complete(&req("first")).unwrap();
        rec.complete(&req("second")).unwrap();
        let replay = ScriptedProvider::new(rec.script());
        assert_eq!(replay.complete(&req("second")).unwrap().content, "B");
        assert_eq!(replay.complete(&req("first")).unwrap().content, "A");
    }
}
