use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunking::{Document, Section};
use crate::domain::canonical_fold;
use crate::provider::RetryPolicy;

/// Documents taken per section for each keyword.
pub const PER_SECTION_LIMIT: usize = 5;

#[derive(Debug, Error)]
pub enum SourceError {
    /// Network failure or timeout; retried.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unusable response: {0}")]
    Parse(String),
    #[error("source config error: {0}")]
    Config(String),
}

impl SourceError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, SourceError::Transport(_))
    }
}

/// A search result pointing at a document, in the source's own ranking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub section: Section,
    pub title: String,
    pub url: String,
}

/// An external document collection searchable by keyword and section.
pub trait DocumentSource: Send + Sync {
    fn id(&self) -> &str;
    fn search(&self, keyword: &str, section: Section) -> Result<Vec<SearchHit>, SourceError>;
    fn fetch(&self, keyword: &str, hit: &SearchHit) -> Result<Document, SourceError>;
}

/// Up to five article and five case documents for `keyword`, deduplicated
/// by URL and kept in the source's result order. Transport failures are
/// retried per `retry`; documents with empty bodies are skipped.
pub fn fetch_documents(
    source: &dyn DocumentSource,
    keyword: &str,
    retry: &RetryPolicy,
) -> Result<Vec<Document>, SourceError> {
    if keyword.trim().is_empty() {
        return Err(SourceError::Config("keyword empty".into()));
    }
    let mut seen_urls = HashSet::new();
    let mut docs = Vec::new();
    for section in [Section::Article, Section::Case] {
        let hits = retry.run(|_| source.search(keyword, section), SourceError::is_retryable)?;
        let mut taken = 0;
        for hit in hits {
            if taken == PER_SECTION_LIMIT {
                break;
            }
            if hit.section != section || !seen_urls.insert(hit.url.clone()) {
                continue;
            }
            let doc = retry.run(|_| source.fetch(keyword, &hit), SourceError::is_retryable)?;
            if doc.body.trim().is_empty() {
                log::warn!("skipping {} for {keyword:?}: empty body", hit.url);
                continue;
            }
            docs.push(doc);
            taken += 1;
        }
    }
    if docs.is_empty() {
        log::info!("source {} has no documents for {keyword:?}", source.id());
    }
    Ok(docs)
}

/// Local corpus: a directory of JSON files, one [`Document`] each, matched on
/// the folded keyword. Result order is file-name order.
#[derive(Debug, Clone)]
pub struct FixtureSource {
    by_keyword: HashMap<String, Vec<Document>>,
    fail_keywords: HashSet<String>,
    id: String,
}

impl FixtureSource {
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, SourceError> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| SourceError::Config(format!("reading corpus {}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut docs = Vec::with_capacity(paths.len());
        for p in paths {
            let text = fs::read_to_string(&p)
                .map_err(|e| SourceError::Config(format!("reading {}: {e}", p.display())))?;
            let doc: Document = serde_json::from_str(&text)
                .map_err(|e| SourceError::Config(format!("parsing {}: {e}", p.display())))?;
            docs.push(doc);
        }
        let mut source = Self::from_documents(docs)?;
        source.id = format!("fixture:{}", dir.display());
        Ok(source)
    }

    pub fn from_documents(docs: Vec<Document>) -> Result<Self, SourceError> {
        let mut by_keyword: HashMap<String, Vec<Document>> = HashMap::new();
        let mut ids = HashSet::new();
        for doc in docs {
            doc.validate().map_err(|e| SourceError::Config(e.to_string()))?;
            if !ids.insert(doc.doc_id.clone()) {
                return Err(SourceError::Config(format!("duplicate doc_id {}", doc.doc_id)));
            }
            let key = canonical_fold(&doc.keyword).map_err(|e| {
                SourceError::Config(format!("document {} keyword: {e}", doc.doc_id))
            })?;
            by_keyword.entry(key).or_default().push(doc);
        }
        Ok(Self {
            by_keyword,
            fail_keywords: HashSet::new(),
            id: "fixture".to_string(),
        })
    }

    /// Keywords whose searches fail with a transport error, for exercising
    /// degradation paths.
    pub fn with_failing_keywords<I, S>(mut self, keywords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.fail_keywords = keywords
            .into_iter()
            .filter_map(|k| canonical_fold(k.as_ref()).ok())
            .collect();
        self
    }

    pub fn document_count(&self) -> usize {
        self.by_keyword.values().map(Vec::len).sum()
    }

    fn docs_for(&self, keyword: &str) -> &[Document] {
        canonical_fold(keyword)
            .ok()
            .and_then(|k| self.by_keyword.get(&k))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

impl DocumentSource for FixtureSource {
    fn id(&self) -> &str {
        &self.id
    }

    fn search(&self, keyword: &str, section: Section) -> Result<Vec<SearchHit>, SourceError> {
        if canonical_fold(keyword).is_ok_and(|k| self.fail_keywords.contains(&k)) {
            return Err(SourceError::Transport(format!(
                "injected failure for keyword {keyword:?}"
            )));
        }
        Ok(self
            .docs_for(keyword)
            .iter()
            .filter(|d| d.section == section)
            .map(|d| SearchHit {
                section,
                title: d.title.clone(),
                url: d.source_url.clone(),
            })
            .collect())
    }

    fn fetch(&self, keyword: &str, hit: &SearchHit) -> Result<Document, SourceError> {
        self.docs_for(keyword)
            .iter()
            .find(|d| d.source_url == hit.url)
            .cloned()
            .ok_or_else(|| SourceError::Parse(format!("no fixture document at {}", hit.url)))
    }
}
