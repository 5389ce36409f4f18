//! Keyword-keyed knowledge base: an internal cache of fetched documents and
//! their chunk vectors, consulted before any external fetch.

mod live;
mod source;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunking::{embed_chunks, segment, Chunk, ChunkError, ChunkParams, Document, EmbeddedChunk};
use crate::domain::{canonical_fold, ValidationError};
use crate::index::{FlatIndex, IndexError, ScoredChunk};
use crate::provider::{Embedder, RetryPolicy, Vector};

pub use live::{html_to_text, LiveSource, LiveSourceSettings, DEFAULT_BASE_URL, MIN_DELAY_MS};
#[cfg(test)]
pub(crate) use source::tests as tests_support;
pub use source::{fetch_documents, DocumentSource, FixtureSource, SearchHit, SourceError, PER_SECTION_LIMIT};

const INDEX_FILE: &str = "index.rdrx";
const STATE_FILE: &str = "kb.json";

#[derive(Debug, Error)]
pub enum KbError {
    #[error("invalid keyword: {0}")]
    Keyword(#[from] ValidationError),
    #[error("fetching {keyword:?}: {source}")]
    Fetch { keyword: String, source: SourceError },
    #[error("ingesting {keyword:?}: {source}")]
    Ingest { keyword: String, source: ChunkError },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("knowledge base store {path}: {message}")]
    Store { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hit {
    Internal,
    Fetched,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalOutcome {
    pub keyword: String,
    pub hit: Hit,
    /// Documents added to the store by this call; zero on an internal hit.
    pub new_docs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchRecord {
    pub keyword: String,
    pub timestamp: String,
    pub doc_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbStats {
    pub keywords: usize,
    pub documents: usize,
    pub chunks: usize,
    pub dim: usize,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
struct KbState {
    fetched_keywords: BTreeSet<String>,
    doc_store: BTreeMap<String, Document>,
    chunks: BTreeMap<String, Chunk>,
    /// Folded keyword to the doc ids fetched for it, in source order.
    keyword_docs: BTreeMap<String, Vec<String>>,
    fetch_log: Vec<FetchRecord>,
}

struct Inner {
    index: FlatIndex,
    state: KbState,
}

/// Shared across worker threads. Lookups for the same folded keyword are
/// serialized so concurrent callers trigger a single fetch; distinct
/// keywords fetch and embed in parallel and only take the write lock for
/// the final insert.
pub struct KnowledgeBase {
    params: ChunkParams,
    retry: RetryPolicy,
    inner: RwLock<Inner>,
    keyword_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl KnowledgeBase {
    pub fn new(dim: usize, params: ChunkParams, retry: RetryPolicy) -> Result<Self, KbError> {
        params.validate().map_err(|e| KbError::Ingest {
            keyword: String::new(),
            source: e,
        })?;
        Ok(Self::from_parts(FlatIndex::new(dim), KbState::default(), params, retry))
    }

    fn from_parts(index: FlatIndex, state: KbState, params: ChunkParams, retry: RetryPolicy) -> Self {
        Self {
            params,
            retry,
            inner: RwLock::new(Inner { index, state }),
            keyword_locks: Mutex::new(HashMap::new()),
        }
    }

    fn read(&self) -> RwLockReadGuard<'_, Inner> {
        self.inner.read().expect("knowledge base lock poisoned")
    }

    fn write(&self) -> RwLockWriteGuard<'_, Inner> {
        self.inner.write().expect("knowledge base lock poisoned")
    }

    pub fn params(&self) -> ChunkParams {
        self.params
    }

    pub fn dim(&self) -> usize {
        self.read().index.dim()
    }

    pub fn contains_keyword(&self, keyword: &str) -> bool {
        canonical_fold(keyword).is_ok_and(|k| self.read().state.fetched_keywords.contains(&k))
    }

    fn keyword_lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.keyword_locks.lock().expect("keyword lock table poisoned");
        Arc::clone(locks.entry(key.to_string()).or_default())
    }

    /// Internal check, then external fetch on a miss. A failed fetch or
    /// ingest leaves the keyword unrecorded so a later call retries it.
    pub fn lookup_or_fetch(
        &self,
        keyword: &str,
        source: &dyn DocumentSource,
        embedder: &dyn Embedder,
    ) -> Result<RetrievalOutcome, KbError> {
        let key = canonical_fold(keyword)?;
        let internal = || RetrievalOutcome {
            keyword: key.clone(),
            hit: Hit::Internal,
            new_docs: 0,
        };
        if self.read().state.fetched_keywords.contains(&key) {
            return Ok(internal());
        }
        let lock = self.keyword_lock(&key);
        let _guard = lock.lock().expect("keyword lock poisoned");
        if self.read().state.fetched_keywords.contains(&key) {
            return Ok(internal());
        }
        let docs = fetch_documents(source, keyword, &self.retry).map_err(|e| KbError::Fetch {
            keyword: key.clone(),
            source: e,
        })?;
        let (_, new_docs) = self.ingest_keyed(&key, docs, embedder)?;
        Ok(RetrievalOutcome {
            keyword: key,
            hit: Hit::Fetched,
            new_docs,
        })
    }

    /// Segments, embeds and indexes `docs` under `keyword`, then records the
    /// keyword as fetched. Documents already stored (shared with another
    /// keyword) are linked but not re-indexed. Returns the chunks added.
    pub fn ingest(&self, keyword: &str, docs: Vec<Document>, embedder: &dyn Embedder) -> Result<usize, KbError> {
        let key = canonical_fold(keyword)?;
        Ok(self.ingest_keyed(&key, docs, embedder)?.0)
    }

    fn ingest_keyed(
        &self,
        key: &str,
        docs: Vec<Document>,
        embedder: &dyn Embedder,
    ) -> Result<(usize, usize), KbError> {
        let ingest_err = |source| KbError::Ingest {
            keyword: key.to_string(),
            source,
        };
        let mut seen = HashSet::new();
        let docs: Vec<Document> = docs.into_iter().filter(|d| seen.insert(d.doc_id.clone())).collect();
        let fresh: Vec<&Document> = {
            let inner = self.read();
            docs.iter().filter(|d| !inner.state.doc_store.contains_key(&d.doc_id)).collect()
        };
        // segment and embed without holding the lock
        let mut embedded: Vec<(String, Vec<EmbeddedChunk>)> = Vec::with_capacity(fresh.len());
        for doc in fresh {
            doc.validate().map_err(ingest_err)?;
            let chunks = segment(doc, self.params).map_err(ingest_err)?;
            embedded.push((doc.doc_id.clone(), embed_chunks(embedder, &chunks).map_err(ingest_err)?));
        }

        let mut inner = self.write();
        let Inner { index, state } = &mut *inner;
        // another keyword may have stored some of these meanwhile
        embedded.retain(|(id, _)| !state.doc_store.contains_key(id));
        let batch: Vec<EmbeddedChunk> = embedded.iter().flat_map(|(_, e)| e.iter().cloned()).collect();
        index.insert(&batch, key)?;

        let new_docs = embedded.len();
        let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
        for (id, _) in &embedded {
            state.doc_store.insert(id.clone(), by_id[id.as_str()].clone());
        }
        for e in batch.iter() {
            state.chunks.insert(e.chunk.chunk_id.clone(), e.chunk.clone());
        }
        let linked = state.keyword_docs.entry(key.to_string()).or_default();
        for d in &docs {
            if !linked.contains(&d.doc_id) {
                linked.push(d.doc_id.clone());
            }
        }
        state.fetched_keywords.insert(key.to_string());
        state.fetch_log.push(FetchRecord {
            keyword: key.to_string(),
            timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            doc_count: docs.len(),
        });
        log::debug!("ingested {key:?}: {} docs ({new_docs} new), {} chunks", docs.len(), batch.len());
        Ok((batch.len(), new_docs))
    }

    /// Top-`k` chunks for `query`. With `scope`, only chunks of documents
    /// fetched for one of those keywords are considered.
    pub fn search(&self, query: &Vector, k: usize, scope: Option<&[String]>) -> Result<Vec<ScoredChunk>, KbError> {
        let inner = self.read();
        let hits = match scope {
            None => inner.index.search_top_k(query, k)?,
            Some(keywords) => {
                let allowed: HashSet<&str> = keywords
                    .iter()
                    .filter_map(|k| canonical_fold(k).ok())
                    .filter_map(|k| inner.state.keyword_docs.get(&k))
                    .flatten()
                    .map(String::as_str)
                    .collect();
                inner.index.search_filtered(query, k, |e| {
                    inner
                        .state
                        .chunks
                        .get(&e.chunk_id)
                        .is_some_and(|c| allowed.contains(c.doc_id.as_str()))
                })?
            }
        };
        Ok(hits)
    }

    /// Texts for the given chunk ids, in the same order; unknown ids are
    /// skipped.
    pub fn chunk_texts(&self, ids: &[String]) -> Vec<(String, String)> {
        let inner = self.read();
        ids.iter()
            .filter_map(|id| inner.state.chunks.get(id).map(|c| (id.clone(), c.text.clone())))
            .collect()
    }

    pub fn stats(&self) -> KbStats {
        let inner = self.read();
        KbStats {
            keywords: inner.state.fetched_keywords.len(),
            documents: inner.state.doc_store.len(),
            chunks: inner.index.len(),
            dim: inner.index.dim(),
        }
    }

    pub fn fetch_log(&self) -> Vec<FetchRecord> {
        self.read().state.fetch_log.clone()
    }

    /// Every index entry resolves to a stored chunk whose document is in the
    /// store, and every linked keyword is recorded as fetched.
    pub fn check_integrity(&self) -> Result<(), ValidationError> {
        let inner = self.read();
        let st = &inner.state;
        let mut violations = Vec::new();
        for e in inner.index.entries() {
            match st.chunks.get(&e.chunk_id) {
                None => violations.push(format!("index entry {} has no chunk record", e.chunk_id)),
                Some(c) if !st.doc_store.contains_key(&c.doc_id) => {
                    violations.push(format!("chunk {} is orphaned from {}", e.chunk_id, c.doc_id))
                }
                Some(_) => {}
            }
        }
        if st.chunks.len() != inner.index.len() {
            violations.push(format!("{} chunk records for {} index entries", st.chunks.len(), inner.index.len()));
        }
        for (k, ids) in &st.keyword_docs {
            if !st.fetched_keywords.contains(k) {
                violations.push(format!("keyword {k:?} linked but not recorded"));
            }
            for id in ids {
                if !st.doc_store.contains_key(id) {
                    violations.push(format!("keyword {k:?} links missing document {id}"));
                }
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ValidationError { violations })
        }
    }

    /// Writes `index.rdrx` and `kb.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), KbError> {
        let dir = dir.as_ref();
        let store_err = |message: String| KbError::Store {
            path: dir.display().to_string(),
            message,
        };
        fs::create_dir_all(dir).map_err(|e| store_err(e.to_string()))?;
        let inner = self.read();
        inner.index.save(dir.join(INDEX_FILE))?;
        let json = serde_json::to_vec_pretty(&inner.state).map_err(|e| store_err(e.to_string()))?;
        let tmp = dir.join(format!("{STATE_FILE}.tmp"));
        fs::write(&tmp, json).map_err(|e| store_err(e.to_string()))?;
        fs::rename(&tmp, dir.join(STATE_FILE)).map_err(|e| store_err(e.to_string()))?;
        Ok(())
    }

    /// Loads a knowledge base saved by [`save`](Self::save), or starts empty
    /// when `dir` holds none.
    pub fn open(dir: impl AsRef<Path>, dim: usize, params: ChunkParams, retry: RetryPolicy) -> Result<Self, KbError> {
        let dir = dir.as_ref();
        let index_path = dir.join(INDEX_FILE);
        let state_path = dir.join(STATE_FILE);
        if !index_path.exists() && !state_path.exists() {
            return Self::new(dim, params, retry);
        }
        let store_err = |message: String| KbError::Store {
            path: dir.display().to_string(),
            message,
        };
        let index = FlatIndex::load(&index_path)?;
        if index.dim() != dim {
            return Err(store_err(format!("stored index has dim {}, embedder has {dim}", index.dim())));
        }
        let text = fs::read_to_string(&state_path).map_err(|e| store_err(format!("{STATE_FILE}: {e}")))?;
        let state: KbState = serde_json::from_str(&text).map_err(|e| store_err(format!("{STATE_FILE}: {e}")))?;
        let kb = Self::from_parts(index, state, params, retry);
        kb.check_integrity().map_err(|e| store_err(e.to_string()))?;
        Ok(kb)
    }
}
