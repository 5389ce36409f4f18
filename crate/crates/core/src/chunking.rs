//! Overlapping character windows over retrieved documents, and their
//! unit-normalized embeddings.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::{embed_text, l2_norm, Embedder, ProviderError, Vector};

pub const DEFAULT_CHUNK_CHARS: usize = 1000;
pub const DEFAULT_OVERLAP_CHARS: usize = 200;

/// Tolerance on the L2 norm of stored embeddings.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    Article,
    Case,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Section::Article => "article",
            Section::Case => "case",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub keyword: String,
    pub section: Section,
    pub title: String,
    pub body: String,
    pub source_url: String,
}

impl Document {
    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.doc_id.trim().is_empty() {
            return Err(ChunkError::InvalidDocument("doc_id empty".into()));
        }
        if self.body.is_empty() {
            return Err(ChunkError::InvalidDocument(format!(
                "document {} has an empty body",
                self.doc_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub text: String,
    /// Character offsets `[start, end)` into the parent body.
    pub char_span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedChunk {
    pub chunk: Chunk,
    pub vector: Vector,
}

#[derive(Debug, Error)]
pub enum ChunkError {
    #[error("chunk config error: {0}")]
    Config(String),
    #[error("invalid document: {0}")]
    InvalidDocument(String),
    #[error("degenerate vector: zero norm")]
    DegenerateVector,
    #[error("embedding chunk {chunk_id} failed: {source}")]
    Embed {
        chunk_id: String,
        #[source]
        source: ProviderError,
    },
}

/// Window size and overlap, both in characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkParams {
    pub chunk_chars: usize,
    pub overlap_chars: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self {
            chunk_chars: DEFAULT_CHUNK_CHARS,
            overlap_chars: DEFAULT_OVERLAP_CHARS,
        }
    }
}

impl ChunkParams {
    pub fn new(chunk_chars: usize, overlap_chars: usize) -> Result<Self, ChunkError> {
        let p = Self {
            chunk_chars,
            overlap_chars,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.chunk_chars == 0 {
            return Err(ChunkError::Config("chunk_chars must be positive".into()));
        }
        if self.overlap_chars >= self.chunk_chars {
            return Err(ChunkError::Config(format!(
                "overlap_chars ({}) must be smaller than chunk_chars ({})",
                self.overlap_chars, self.chunk_chars
            )));
        }
        Ok(())
    }

    fn stride(&self) -> usize {
        self.chunk_chars - self.overlap_chars
    }

    /// Number of windows `segment` produces for a body of `len` characters.
    pub fn chunk_count(&self, len: usize) -> usize {
        if len == 0 {
            return 0;
        }
        len.saturating_sub(self.overlap_chars).div_ceil(self.stride()).max(1)
    }
}

/// Splits a document body into windows of `chunk_chars` characters, each
/// starting `chunk_chars - overlap_chars` after the previous one. The last
/// window is cut at the end of the body.
pub fn segment(doc: &Document, params: ChunkParams) -> Result<Vec<Chunk>, ChunkError> {
    params.validate()?;
    doc.validate()?;
    // byte offset of every char boundary, including the end
    let bounds: Vec<usize> = doc
        .body
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(doc.body.len()))
        .collect();
    let len = bounds.len() - 1;
    let mut chunks = Vec::with_capacity(params.chunk_count(len));
    let mut start = 0;
    loop {
        let end = (start + params.chunk_chars).min(len);
        let ordinal = chunks.len();
        chunks.push(Chunk {
            chunk_id: format!("{}#{ordinal}", doc.doc_id),
            doc_id: doc.doc_id.clone(),
            ordinal,
            text: doc.body[bounds[start]..bounds[end]].to_string(),
            char_span: (start, end),
        });
        if end >= len {
            break;
        }
        start += params.stride();
    }
    Ok(chunks)
}

/// Scales a vector to unit length. Vectors already within
/// [`UNIT_NORM_TOLERANCE`] of unit length are returned unchanged.
pub fn l2_normalize(v: &Vector) -> Result<Vector, ChunkError> {
    let norm = l2_norm(v.as_slice());
    if norm == 0.0 || !norm.is_finite() {
        return Err(ChunkError::DegenerateVector);
    }
    if (norm - 1.0).abs() <= UNIT_NORM_TOLERANCE {
        return Ok(v.clone());
    }
    let scaled = v.as_slice().iter().map(|&c| (c as f64 / norm) as f32).collect();
    Vector::new(scaled).map_err(|_| ChunkError::DegenerateVector)
}

pub fn embed_chunks(embedder: &dyn Embedder, chunks: &[Chunk]) -> Result<Vec<EmbeddedChunk>, ChunkError> {
    if chunks.is_empty() {
        return Err(ChunkError::Config("no chunks to embed".into()));
    }
    chunks
        .iter()
        .map(|chunk| {
            let raw = embed_text(embedder, &chunk.text).map_err(|source| ChunkError::Embed {
                chunk_id: chunk.chunk_id.clone(),
                source,
            })?;
            Ok(EmbeddedChunk {
                chunk: chunk.clone(),
                vector: l2_normalize(&raw)?,
            })
        })
        .collect()
}
