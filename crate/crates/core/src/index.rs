//! Exact flat cosine index over embedded chunks.
//!
//! On-disk layout (all integers little-endian):
//!
//! ```text
//! magic   "RDRX"      4 bytes
//! version u32 = 1
//! dim     u32
//! count   u64
//! count × { id_len u16, id UTF-8, keyword_len u16, keyword UTF-8, dim × f32 }
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunking::{EmbeddedChunk, UNIT_NORM_TOLERANCE};
use crate::provider::{l2_norm, Vector};

pub const MAGIC: &[u8; 4] = b"RDRX";
pub const FORMAT_VERSION: u32 = 1;
/// Chunks retrieved per question.
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("shape error: expected dim {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("duplicate chunk id {0}")]
    Duplicate(String),
    #[error("degenerate vector: zero norm")]
    DegenerateVector,
    #[error("vector for {chunk_id} is not unit length (norm {norm})")]
    NotUnit { chunk_id: String, norm: f64 },
    #[error("k must be positive")]
    InvalidK,
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt index file: {0}")]
    Corruption(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub chunk_id: String,
    pub keyword: String,
    pub vector: Vector,
    norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: String,
    pub score: f64,
    pub keyword: String,
}

/// Append-only exact index. Every stored vector has length `dim` and unit
/// norm (within f32 rounding). Search scores divide the dot product by the
/// cached f64 norms, so they equal [`cosine`] to f64 precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
    ids: HashSet<String>,
}

impl FlatIndex {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "index dimension must be positive");
        Self {
            dim,
            entries: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn contains(&self, chunk_id: &str) -> bool {
        self.ids.contains(chunk_id)
    }

    /// Appends a batch tagged with `keyword`. The whole batch is checked
    /// before anything is stored, so a failed insert leaves the index as it was.
    pub fn insert(&mut self, embedded: &[EmbeddedChunk], keyword: &str) -> Result<(), IndexError> {
        let mut batch_ids = HashSet::with_capacity(embedded.len());
        let mut norms = Vec::with_capacity(embedded.len());
        for ec in embedded {
            norms.push(self.check_vector(&ec.chunk.chunk_id, &ec.vector)?);
            let id = &ec.chunk.chunk_id;
            if self.ids.contains(id) || !batch_ids.insert(id.as_str()) {
                return Err(IndexError::Duplicate(id.clone()));
            }
        }
        for (ec, norm) in embedded.iter().zip(norms) {
            self.ids.insert(ec.chunk.chunk_id.clone());
            self.entries.push(IndexEntry {
                chunk_id: ec.chunk.chunk_id.clone(),
                keyword: keyword.to_string(),
                vector: ec.vector.clone(),
                norm,
            });
        }
        Ok(())
    }

    fn check_vector(&self, chunk_id: &str, v: &Vector) -> Result<f64, IndexError> {
        if v.dim() != self.dim {
            return Err(IndexError::Shape {
                expected: self.dim,
                actual: v.dim(),
            });
        }
        let norm = l2_norm(v.as_slice());
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(IndexError::NotUnit {
                chunk_id: chunk_id.to_string(),
                norm,
            });
        }
        Ok(norm)
    }

    /// The `min(k, len)` entries most similar to `query`, best first; equal
    /// scores keep insertion order.
    pub fn search_top_k(&self, query: &Vector, k: usize) -> Result<Vec<ScoredChunk>, IndexError> {
        self.search_filtered(query, k, |_| true)
    }

    /// Like [`search_top_k`](Self::search_top_k) but only over entries
    /// accepted by `keep`.
    pub fn search_filtered(
        &self,
        query: &Vector,
        k: usize,
        keep: impl Fn(&IndexEntry) -> bool,
    ) -> Result<Vec<ScoredChunk>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if query.dim() != self.dim {
            return Err(IndexError::Shape {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        let qnorm = l2_norm(query.as_slice());
        if qnorm == 0.0 {
            return Err(IndexError::DegenerateVector);
        }
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| keep(e))
            .map(|(i, e)| ((e.vector.dot(query) / (e.norm * qnorm)).clamp(-1.0, 1.0), i))
            .collect();
        // stable sort keeps insertion order among equal scores
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(score, i)| ScoredChunk {
                chunk_id: self.entries[i].chunk_id.clone(),
                score,
                keyword: self.entries[i].keyword.clone(),
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, IndexError> {
        let record = 4 + 4 * self.dim;
        let mut out = Vec::with_capacity(20 + self.entries.len() * (record + 32));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            write_str16(&mut out, &e.chunk_id)?;
            write_str16(&mut out, &e.keyword)?;
            for c in e.vector.as_slice() {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(IndexError::Format("bad magic bytes".into()));
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(IndexError::Format(format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(IndexError::Format("dim is zero".into()));
        }
        let count = r.u64()?;
        let mut index = FlatIndex::new(dim);
        for _ in 0..count {
            let chunk_id = r.str16()?;
            let keyword = r.str16()?;
            let raw = r.take(4 * dim)?;
            let components = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let vector = Vector::new(components)
                .map_err(|e| IndexError::Corruption(format!("vector for {chunk_id}: {e}")))?;
            let norm = index
                .check_vector(&chunk_id, &vector)
                .map_err(|e| IndexError::Corruption(e.to_string()))?;
            if !index.ids.insert(chunk_id.clone()) {
                return Err(IndexError::Corruption(format!("duplicate chunk id {chunk_id}")));
            }
            index.entries.push(IndexEntry {
                chunk_id,
                keyword,
                vector,
                norm,
            });
        }
        if r.pos != bytes.len() {
            return Err(IndexError::Corruption(format!(
                "{} trailing bytes after {count} records",
                bytes.len() - r.pos
            )));
        }
        Ok(index)
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Cosine similarity `u·v / (‖u‖‖v‖)`.
pub fn cosine(u: &Vector, v: &Vector) -> Result<f64, IndexError> {
    if u.dim() != v.dim() {
        return Err(IndexError::Shape {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    let nu = l2_norm(u.as_slice());
    let nv = l2_norm(v.as_slice());
    if nu == 0.0 || nv == 0.0 {
        return Err(IndexError::DegenerateVector);
    }
    Ok((u.dot(v) / (nu * nv)).clamp(-1.0, 1.0))
}

fn write_str16(out: &mut Vec<u8>, s: &str) -> Result<(), IndexError> {
    let len = u16::try_from(s.len())
        .map_err(|_| IndexError::Format(format!("string of {} bytes exceeds u16 length", s.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            IndexError::Corruption(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16, IndexError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn str16(&mut self) -> Result<String, IndexError> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|e| IndexError::Corruption(format!("invalid UTF-8: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunking::Chunk;
    use proptest::prelude::*;

    fn ec(id: &str, v: &[f32]) -> EmbeddedChunk {
        EmbeddedChunk {
            chunk: Chunk {
                chunk_id: id.into(),
                doc_id: "d".into(),
                ordinal: 0,
                text: "t".into(),
                char_span: (0, 1),
            },
            vector: Vector::new(v.to_vec()).unwrap(),
        }
    }

    fn vec2(a: f32, b: f32) -> Vector {
        Vector::new(vec![a, b]).unwrap()
    }

    fn two_entry() -> FlatIndex {
        let mut idx = FlatIndex::new(2);
        idx.insert(&[ec("a", &[1.0, 0.0]), ec("b", &[0.0, 1.0])], "kw").unwrap();
        idx
    }

    #[test]
    fn insert_counts_and_rejects() {
        let mut idx = FlatIndex::new(2);
        idx.insert(&[ec("a", &[1.0, 0.0]), ec("b", &[0.0, 1.0]), ec("c", &[0.6, 0.8])], "k")
            .unwrap();
        assert_eq!(idx.len(), 3);
        assert!(matches!(
            idx.insert(&[ec("a", &[1.0, 0.0])], "k"),
            Err(IndexError::Duplicate(_))
        ));
        // duplicate within one batch, and the batch is not partially applied
        assert!(matches!(
            idx.insert(&[ec("x", &[1.0, 0.0]), ec("x", &[1.0, 0.0])], "k"),
            Err(IndexError::Duplicate(_))
        ));
        assert_eq!(idx.len(), 3);
        assert!(!idx.contains("x"));
        assert!(matches!(
            idx.insert(&[ec("n", &[2.0, 0.0])], "k"),
            Err(IndexError::NotUnit { .. })
        ));

        let mut big = FlatIndex::new(384);
        assert!(matches!(
            big.insert(&[ec("d", &[0.5, 0.5, 0.5, 0.5])], "k"),
            Err(IndexError::Shape { expected: 384, actual: 4 })
        ));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&vec2(1.0, 0.0), &vec2(1.0, 0.0)).unwrap(), 1.0);
        assert_eq!(cosine(&vec2(1.0, 0.0), &vec2(0.0, 1.0)).unwrap(), 0.0);
        let c = cosine(&vec2(1.0, 1.0), &vec2(1.0, 0.0)).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        assert!(matches!(
            cosine(&vec2(0.0, 0.0), &vec2(1.0, 0.0)),
            Err(IndexError::DegenerateVector)
        ));
        assert!(matches!(
            cosine(&vec2(1.0, 0.0), &Vector::new(vec![1.0]).unwrap()),
            Err(IndexError::Shape { .. })
        ));
    }

    #[test]
    fn search_examples() {
        let idx = two_entry();
        let r = idx.search_top_k(&vec2(1.0, 0.0), 1).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].chunk_id, "a");
        assert_eq!(r[0].score, 1.0);
        let r = idx.search_top_k(&vec2(1.0, 0.0), 5).unwrap();
        assert_eq!(r.iter().map(|s| s.chunk_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert!(FlatIndex::new(2).search_top_k(&vec2(1.0, 0.0), 3).unwrap().is_empty());
        assert!(matches!(idx.search_top_k(&vec2(1.0, 0.0), 0), Err(IndexError::InvalidK)));
        assert!(matches!(
            idx.search_top_k(&Vector::new(vec![1.0, 0.0, 0.0]).unwrap(), 1),
            Err(IndexError::Shape { .. })
        ));
    }

    #[test]
    fn ties_keep_insertion_order() {
        let mut idx = FlatIndex::new(2);
        idx.insert(&[ec("late", &[0.0, 1.0]), ec("first", &[0.6, 0.8]), ec("second", &[0.6, 0.8])], "k")
            .unwrap();
        let r = idx.search_top_k(&vec2(1.0, 0.0), 3).unwrap();
        assert_eq!(
            r.iter().map(|s| s.chunk_id.as_str()).collect::<Vec<_>>(),
            ["first", "second", "late"]
        );
    }

    #[test]
    fn filtered_search_respects_predicate() {
        let mut idx = FlatIndex::new(2);
        idx.insert(&[ec("a", &[1.0, 0.0])], "x").unwrap();
        idx.insert(&[ec("b", &[0.6, 0.8])], "y").unwrap();
        let r = idx.search_filtered(&vec2(1.0, 0.0), 5, |e| e.keyword == "y").unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].chunk_id, "b");
        assert_eq!(r[0].keyword, "y");
    }

    #[test]
    fn persistence_round_trip_and_errors() {
        let mut idx = two_entry();
        idx.insert(&[ec("c", &[0.6, 0.8])], "other kw").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.rdrx");
        idx.save(&path).unwrap();
        assert_eq!(FlatIndex::load(&path).unwrap(), idx);

        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"RDRX");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 3);
        // first record: id "a", keyword "kw", then (1.0, 0.0)
        assert_eq!(&bytes[20..22], &1u16.to_le_bytes());
        assert_eq!(bytes[22], b'a');
        assert_eq!(&bytes[23..25], &2u16.to_le_bytes());
        assert_eq!(&bytes[25..27], b"kw");
        assert_eq!(&bytes[27..31], &1.0f32.to_le_bytes());

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(FlatIndex::from_bytes(&bad), Err(IndexError::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(FlatIndex::from_bytes(&bad), Err(IndexError::Format(_))));
        // cut in the middle of the last vector
        assert!(matches!(
            FlatIndex::from_bytes(&bytes[..bytes.len() - 3]),
            Err(IndexError::Corruption(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(FlatIndex::from_bytes(&extra), Err(IndexError::Corruption(_))));
    }

    fn unit(v: Vec<f32>) -> Vec<f32> {
        let n = l2_norm(&v);
        v.into_iter().map(|c| (c as f64 / n) as f32).collect()
    }

    proptest! {
        #[test]
        fn search_is_monotone_and_dot_equals_cosine(
            raw in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 8), 1..40),
            q in prop::collection::vec(-1.0f32..1.0, 8),
            k in 1usize..50,
        ) {
            prop_assume!(l2_norm(&q) > 1e-3);
            let mut idx = FlatIndex::new(8);
            let batch: Vec<_> = raw
                .into_iter()
                .filter(|v| l2_norm(v) > 1e-3)
                .enumerate()
                .map(|(i, v)| ec(&format!("c{i}"), &unit(v)))
                .collect();
            idx.insert(&batch, "k").unwrap();
            let query = Vector::new(q).unwrap();
            let res = idx.search_top_k(&query, k).unwrap();
            prop_assert_eq!(res.len(), k.min(idx.len()));
            for w in res.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
            for r in &res {
                let entry = idx.entries().iter().find(|e| e.chunk_id == r.chunk_id).unwrap();
                let cos = cosine(&entry.vector, &query).unwrap();
                prop_assert!((cos - r.score).abs() < 1e-9);
            }
        }
    }
}
