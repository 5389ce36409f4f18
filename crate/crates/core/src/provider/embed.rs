use serde::{Deserialize, Serialize};

use super::ProviderError;

/// Dimension of the default live embedding model; the hash embedder matches it
/// so index code paths are the same offline and live.
pub const DEFAULT_EMBED_DIM: usize = 384;

/// A dense embedding with finite components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Vector(Vec<f32>);

impl Vector {
    pub fn new(components: Vec<f32>) -> Result<Self, ProviderError> {
        if components.is_empty() {
            return Err(ProviderError::Validation("vector has no components".into()));
        }
        if let Some(i) = components.iter().position(|c| !c.is_finite()) {
            return Err(ProviderError::Validation(format!(
                "vector component {i} is not finite"
            )));
        }
        Ok(Self(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    /// Dot product accumulated in f64.
    pub fn dot(&self, other: &Vector) -> f64 {
        dot(&self.0, &other.0)
    }
}

impl TryFrom<Vec<f32>> for Vector {
    type Error = ProviderError;

    fn try_from(v: Vec<f32>) -> Result<Self, Self::Error> {
        Vector::new(v)
    }
}

impl From<Vector> for Vec<f32> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn l2_norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vector, ProviderError>;
}

/// Rejects empty input and checks the returned dimension.
pub fn embed_text(embedder: &dyn Embedder, text: &str) -> Result<Vector, ProviderError> {
    if text.is_empty() {
        return Err(ProviderError::Validation("cannot embed empty text".into()));
    }
    let v = embedder.embed(text)?;
    if v.dim() != embedder.dim() {
        return Err(ProviderError::Provider(format!(
            "embedder {} returned dim {}, expected {}",
            embedder.id(),
            v.dim(),
            embedder.dim()
        )));
    }
    Ok(v)
}

/// Deterministic embedder: lowercased character 3-grams hashed (FNV-1a 64)
/// into `dim` count buckets, then L2-normalized. Texts shorter than three
/// characters hash as a single gram.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    id: String,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            id: format!("hash3gram-{dim}"),
        }
    }

    /// Bucket counts before normalization.
    pub fn features(&self, text: &str) -> Vec<f32> {
        let chars: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
        let mut buckets = vec![0f32; self.dim];
        let mut gram = String::new();
        let mut add = |g: &[char]| {
            gram.clear();
            gram.extend(g);
            buckets[(fnv1a64(gram.as_bytes()) % self.dim as u64) as usize] += 1.0;
        };
        if chars.len() < 3 {
            add(&chars);
        } else {
            chars.windows(3).for_each(add);
        }
        buckets
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_EMBED_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vector, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::Validation("cannot embed empty text".into()));
        }
        let mut v = self.features(text);
        let norm = l2_norm(&v);
        for c in &mut v {
            *c = (*c as f64 / norm) as f32;
        }
        Vector::new(v)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}
