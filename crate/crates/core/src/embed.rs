//! Embedding providers.
//!
//! Similarity between two texts is the dot product of their unit-norm
//! embeddings. Two providers ship here: a deterministic hashed bag-of-words
//! embedder used offline and in tests, and an HTTP client for an
//! OpenAI-compatible `/embeddings` endpoint.

use std::hash::Hasher;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

pub const HASH_EMBEDDING_DIM: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding endpoint failed: {0}")]
    Endpoint(String),
    #[error("embedding endpoint returned {got} vectors for {expected} inputs")]
    CountMismatch { expected: usize, got: usize },
    #[error("embedding dimension {got} does not match configured {expected}")]
    Dimension { expected: usize, got: usize },
}

/// Identifies an embedder configuration; persisted stores record it so that a
/// store is never queried with vectors from a different model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderDescriptor {
    pub kind: String,
    pub model: String,
    pub dimension: usize,
}

pub trait EmbeddingProvider: Send + Sync {
    fn descriptor(&self) -> EmbedderDescriptor;

    /// Embeds every text to a unit-norm vector (the zero vector for texts
    /// without any token).
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError>;

    fn embed_one(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        Ok(self.embed(&[text])?.pop().unwrap_or_default())
    }

    fn similarity(&self, a: &[f32], b: &[f32]) -> f64 {
        dot(a, b).clamp(-1.0, 1.0)
    }

    fn text_similarity(&self, a: &str, b: &str) -> Result<f64, EmbedError> {
        let v = self.embed(&[a, b])?;
        Ok(self.similarity(&v[0], &v[1]))
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

pub(crate) fn l2_normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (f64::from(*x) / norm) as f32;
        }
    }
}

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // kana
        | 0x3400..=0x4DBF    // CJK ext A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xAC00..=0xD7AF    // hangul
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FA1F)
}

const STOPWORDS: &[&str] = &[
    "a", "about", "an", "and", "are", "as", "at", "be", "by", "did", "do", "does", "for", "from", "has", "have", "he",
    "her", "his", "how", "i", "in", "is", "it", "its", "of", "on", "or", "she", "that", "the", "their", "they", "this",
    "to", "was", "were", "what", "when", "where", "which", "who", "whom", "whose", "why", "will", "with",
];

/// Lowercased alphanumeric words and single CJK characters, minus English
/// stopwords.
pub fn embedding_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, tokens: &mut Vec<String>| {
        if !word.is_empty() {
            if !STOPWORDS.contains(&word.as_str()) {
                tokens.push(std::mem::take(word));
            } else {
                word.clear();
            }
        }
    };
    for c in text.chars() {
        if is_cjk(c) {
            flush(&mut word, &mut tokens);
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else {
            flush(&mut word, &mut tokens);
        }
    }
    flush(&mut word, &mut tokens);
    tokens
}

/// Hashed bag-of-words embedder (FNV-1a buckets, L2-normalized).
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashEmbedder { dimension }
    }

    pub fn bucket(&self, token: &str) -> usize {
        let mut h = FnvHasher::default();
        h.write(token.as_bytes());
        (h.finish() % self.dimension as u64) as usize
    }

    fn embed_text(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dimension];
        for token in embedding_tokens(text) {
            v[self.bucket(&token)] += 1.0;
        }
        l2_normalize(&mut v);
        v
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(HASH_EMBEDDING_DIM)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn descriptor(&self) -> EmbedderDescriptor {
        EmbedderDescriptor { kind: "hash".into(), model: "fnv1a-bow".into(), dimension: self.dimension }
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

/// Client for an OpenAI-compatible embeddings endpoint.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    dimension: usize,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

impl HttpEmbedder {
    pub fn new(
        url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        dimension: usize,
        timeout: Duration,
    ) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Endpoint(e.to_string()))?;
        Ok(HttpEmbedder { client, url: url.into(), model: model.into(), api_key, dimension })
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn descriptor(&self) -> EmbedderDescriptor {
        EmbedderDescriptor { kind: "http".into(), model: self.model.clone(), dimension: self.dimension }
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let mut req = self.client.post(&self.url).json(&serde_json::json!({ "model": self.model, "input": texts }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp: EmbeddingResponse = req
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| EmbedError::Endpoint(e.without_url().to_string()))?;
        if resp.data.len() != texts.len() {
            return Err(EmbedError::CountMismatch { expected: texts.len(), got: resp.data.len() });
        }
        resp.data
            .into_iter()
            .map(|d| {
                let mut v = d.embedding;
                if v.len() != self.dimension {
                    return Err(EmbedError::Dimension { expected: self.dimension, got: v.len() });
                }
                l2_normalize(&mut v);
                Ok(v)
            })
            .collect()
    }
}
