//! Query embedders.

use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::index::normalize;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedder unavailable: {0}")]
    Unavailable(String),
    #[error("embedding dimension {found} does not match expected {expected}")]
    Dimension { expected: usize, found: usize },
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    /// Returns a unit-norm vector of length [`Embedder::dimension`].
    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError>;
}

/// Deterministic hashed bag of lowercase word tokens.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dimension: 64 }
    }
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        HashEmbedder { dimension }
    }
}

/// Splits into lowercase runs of alphanumeric characters and single
/// punctuation symbols.
pub fn bag_of_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' {
            cur.extend(c.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let mut v = vec![0f32; self.dimension];
        for tok in bag_of_tokens(text) {
            let h = Sha256::digest(tok.as_bytes());
            let mut b = [0u8; 8];
            b.copy_from_slice(&h[..8]);
            v[(u64::from_le_bytes(b) % self.dimension as u64) as usize] += 1.0;
        }
        if v.iter().all(|&x| x == 0.0) {
            v.fill(1.0);
        }
        normalize(&mut v);
        Ok(v)
    }
}

/// Remote embedding endpoint: `{input: [text], model}` to
/// `{data: [{embedding: [...]}]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub dimension: usize,
    pub timeout: Duration,
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut req = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body: Value = req
            .send_json(json!({"input": [text], "model": self.model}))
            .map_err(|e| EmbedError::Unavailable(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Unavailable(e.to_string()))?;
        let arr = body["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| EmbedError::Unavailable("response has no data[0].embedding".into()))?;
        let mut v: Vec<f32> = arr.iter().filter_map(Value::as_f64).map(|x| x as f32).collect();
        if v.len() != self.dimension {
            return Err(EmbedError::Dimension {
                expected: self.dimension,
                found: v.len(),
            });
        }
        normalize(&mut v);
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_insensitive_and_deterministic() {
        let e = HashEmbedder::default();
        assert_eq!(e.embed("a b").unwrap(), e.embed("b a").unwrap());
        assert_eq!(e.embed("x y z").unwrap(), e.embed("x y z").unwrap());
        assert_eq!(e.embed("a b").unwrap().len(), 64);
    }

    #[test]
    fn empty_text_is_uniform() {
        let v = HashEmbedder::new(4).embed("").unwrap();
        assert!(v.iter().all(|&x| (x - 0.5).abs() < 1e-7));
    }
}
