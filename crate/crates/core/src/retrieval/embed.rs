use ndarray::Array1;

use crate::backend::tokenizer::fnv1a;
use crate::error::{Error, Result};

/// Deterministic text-to-vector mapping.
pub trait EmbeddingProvider: Send + Sync {
    /// Identifier recorded with persisted indexes.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    /// Whether outputs have unit L2 norm.
    fn normalize(&self) -> bool;
    fn embed(&self, text: &str) -> Result<Array1<f64>>;
}

/// Signed feature hashing of lowercased word unigrams and character
/// trigrams. Needs no model files.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    normalize: bool,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            normalize: true,
        })
    }

    pub fn unnormalized(dim: usize) -> Result<Self> {
        Ok(Self {
            normalize: false,
            ..Self::new(dim)?
        })
    }

    fn add(&self, v: &mut Array1<f64>, feature: &[u8], weight: f64) {
        let h = fnv1a(feature);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % self.dim as u64) as usize] += sign * weight;
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(256).expect("positive dimension")
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-embed-w1c3-{}{}", self.dim, if self.normalize { "-l2" } else { "" })
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn normalize(&self) -> bool {
        self.normalize
    }

    fn embed(&self, text: &str) -> Result<Array1<f64>> {
        let lower = text.to_lowercase();
        let mut v = Array1::zeros(self.dim);
        let mut any = false;
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            any = true;
            let mut key = b"w:".to_vec();
            key.extend_from_slice(word.as_bytes());
            self.add(&mut v, &key, 1.0);
            let padded: Vec<char> = format!(" {word} ").chars().collect();
            for tri in padded.windows(3) {
                let mut key = b"c:".to_vec();
                key.extend_from_slice(tri.iter().collect::<String>().as_bytes());
                self.add(&mut v, &key, 0.5);
            }
        }
        if !any {
            return Err(Error::Provider {
                text: text.to_string(),
                reason: "no alphanumeric content".into(),
            });
        }
        if self.normalize {
            let norm = v.dot(&v).sqrt();
            if norm == 0.0 {
                return Err(Error::Provider {
                    text: text.to_string(),
                    reason: "features cancelled to a zero vector".into(),
                });
            }
            v /= norm;
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_unit_norm() {
        let e = HashEmbedder::default();
        let a = e.embed("How do I top up my card?").unwrap();
        assert_eq!(a, e.embed("How do I top up my card?").unwrap());
        assert!((a.dot(&a) - 1.0).abs() < 1e-12);
        assert!(e.embed("   ?! ").is_err());
    }

    #[test]
    fn related_texts_are_closer() {
        let e = HashEmbedder::default();
        let q = e.embed("card payment declined").unwrap();
        let near = e.embed("my card payment was declined").unwrap();
        let far = e.embed("what is the weather tomorrow").unwrap();
        assert!(q.dot(&near) > q.dot(&far));
    }
}
