//! Unit-norm embedding vectors and the feature-hashing mock embedder.

use serde::{Deserialize, Serialize};

use super::{check_embed_inputs, Embedder, ProviderError};
use crate::hashing::fnv1a64;

pub const MOCK_DIMENSION: usize = 256;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    /// L2-normalizes `values`. A zero vector becomes the first basis vector.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            values.iter_mut().for_each(|v| *v = 0.0);
            if let Some(first) = values.first_mut() {
                *first = 1.0;
            }
        } else {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Renormalized mean of `vectors`, or `None` if empty.
    pub fn mean(vectors: &[&Embedding]) -> Option<Embedding> {
        let first = vectors.first()?;
        let mut acc = vec![0.0; first.dim()];
        for v in vectors {
            for (a, x) in acc.iter_mut().zip(&v.0) {
                *a += x;
            }
        }
        Some(Embedding::normalized(acc))
    }
}

/// Slack for threshold comparisons. Token-hashing embeddings produce exact
/// rational cosines such as 4/5, which rounding would otherwise place on
/// either side of a threshold of the same value.
pub const SIMILARITY_TOLERANCE: f64 = 1e-9;

/// Whether a cosine reaches `threshold`, up to [`SIMILARITY_TOLERANCE`].
pub fn reaches(cosine: f64, threshold: f64) -> bool {
    cosine >= threshold - SIMILARITY_TOLERANCE
}

/// Cosine similarity. Both inputs are unit-norm, so this is the dot product.
pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum()
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Signed feature hashing of the token multiset.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dimension: usize,
}

impl MockEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }

    pub fn embed_str(&self, text: &str) -> Embedding {
        let mut acc = vec![0.0; self.dimension];
        for token in tokenize(text) {
            let h = fnv1a64(token.as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            acc[(h % self.dimension as u64) as usize] += sign;
        }
        Embedding::normalized(acc)
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(MOCK_DIMENSION)
    }
}

impl Embedder for MockEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        check_embed_inputs(texts)?;
        Ok(texts.iter().map(|t| self.embed_str(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text_is_first_basis_vector() {
        let e = MockEmbedder::default();
        let out = e.embed_texts(&["".into(), "".into()]).unwrap();
        for v in out {
            assert_eq!(v.0[0], 1.0);
            assert!(v.0[1..].iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn same_tokens_same_vector() {
        let e = MockEmbedder::default();
        let a = e.embed_str("set alarm time");
        let b = e.embed_str("Set  ALARM time!");
        assert_eq!(a, b);
        assert!((cosine(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_matches_scalar_reimplementation() {
        // Reference: explicit per-token FNV-1a loop and dense cosine.
        fn fnv(s: &str) -> u64 {
            let mut h: u64 = 0xcbf29ce484222325;
            for b in s.bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            h
        }
        fn vec_of(words: &[&str]) -> [f64; 256] {
            let mut v = [0.0; 256];
            for w in words {
                let h = fnv(w);
                v[(h % 256) as usize] += if h & (1 << 63) != 0 { -1.0 } else { 1.0 };
            }
            v
        }
        let a = vec_of(&["wifi", "toggle"]);
        let b = vec_of(&["calendar", "event", "reminder"]);
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let expected = dot / (na * nb);
        let e = MockEmbedder::default();
        let got = cosine(
            &e.embed_str("wifi toggle"),
            &e.embed_str("calendar event reminder"),
        );
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn oversized_input_rejected() {
        let e = MockEmbedder::default();
        assert!(e.embed_texts(&["a".repeat(8193)]).is_err());
        assert!(e.embed_texts(&[]).is_err());
    }

    proptest! {
        #[test]
        fn unit_norm_and_self_cosine(text in "[a-zA-Z0-9 ,.!]{0,80}") {
            let v = MockEmbedder::default().embed_str(&text);
            prop_assert!((v.norm() - 1.0).abs() <= 1e-9);
            prop_assert!((cosine(&v, &v) - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn permutation_invariant(words in proptest::collection::vec("[a-z]{1,6}", 0..8), seed in any::<u64>()) {
            let mut shuffled = words.clone();
            let n = shuffled.len();
            if n > 1 {
                shuffled.rotate_left((seed % n as u64) as usize);
            }
            let e = MockEmbedder::default();
            prop_assert_eq!(e.embed_str(&words.join(" ")), e.embed_str(&shuffled.join(" , ").to_uppercase()));
        }
    }
}
