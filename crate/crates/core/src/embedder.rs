//! Model-free embedding provider for tests and desk-scale benchmarks.

use alloc::string::String;
use alloc::vec::Vec;

use crate::router::{Embedding, EmbeddingProvider, PoolingMethod, RouterError};

/// Maps every token to a fixed unit vector derived from a seeded hash of the
/// token, then pools the token vectors into a sentence embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
    pooling: PoolingMethod,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64, pooling: PoolingMethod) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim, seed, pooling }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pooling(&self) -> PoolingMethod {
        self.pooling
    }

    pub fn token_vector(&self, token: &str) -> Embedding {
        let mut state = fnv1a(token.as_bytes()) ^ self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut values: Vec<f64> = (0..self.dim)
            .map(|_| {
                let bits = splitmix64(&mut state) >> 11;
                (bits as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        let norm = libm::sqrt(values.iter().map(|v| v * v).sum::<f64>());
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        } else {
            values[0] = 1.0;
        }
        Embedding::new(values).expect("hash components are finite")
    }

    pub fn token_embeddings(&self, text: &str) -> Result<Vec<Embedding>, RouterError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(RouterError::EmptySequence);
        }
        Ok(tokens.iter().map(|t| self.token_vector(t)).collect())
    }

    pub fn embed_one(&self, text: &str) -> Result<Embedding, RouterError> {
        self.pooling.pool(&self.token_embeddings(text)?)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, RouterError> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

/// Lower-cased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.chars().flat_map(char::to_lowercase).collect())
        .collect()
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub(crate) fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
