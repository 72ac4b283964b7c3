use std::collections::{BTreeMap, HashMap};
use std::sync::RwLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Embedding, EmbeddingProvider, DEFAULT_DIM};
use crate::error::{invalid, Result};
use crate::text::TokenId;

/// Deterministic stand-in for a sentence encoder.
///
/// A token's vector is a unit-normalized Gaussian draw from a ChaCha stream
/// keyed by `(seed, token id)`. A block's vector is the unit-normalized mean
/// of its member tokens, so members correlate with their block. Block
/// vectors depend only on the token multiset.
#[derive(Debug)]
pub struct SyntheticProvider {
    name: String,
    seed: u64,
    dim: usize,
    cache: RwLock<HashMap<TokenId, Embedding>>,
}

impl SyntheticProvider {
    pub fn new(seed: u64, dim: usize) -> Self {
        SyntheticProvider {
            name: format!("synthetic-{seed}-{dim}"),
            seed,
            dim,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn generate(&self, token: TokenId) -> Embedding {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(b"tokenemb");
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(token.0 as u64);
        let draws: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = draws.iter().map(|v| v * v).sum::<f64>().sqrt();
        Embedding(draws.iter().map(|v| (v / norm) as f32).collect())
    }
}

impl Default for SyntheticProvider {
    fn default() -> Self {
        SyntheticProvider::new(42, DEFAULT_DIM)
    }
}

impl EmbeddingProvider for SyntheticProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_token(&self, token: TokenId) -> Result<Embedding> {
        if let Some(e) = self.cache.read().unwrap().get(&token) {
            return Ok(e.clone());
        }
        let e = self.generate(token);
        self.cache.write().unwrap().entry(token).or_insert(e.clone());
        Ok(e)
    }

    fn embed_block(&self, tokens: &[TokenId]) -> Result<Embedding> {
        if tokens.is_empty() {
            return Err(invalid("cannot embed an empty block"));
        }
        // Summing in id order keeps the result independent of token order.
        let mut counts: BTreeMap<TokenId, u32> = BTreeMap::new();
        for &t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        if counts.len() == 1 {
            return self.embed_token(tokens[0]);
        }
        let mut acc = vec![0.0f64; self.dim];
        for (&t, &c) in &counts {
            let e = self.embed_token(t)?;
            let c = c as f64;
            for (a, &v) in acc.iter_mut().zip(e.iter()) {
                *a += c * v as f64;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(Embedding::zeros(self.dim));
        }
        Ok(Embedding::from_f64(&acc.iter().map(|v| v / norm).collect::<Vec<_>>()))
    }
}
