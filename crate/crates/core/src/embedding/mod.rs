//! Embedding providers and the vector arithmetic shared by fingerprints and
//! matching heads.
//!
//! Embeddings are stored at 32-bit precision because that is what gets
//! serialized into fingerprints and committed to; arithmetic on them runs in
//! `f64`.

mod external;
mod synthetic;

use std::ops::Deref;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::text::TokenId;

pub use external::ExternalProvider;
pub use synthetic::SyntheticProvider;

/// Default embedding width.
pub const DEFAULT_DIM: usize = 384;

/// An immutable, cheaply clonable embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Arc<[f32]>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Self {
        Embedding(values.into())
    }

    pub fn zeros(dim: usize) -> Self {
        Embedding::new(vec![0.0; dim])
    }

    /// Builds an `f32` embedding from `f64` values.
    pub fn from_f64(values: &[f64]) -> Self {
        Embedding(values.iter().map(|&v| v as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Little-endian `f32` bytes.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.0.len() * 4);
        self.write_le_bytes(&mut out);
        out
    }

    pub fn write_le_bytes(&self, out: &mut Vec<u8>) {
        for v in self.0.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(4) {
            return Err(invalid(format!(
                "embedding byte length {} is not a multiple of 4",
                bytes.len()
            )));
        }
        Ok(Embedding(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ))
    }
}

impl Deref for Embedding {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

/// The auditor-designated embedding function.
///
/// Providers are deterministic: identical inputs give bit-identical vectors
/// for the lifetime of the provider, and every vector has [`dim`] entries.
///
/// [`dim`]: EmbeddingProvider::dim
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed_token(&self, token: TokenId) -> Result<Embedding>;

    /// Embeds a whole token sequence. Fails on an empty sequence.
    fn embed_block(&self, tokens: &[TokenId]) -> Result<Embedding>;

    fn embed_tokens(&self, tokens: &[TokenId]) -> Result<Vec<Embedding>> {
        tokens.iter().map(|&t| self.embed_token(t)).collect()
    }
}

fn check_dims(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(invalid(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// Component-wise mean. The result is not re-normalized.
pub fn average_embeddings(embeddings: &[Embedding]) -> Result<Embedding> {
    let first = embeddings
        .first()
        .ok_or_else(|| invalid("cannot average an empty list of embeddings"))?;
    let mut acc = vec![0.0f64; first.dim()];
    for e in embeddings {
        check_dims(first, e)?;
        for (a, &v) in acc.iter_mut().zip(e.iter()) {
            *a += v as f64;
        }
    }
    let n = embeddings.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(Embedding::from_f64(&acc))
}

/// Cosine similarity plus a flag raised when either side was all zeros.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    pub degenerate: bool,
}

/// `a·b / (‖a‖‖b‖)`; a zero vector on either side yields 0 with the
/// degenerate flag set.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<Cosine> {
    check_dims(a, b)?;
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Cosine {
        value: (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec())
    }

    #[test]
    fn average_basics() {
        let v = emb(&[0.5, -1.0, 2.0]);
        assert_eq!(average_embeddings(std::slice::from_ref(&v)).unwrap(), v);
        let neg = emb(&[-0.5, 1.0, -2.0]);
        assert_eq!(average_embeddings(&[v.clone(), neg]).unwrap(), emb(&[0.0, 0.0, 0.0]));
        assert!(average_embeddings(&[]).is_err());
        assert!(average_embeddings(&[v, emb(&[1.0])]).is_err());
    }

    #[test]
    fn cosine_basics() {
        let v = [0.3f32, -0.4, 0.5];
        assert!((cosine_similarity(&v, &v).unwrap().value - 1.0).abs() < 1e-12);
        let neg = [-0.3f32, 0.4, -0.5];
        assert!((cosine_similarity(&v, &neg).unwrap().value + 1.0).abs() < 1e-12);
        let c = cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(c.value, 0.0);
        assert!(!c.degenerate);
        let z = cosine_similarity(&[0.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(
            z,
            Cosine {
                value: 0.0,
                degenerate: true
            }
        );
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn le_bytes_round_trip() {
        let v = emb(&[1.5, -0.0, f32::MIN_POSITIVE, 3.25e-8]);
        let bytes = v.to_le_bytes();
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[..4], &1.5f32.to_le_bytes());
        assert_eq!(Embedding::from_le_bytes(&bytes).unwrap(), v);
        assert!(Embedding::from_le_bytes(&bytes[..3]).is_err());
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in proptest::collection::vec(-1.0f32..1.0, 8),
            b in proptest::collection::vec(-1.0f32..1.0, 8),
            s in 0.1f32..10.0,
        ) {
            let ab = cosine_similarity(&a, &b).unwrap().value;
            let ba = cosine_similarity(&b, &a).unwrap().value;
            prop_assert_eq!(ab, ba);
            let scaled: Vec<f32> = a.iter().map(|x| x * s).collect();
            let sb = cosine_similarity(&scaled, &b).unwrap().value;
            prop_assert!((ab - sb).abs() < 1e-5);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
