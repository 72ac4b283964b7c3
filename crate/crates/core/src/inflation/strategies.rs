use rand::seq::IndexedRandom;
use rand::Rng;

use super::index::{NeighborIndex, RetrievalIndex};
use crate::embedding::{Embedding, EmbeddingProvider};
use crate::error::{invalid, Result};
use crate::text::TokenId;

/// `n` uniform draws from the vocabulary.
pub fn naive_tokens<R: Rng>(n: usize, vocab: &[TokenId], rng: &mut R) -> Result<Vec<TokenId>> {
    if vocab.is_empty() {
        return Err(invalid("naive inflation needs a non-empty vocabulary"));
    }
    Ok((0..n).map(|_| *vocab.choose(rng).expect("non-empty")).collect())
}

/// For each draw, a random anchor token and then a uniform pick among its
/// `pool` nearest vocabulary neighbours.
pub fn ada1_tokens<R: Rng>(
    n: usize,
    anchors: &[TokenId],
    index: &NeighborIndex,
    provider: &dyn EmbeddingProvider,
    pool: usize,
    rng: &mut R,
) -> Result<Vec<TokenId>> {
    if anchors.is_empty() {
        return Err(invalid("similar-token inflation needs a non-empty anchor"));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let anchor = *anchors.choose(rng).expect("non-empty");
        let near = index.neighbors(anchor, provider, pool.max(1))?;
        out.push(
            *near
                .choose(rng)
                .ok_or_else(|| invalid("vocabulary has no neighbours"))?,
        );
    }
    Ok(out)
}

/// `n` draws with replacement from the anchor sequence.
pub fn ada2_tokens<R: Rng>(n: usize, anchors: &[TokenId], rng: &mut R) -> Result<Vec<TokenId>> {
    if anchors.is_empty() {
        return Err(invalid("copy inflation needs a non-empty anchor"));
    }
    Ok((0..n).map(|_| *anchors.choose(rng).expect("non-empty")).collect())
}

fn segment<'a, R: Rng>(source: &'a [TokenId], lengths: [usize; 2], rng: &mut R) -> &'a [TokenId] {
    let len = rng.random_range(lengths[0]..=lengths[1]).min(source.len());
    let start = rng.random_range(0..=source.len() - len);
    &source[start..start + len]
}

/// Whole verbatim segments from donor traces until at least `n` tokens are
/// collected; the overshoot is below the maximum segment length.
pub fn donor_segments<R: Rng>(
    n: usize,
    donors: &[&[TokenId]],
    lengths: [usize; 2],
    rng: &mut R,
) -> Result<Vec<TokenId>> {
    let donors: Vec<&[TokenId]> = donors.iter().copied().filter(|d| !d.is_empty()).collect();
    if donors.is_empty() {
        return Err(invalid("segment inflation needs a non-empty donor corpus"));
    }
    let mut out = Vec::with_capacity(n + lengths[1]);
    while out.len() < n {
        let donor = donors.choose(rng).expect("non-empty");
        out.extend_from_slice(segment(donor, lengths, rng));
    }
    Ok(out)
}

/// Segments cut from the `top` passages most similar to `anchor`, drawn
/// until at least `n` tokens are collected.
#[allow(clippy::too_many_arguments)]
pub fn retrieved_segments<R: Rng>(
    n: usize,
    index: &RetrievalIndex,
    anchor: &Embedding,
    exclude: Option<usize>,
    top: usize,
    lengths: [usize; 2],
    rng: &mut R,
) -> Result<Vec<TokenId>> {
    let ranked = index.query(anchor, top.max(1), exclude);
    if ranked.is_empty() {
        return Err(invalid("retrieval inflation needs a non-empty index"));
    }
    let mut out = Vec::with_capacity(n + lengths[1]);
    while out.len() < n {
        let passage = index.passage(*ranked.choose(rng).expect("non-empty"));
        out.extend_from_slice(segment(passage, lengths, rng));
    }
    Ok(out)
}
