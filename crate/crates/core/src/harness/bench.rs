use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{invalid, Result};
use crate::merkle::{empty_root, BlockLeafHasher, MerkleTree};

/// Tokens per block when building benchmark trees.
pub const BENCH_BLOCK_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub tokens: usize,
    pub dim: usize,
    pub repeats: usize,
    pub min_secs: f64,
    pub median_secs: f64,
    pub max_secs: f64,
}

fn random_embedding<R: Rng>(dim: usize, rng: &mut R) -> Embedding {
    Embedding::new((0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
}

/// Fingerprints `n` tokens in blocks of [`BENCH_BLOCK_SIZE`] and builds the
/// tree. Embeddings are supplied so that only hashing is measured.
pub fn build_tree_from_embeddings(blocks: &[Embedding], tokens: &[Embedding]) -> Result<MerkleTree> {
    let mut leaves = Vec::with_capacity(tokens.len());
    for (b, chunk) in tokens.chunks(BENCH_BLOCK_SIZE).enumerate() {
        let block = blocks.get(b).ok_or_else(|| invalid("too few block embeddings"))?;
        let mut hasher = BlockLeafHasher::new(block);
        for t in chunk {
            leaves.push(hasher.leaf(t)?);
        }
    }
    Ok(MerkleTree::from_leaf_hashes(leaves))
}

/// Wall-clock tree construction per `(N, d)`, single-threaded, with
/// min/median/max over `repeats` runs.
pub fn bench_merkle(token_counts: &[usize], dims: &[usize], repeats: usize, seed: u64) -> Result<Vec<TimingRow>> {
    if repeats == 0 {
        return Err(invalid("benchmark needs at least one repeat"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &dim in dims {
        for &n in token_counts {
            let tokens: Vec<Embedding> = (0..n).map(|_| random_embedding(dim, &mut rng)).collect();
            let blocks: Vec<Embedding> = (0..n.div_ceil(BENCH_BLOCK_SIZE))
                .map(|_| random_embedding(dim, &mut rng))
                .collect();
            let mut times = Vec::with_capacity(repeats);
            let mut root = empty_root();
            for _ in 0..repeats {
                let start = Instant::now();
                let tree = build_tree_from_embeddings(&blocks, &tokens)?;
                times.push(start.elapsed().as_secs_f64());
                root = std::hint::black_box(tree.root());
            }
            std::hint::black_box(root);
            times.sort_by(f64::total_cmp);
            rows.push(TimingRow {
                tokens: n,
                dim,
                repeats,
                min_secs: times[0],
                median_secs: times[repeats / 2],
                max_secs: times[repeats - 1],
            });
        }
    }
    Ok(rows)
}

/// Least-squares line through `(x, y)`: `(slope, intercept, R²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, my - slope * mx, r2))
}

pub fn write_timing_csv<W: Write>(writer: W, rows: &[TimingRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
