//! Adversary simulation: token-count inflation generators and the dataset
//! pipeline that turns a benign corpus into labeled inflated variants.
//!
//! Injection positions are tracked so metrics can be stratified and the
//! original trace recovered; they are never part of what an auditor sees.

mod index;
mod strategies;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, EmbeddingProvider};
use crate::error::{invalid, Result};
use crate::record::{InflationKind, InflationMeta, Label, RecordLine, ServiceRecord};
use crate::text::{TokenId, Tokenizer, Vocabulary, UNK_ID};

pub use index::{NeighborIndex, RetrievalIndex};
pub use strategies::{ada1_tokens, ada2_tokens, donor_segments, naive_tokens, retrieved_segments};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSource {
    Prompt,
    Reasoning,
    Answer,
}

impl AnchorSource {
    pub fn tokens(self, record: &ServiceRecord) -> &[TokenId] {
        match self {
            AnchorSource::Prompt => &record.prompt,
            AnchorSource::Reasoning => &record.reasoning,
            AnchorSource::Answer => &record.answer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionMode {
    /// Injected tokens follow the original trace.
    Append,
    /// Injected tokens are cut into runs and spliced at uniform positions.
    BlockInterleave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InflationConfig {
    pub kind: InflationKind,
    /// Inflation rates to emit; for misreports, `m = |R| + floor(k·|R|)`.
    pub ratios: Vec<f64>,
    pub anchor: AnchorSource,
    /// Mixture weights; empty means `kind` alone.
    pub strategy_weights: BTreeMap<InflationKind, f64>,
    pub segment_length: [usize; 2],
    pub insertion_mode: InsertionMode,
    pub block_range: [usize; 2],
    /// Nearest-neighbour candidates per anchor token.
    pub neighbor_pool: usize,
    /// Passages considered by retrieval inflation.
    pub retrieval_top: usize,
    pub seed: u64,
}

impl Default for InflationConfig {
    fn default() -> Self {
        InflationConfig {
            kind: InflationKind::Naive,
            ratios: vec![0.5, 1.0, 3.0],
            anchor: AnchorSource::Reasoning,
            strategy_weights: BTreeMap::new(),
            segment_length: [16, 64],
            insertion_mode: InsertionMode::BlockInterleave,
            block_range: [8, 64],
            neighbor_pool: 10,
            retrieval_top: 16,
            seed: 42,
        }
    }
}

impl InflationConfig {
    pub fn new(kind: InflationKind) -> Self {
        InflationConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn with_ratios(mut self, ratios: &[f64]) -> Self {
        self.ratios = ratios.to_vec();
        self
    }

    pub fn with_mode(mut self, mode: InsertionMode) -> Self {
        self.insertion_mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_anchor(mut self, anchor: AnchorSource) -> Self {
        self.anchor = anchor;
        self
    }

    pub fn with_weights(mut self, weights: &[(InflationKind, f64)]) -> Self {
        self.strategy_weights = weights.iter().copied().collect();
        if weights.len() > 1 {
            self.kind = InflationKind::Mixed;
        } else if let Some(&(k, _)) = weights.first() {
            self.kind = k;
        }
        self
    }

    /// Normalized mixture weights.
    pub fn weights(&self) -> Vec<(InflationKind, f64)> {
        if self.strategy_weights.is_empty() {
            return vec![(self.kind, 1.0)];
        }
        let total: f64 = self.strategy_weights.values().sum();
        self.strategy_weights.iter().map(|(&k, &w)| (k, w / total)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() || self.ratios.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(invalid("inflation ratios must be positive"));
        }
        let [lmin, lmax] = self.segment_length;
        let [bmin, bmax] = self.block_range;
        if lmin == 0 || lmin > lmax || bmin == 0 || bmin > bmax {
            return Err(invalid("length ranges must be non-empty and start at 1 or more"));
        }
        if self.kind == InflationKind::Mixed && self.strategy_weights.is_empty() {
            return Err(invalid("a mixed inflation needs strategy weights"));
        }
        if self.kind != InflationKind::Misreport {
            for (&k, &w) in &self.strategy_weights {
                if !InflationKind::ALL_INJECTING.contains(&k) {
                    return Err(invalid(format!("{k} cannot be mixed with injecting strategies")));
                }
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(invalid("strategy weights must be non-negative"));
                }
            }
            if self.weights().iter().all(|&(_, w)| w == 0.0) || self.weights().iter().any(|(_, w)| w.is_nan()) {
                return Err(invalid("strategy weights must not all be zero"));
            }
        }
        Ok(())
    }
}

/// Shared resources the generators draw on.
#[derive(Clone)]
pub struct InflationContext {
    pub provider: Arc<dyn EmbeddingProvider>,
    /// Candidate tokens for naive injection.
    pub vocab: Vec<TokenId>,
    pub neighbors: Option<Arc<NeighborIndex>>,
    pub retrieval: Option<Arc<RetrievalIndex>>,
}

impl std::fmt::Debug for InflationContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InflationContext")
            .field("provider", &self.provider.name())
            .field("vocab", &self.vocab.len())
            .finish()
    }
}

impl InflationContext {
    /// Known vocabulary tokens (the unknown token excluded) plus a
    /// neighbour index over them.
    pub fn new(provider: Arc<dyn EmbeddingProvider>, vocab: &Vocabulary) -> Result<Self> {
        let ids: Vec<TokenId> = vocab.known_ids().filter(|&t| t != UNK_ID).collect();
        let neighbors = Arc::new(NeighborIndex::build(ids.clone(), provider.as_ref())?);
        Ok(InflationContext {
            provider,
            vocab: ids,
            neighbors: Some(neighbors),
            retrieval: None,
        })
    }

    /// Adds a retrieval index over the corpus prompts, each owned by its
    /// record so a record never retrieves its own prompt.
    pub fn with_prompt_retrieval(mut self, corpus: &[ServiceRecord]) -> Result<Self> {
        let passages = corpus.iter().map(|r| r.prompt.clone()).collect();
        let owners = (0..corpus.len()).map(Some).collect();
        self.retrieval = Some(Arc::new(RetrievalIndex::build(
            passages,
            owners,
            self.provider.as_ref(),
        )?));
        Ok(self)
    }
}

/// A record after inflation, with the private bookkeeping needed for
/// metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct InflatedRecord {
    pub record: ServiceRecord,
    pub source_index: Option<usize>,
    pub original_len: usize,
    pub injected_count: usize,
    pub kind: InflationKind,
    pub target_ir: f64,
    pub achieved_ir: f64,
    /// Ascending positions of injected tokens in the inflated trace.
    pub injected_positions: Vec<usize>,
}

impl InflatedRecord {
    pub fn meta(&self) -> InflationMeta {
        InflationMeta {
            kind: self.kind,
            ir: self.target_ir,
            injected_positions: self.injected_positions.clone(),
        }
    }

    /// The trace with every injected token removed.
    pub fn original_reasoning(&self) -> Vec<TokenId> {
        let mut skip = self.injected_positions.iter().peekable();
        self.record
            .reasoning
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                if skip.peek() == Some(&i) {
                    skip.next();
                    false
                } else {
                    true
                }
            })
            .map(|(_, &t)| t)
            .collect()
    }

    pub fn to_line(&self, tokenizer: &dyn Tokenizer) -> RecordLine {
        RecordLine::from_record(&self.record, tokenizer, Some(&self.meta()))
    }
}

/// `floor(IR·count)`, robust to representation error in `IR`.
pub fn injection_budget(count: usize, ir: f64) -> usize {
    (ir * count as f64 + 1e-9).floor() as usize
}

/// Splices `injected` into `original`, returning the new trace and the
/// ascending positions the injected tokens landed on.
pub fn splice<R: Rng>(
    original: &[TokenId],
    injected: &[TokenId],
    mode: InsertionMode,
    block_range: [usize; 2],
    rng: &mut R,
) -> (Vec<TokenId>, Vec<usize>) {
    let mut out = Vec::with_capacity(original.len() + injected.len());
    let mut positions = Vec::with_capacity(injected.len());
    match mode {
        InsertionMode::Append => {
            out.extend_from_slice(original);
            positions.extend(out.len()..out.len() + injected.len());
            out.extend_from_slice(injected);
        }
        InsertionMode::BlockInterleave => {
            let mut runs: Vec<(usize, &[TokenId])> = Vec::new();
            let mut rest = injected;
            while !rest.is_empty() {
                let len = rng.random_range(block_range[0]..=block_range[1]).min(rest.len());
                let (run, tail) = rest.split_at(len);
                runs.push((rng.random_range(0..=original.len()), run));
                rest = tail;
            }
            // Stable sort keeps runs sharing a gap in generation order.
            runs.sort_by_key(|&(gap, _)| gap);
            let mut next = runs.iter().peekable();
            for gap in 0..=original.len() {
                while let Some(&&(g, run)) = next.peek() {
                    if g != gap {
                        break;
                    }
                    positions.extend(out.len()..out.len() + run.len());
                    out.extend_from_slice(run);
                    next.next();
                }
                if gap < original.len() {
                    out.push(original[gap]);
                }
            }
        }
    }
    (out, positions)
}

fn record_rng(seed: u64, record: usize, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((record as u64) << 8) | salt);
    rng
}

fn assemble(
    record: &ServiceRecord,
    source_index: Option<usize>,
    injected: &[TokenId],
    kind: InflationKind,
    ir: f64,
    config: &InflationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<InflatedRecord> {
    let original_len = record.reasoning.len();
    let (reasoning, positions) = splice(
        &record.reasoning,
        injected,
        config.insertion_mode,
        config.block_range,
        rng,
    );
    let mut inflated = record.clone();
    inflated.reported_reasoning = reasoning.len();
    inflated.reasoning = reasoning;
    inflated.label = Label::Inflated(kind);
    Ok(InflatedRecord {
        record: inflated,
        source_index,
        original_len,
        injected_count: injected.len(),
        kind,
        target_ir: ir,
        achieved_ir: crate::record::inflation_rate(original_len, injected.len())?,
        injected_positions: positions,
    })
}

fn check_ir(record: &ServiceRecord, ir: f64) -> Result<usize> {
    if !(ir > 0.0 && ir.is_finite()) {
        return Err(invalid("inflation rate must be positive"));
    }
    if record.reasoning.is_empty() {
        return Err(invalid("cannot inflate an empty trace"));
    }
    Ok(injection_budget(record.reasoning.len(), ir))
}

/// Injects `floor(IR·|R|)` uniformly random vocabulary tokens.
pub fn inflate_naive(
    record: &ServiceRecord,
    ir: f64,
    vocab: &[TokenId],
    config: &InflationConfig,
    seed: u64,
) -> Result<InflatedRecord> {
    let n = check_ir(record, ir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let injected = naive_tokens(n, vocab, &mut rng)?;
    assemble(record, None, &injected, InflationKind::Naive, ir, config, &mut rng)
}

/// Injects nearest vocabulary neighbours of random anchor tokens.
pub fn inflate_ada1(
    record: &ServiceRecord,
    ir: f64,
    neighbors: &NeighborIndex,
    provider: &dyn EmbeddingProvider,
    config: &InflationConfig,
    seed: u64,
) -> Result<InflatedRecord> {
    let n = check_ir(record, ir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors = config.anchor.tokens(record);
    let injected = ada1_tokens(n, anchors, neighbors, provider, config.neighbor_pool, &mut rng)?;
    assemble(record, None, &injected, InflationKind::Ada1, ir, config, &mut rng)
}

/// Injects tokens copied (with replacement) from the anchor sequence.
pub fn inflate_ada2(record: &ServiceRecord, ir: f64, config: &InflationConfig, seed: u64) -> Result<InflatedRecord> {
    let n = check_ir(record, ir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let injected = ada2_tokens(n, config.anchor.tokens(record), &mut rng)?;
    assemble(record, None, &injected, InflationKind::Ada2, ir, config, &mut rng)
}

/// Injects whole segments lifted from other records' traces.
pub fn inflate_ada3(
    record: &ServiceRecord,
    ir: f64,
    donors: &[&[TokenId]],
    config: &InflationConfig,
    seed: u64,
) -> Result<InflatedRecord> {
    let n = check_ir(record, ir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let injected = donor_segments(n, donors, config.segment_length, &mut rng)?;
    assemble(record, None, &injected, InflationKind::Ada3, ir, config, &mut rng)
}

/// Injects segments of the passages most similar to the anchor sequence.
pub fn inflate_ada4(
    record: &ServiceRecord,
    ir: f64,
    retrieval: &RetrievalIndex,
    provider: &dyn EmbeddingProvider,
    exclude: Option<usize>,
    config: &InflationConfig,
    seed: u64,
) -> Result<InflatedRecord> {
    let n = check_ir(record, ir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchor = provider.embed_block(config.anchor.tokens(record))?;
    let injected = retrieved_segments(
        n,
        retrieval,
        &anchor,
        exclude,
        config.retrieval_top,
        config.segment_length,
        &mut rng,
    )?;
    assemble(record, exclude, &injected, InflationKind::Ada4, ir, config, &mut rng)
}

/// Reports `floor(multiplier·|R|)` reasoning tokens without touching them.
pub fn misreport(record: &ServiceRecord, multiplier: f64) -> Result<InflatedRecord> {
    if !(multiplier > 1.0 && multiplier.is_finite()) {
        return Err(invalid("a misreport multiplier must exceed 1"));
    }
    let original_len = record.reasoning.len();
    let m = injection_budget(original_len, multiplier);
    let mut inflated = record.clone();
    inflated.reported_reasoning = m;
    inflated.label = Label::Inflated(InflationKind::Misreport);
    Ok(InflatedRecord {
        record: inflated,
        source_index: None,
        original_len,
        injected_count: m - original_len,
        kind: InflationKind::Misreport,
        target_ir: multiplier - 1.0,
        achieved_ir: crate::record::inflation_rate(original_len, m - original_len).unwrap_or(0.0),
        injected_positions: Vec::new(),
    })
}

struct RecordSources<'a> {
    index: usize,
    record: &'a ServiceRecord,
    corpus: &'a [ServiceRecord],
    donors: &'a [usize],
    anchor_embedding: Option<Embedding>,
}

fn generate(
    kind: InflationKind,
    n: usize,
    src: &mut RecordSources<'_>,
    ctx: &InflationContext,
    config: &InflationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TokenId>> {
    let anchors = config.anchor.tokens(src.record);
    match kind {
        InflationKind::Naive => naive_tokens(n, &ctx.vocab, rng),
        InflationKind::Ada1 => {
            let index = ctx
                .neighbors
                .as_deref()
                .ok_or_else(|| invalid("similar-token inflation needs a neighbour index"))?;
            ada1_tokens(n, anchors, index, ctx.provider.as_ref(), config.neighbor_pool, rng)
        }
        InflationKind::Ada2 => ada2_tokens(n, anchors, rng),
        InflationKind::Ada3 => {
            // One donor at a time, never the record itself.
            let others = src.donors.iter().filter(|&&d| d != src.index).count();
            if others == 0 {
                return Err(invalid("segment inflation needs at least one other non-empty record"));
            }
            let pick = *src
                .donors
                .iter()
                .filter(|&&d| d != src.index)
                .nth(rng.random_range(0..others))
                .expect("in range");
            donor_segments(n, &[src.corpus[pick].reasoning.as_slice()], config.segment_length, rng)
        }
        InflationKind::Ada4 => {
            let index = ctx
                .retrieval
                .as_deref()
                .ok_or_else(|| invalid("retrieval inflation needs a retrieval index"))?;
            if src.anchor_embedding.is_none() {
                src.anchor_embedding = Some(ctx.provider.embed_block(anchors)?);
            }
            let anchor = src.anchor_embedding.as_ref().expect("just set");
            retrieved_segments(
                n,
                index,
                anchor,
                Some(src.index),
                config.retrieval_top,
                config.segment_length,
                rng,
            )
        }
        InflationKind::Misreport | InflationKind::Mixed => Err(invalid(format!("{kind} does not generate tokens"))),
    }
}

/// Inflates every non-empty record of `corpus` at every ratio in the config.
/// Output order is record-major, ratio-minor.
pub fn inflate_dataset(
    corpus: &[ServiceRecord],
    ctx: &InflationContext,
    config: &InflationConfig,
) -> Result<Vec<InflatedRecord>> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(invalid("cannot inflate an empty corpus"));
    }
    let donors = donor_indices(corpus);
    let mut out = Vec::with_capacity(corpus.len() * config.ratios.len());
    for i in 0..corpus.len() {
        out.extend(inflate_with_donors(corpus, i, &donors, ctx, config)?);
    }
    Ok(out)
}

/// Record `index` of `corpus` at every ratio in the config, exactly as
/// [`inflate_dataset`] would produce it. Empty traces yield nothing.
///
/// The record gets one pool of `floor(|R|·max K)` tokens assembled chunk by
/// chunk from the weighted strategies; ratio `k` uses the pool's first
/// `floor(|R|·k)` tokens, so smaller ratios inject subsets of larger ones.
pub fn inflate_record_ratios(
    corpus: &[ServiceRecord],
    index: usize,
    ctx: &InflationContext,
    config: &InflationConfig,
) -> Result<Vec<InflatedRecord>> {
    config.validate()?;
    if index >= corpus.len() {
        return Err(invalid(format!(
            "record {index} is outside a corpus of {}",
            corpus.len()
        )));
    }
    inflate_with_donors(corpus, index, &donor_indices(corpus), ctx, config)
}

fn donor_indices(corpus: &[ServiceRecord]) -> Vec<usize> {
    (0..corpus.len()).filter(|&i| !corpus[i].reasoning.is_empty()).collect()
}

fn inflate_with_donors(
    corpus: &[ServiceRecord],
    i: usize,
    donors: &[usize],
    ctx: &InflationContext,
    config: &InflationConfig,
) -> Result<Vec<InflatedRecord>> {
    let record = &corpus[i];
    if record.reasoning.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(config.ratios.len());
    if config.kind == InflationKind::Misreport {
        for &k in &config.ratios {
            let mut r = misreport(record, 1.0 + k)?;
            r.source_index = Some(i);
            out.push(r);
        }
        return Ok(out);
    }
    let weights = config.weights();
    let k_max = config.ratios.iter().cloned().fold(0.0, f64::max);
    let mut rng = record_rng(config.seed, i, 0);
    let n_max = injection_budget(record.reasoning.len(), k_max);
    let mut src = RecordSources {
        index: i,
        record,
        corpus,
        donors,
        anchor_embedding: None,
    };
    let mut pool = Vec::with_capacity(n_max + config.segment_length[1]);
    while pool.len() < n_max {
        let kind = pick_weighted(&weights, &mut rng);
        let chunk = rng
            .random_range(config.block_range[0]..=config.block_range[1])
            .min(n_max - pool.len());
        pool.extend(generate(kind, chunk, &mut src, ctx, config, &mut rng)?);
    }
    pool.truncate(n_max);
    for (j, &k) in config.ratios.iter().enumerate() {
        let n = injection_budget(record.reasoning.len(), k);
        let mut rng = record_rng(config.seed, i, 1 + j as u64);
        out.push(assemble(record, Some(i), &pool[..n], config.kind, k, config, &mut rng)?);
    }
    Ok(out)
}

fn pick_weighted<R: Rng>(weights: &[(InflationKind, f64)], rng: &mut R) -> InflationKind {
    let mut x: f64 = rng.random();
    for &(k, w) in weights {
        if x < w {
            return k;
        }
        x -= w;
    }
    weights
        .iter()
        .rev()
        .find(|&&(_, w)| w > 0.0)
        .map(|&(k, _)| k)
        .expect("validated weights")
}
