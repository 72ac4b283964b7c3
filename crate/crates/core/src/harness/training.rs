//! Training sets for the matching heads and the DeepSets verifier, and the
//! artifact bundle an experiment audits with.

use std::path::Path;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{average_embeddings, Embedding, EmbeddingProvider};
use crate::error::{invalid, AuditError, Result};
use crate::inflation::{inflate_record_ratios, InflatedRecord, InflationConfig, InflationContext};
use crate::matching::{
    score_block_to_answer, score_token_to_block, train_matching_head, HeadKind, LabeledPairs, MatchingHead, TrainConfig,
};
use crate::params::default_per_block_sample;
use crate::protocol::{sample_offsets, AuditHeads};
use crate::record::{block_count, InflationKind, ServiceRecord};
use crate::text::TokenId;
use crate::verifier::{train_deepsets, DeepSetsModel, LabeledScoreSets, MatchScorePair};

/// How training examples are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingPlan {
    /// Block sizes examples are cut at, chosen uniformly.
    pub block_sizes: Vec<usize>,
    /// Fraction of a block's tokens sampled for token-to-block examples.
    pub sample_fraction: [f64; 2],
    pub ratios: Vec<f64>,
    pub token_to_block_kinds: Vec<InflationKind>,
    pub block_to_answer_kinds: Vec<InflationKind>,
    pub deepsets_kinds: Vec<InflationKind>,
    /// Share of inflated examples whose block is made only of injected
    /// tokens; the rest are blocks of the spliced trace.
    pub pure_share: f64,
    /// Examples per class drawn from each record.
    pub per_record: usize,
    /// Verifier sets taken from each inflated audit. A benign audit needs one
    /// accepted round but an inflated one must be rejected in every round, so
    /// inflated records contribute a first round plus single-block rounds.
    pub inflated_rounds: usize,
    pub initial_ratio: f64,
    pub seed: u64,
}

impl Default for TrainingPlan {
    fn default() -> Self {
        use InflationKind::*;
        TrainingPlan {
            block_sizes: vec![256, 512, 1024],
            sample_fraction: [1.0 / 32.0, 1.0 / 8.0],
            ratios: vec![0.3, 0.5, 1.0, 2.0, 3.0],
            token_to_block_kinds: vec![Naive, Ada1, Ada2],
            block_to_answer_kinds: vec![Naive, Ada1, Ada2, Ada3, Ada4],
            deepsets_kinds: vec![Naive, Ada1, Ada2, Ada3, Ada4],
            pure_share: 0.5,
            per_record: 4,
            inflated_rounds: 2,
            initial_ratio: 0.3,
            seed: 42,
        }
    }
}

impl TrainingPlan {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.sample_fraction;
        if self.block_sizes.is_empty() || self.block_sizes.contains(&0) {
            return Err(invalid("training needs positive block sizes"));
        }
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(invalid("sample fraction range must lie in (0, 1]"));
        }
        if self.ratios.is_empty() || self.ratios.iter().any(|&r| r.is_nan() || r <= 0.0 || !r.is_finite()) {
            return Err(invalid("training ratios must be positive"));
        }
        for kinds in [
            &self.token_to_block_kinds,
            &self.block_to_answer_kinds,
            &self.deepsets_kinds,
        ] {
            if kinds.is_empty()
                || kinds
                    .iter()
                    .any(|k| matches!(k, InflationKind::Misreport | InflationKind::Mixed))
            {
                return Err(invalid("training kinds must be token-generating strategies"));
            }
        }
        if !(0.0..=1.0).contains(&self.pure_share) || self.per_record == 0 || self.inflated_rounds == 0 {
            return Err(invalid(
                "pure share must lie in [0, 1] and per-record counts be positive",
            ));
        }
        Ok(())
    }
}

fn inflate_at<R: Rng>(
    corpus: &[ServiceRecord],
    index: usize,
    kind: InflationKind,
    ratios: &[f64],
    ctx: &InflationContext,
    rng: &mut R,
) -> Result<InflatedRecord> {
    let ir = *ratios.choose(rng).expect("validated");
    let cfg = InflationConfig::new(kind).with_ratios(&[ir]).with_seed(rng.random());
    inflate_record_ratios(corpus, index, ctx, &cfg)?
        .pop()
        .ok_or_else(|| invalid("record has no reasoning to inflate"))
}

/// A block of the inflated record for a negative example: either a run of
/// injected tokens alone or a block of the spliced trace that holds at least
/// one injected token.
fn inflated_block<R: Rng>(inflated: &InflatedRecord, beta: usize, pure: bool, rng: &mut R) -> Vec<TokenId> {
    let trace = &inflated.record.reasoning;
    let positions = &inflated.injected_positions;
    if pure {
        let len = beta.min(positions.len());
        let start = rng.random_range(0..=positions.len() - len);
        return positions[start..start + len].iter().map(|&p| trace[p]).collect();
    }
    let p = *positions.choose(rng).expect("inflated records inject something");
    let b = p / beta;
    trace[b * beta..((b + 1) * beta).min(trace.len())].to_vec()
}

fn random_block<'a, R: Rng>(trace: &'a [TokenId], beta: usize, rng: &mut R) -> &'a [TokenId] {
    let b = rng.random_range(0..block_count(trace.len(), beta));
    &trace[b * beta..((b + 1) * beta).min(trace.len())]
}

fn sampled_mean<R: Rng>(
    block: &[TokenId],
    fraction: [f64; 2],
    provider: &dyn EmbeddingProvider,
    rng: &mut R,
) -> Result<Embedding> {
    let f = rng.random_range(fraction[0]..=fraction[1]);
    let k = ((f * block.len() as f64).round() as usize).max(1);
    let tokens = sample_offsets(block.len(), k, rng)
        .into_iter()
        .map(|o| provider.embed_token(block[o]))
        .collect::<Result<Vec<_>>>()?;
    average_embeddings(&tokens)
}

/// Token-to-block pairs (sampled-token mean, block embedding), balanced
/// between benign blocks and blocks carrying injected tokens.
pub fn token_to_block_pairs(
    corpus: &[ServiceRecord],
    ctx: &InflationContext,
    plan: &TrainingPlan,
) -> Result<LabeledPairs> {
    plan.validate()?;
    let provider = ctx.provider.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut data = LabeledPairs::new();
    for (i, record) in corpus.iter().enumerate() {
        if record.reasoning.is_empty() {
            continue;
        }
        for _ in 0..plan.per_record {
            let beta = *plan.block_sizes.choose(&mut rng).expect("validated");
            let block = random_block(&record.reasoning, beta, &mut rng);
            let a = sampled_mean(block, plan.sample_fraction, provider, &mut rng)?;
            data.push(a, provider.embed_block(block)?, false);

            let kind = *plan.token_to_block_kinds.choose(&mut rng).expect("validated");
            let inflated = inflate_at(corpus, i, kind, &plan.ratios, ctx, &mut rng)?;
            let pure = rng.random_bool(plan.pure_share);
            let block = inflated_block(&inflated, beta, pure, &mut rng);
            let a = sampled_mean(&block, plan.sample_fraction, provider, &mut rng)?;
            data.push(a, provider.embed_block(&block)?, true);
        }
    }
    Ok(data)
}

/// Block-to-answer pairs (block embedding, answer embedding), balanced the
/// same way.
pub fn block_to_answer_pairs(
    corpus: &[ServiceRecord],
    ctx: &InflationContext,
    plan: &TrainingPlan,
) -> Result<LabeledPairs> {
    plan.validate()?;
    let provider = ctx.provider.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0xba);
    let mut data = LabeledPairs::new();
    for (i, record) in corpus.iter().enumerate() {
        if record.reasoning.is_empty() || record.answer.is_empty() {
            continue;
        }
        let answer = provider.embed_block(&record.answer)?;
        for _ in 0..plan.per_record {
            let beta = *plan.block_sizes.choose(&mut rng).expect("validated");
            let block = random_block(&record.reasoning, beta, &mut rng);
            data.push(provider.embed_block(block)?, answer.clone(), false);

            let kind = *plan.block_to_answer_kinds.choose(&mut rng).expect("validated");
            let inflated = inflate_at(corpus, i, kind, &plan.ratios, ctx, &mut rng)?;
            let pure = rng.random_bool(plan.pure_share);
            let block = inflated_block(&inflated, beta, pure, &mut rng);
            data.push(provider.embed_block(&block)?, answer.clone(), true);
        }
    }
    Ok(data)
}

/// Scores one block the way the auditor does: `k` sampled tokens against the
/// block, and the block against the answer.
#[allow(clippy::too_many_arguments)]
pub fn score_block<R: Rng>(
    heads: &AuditHeads,
    provider: &dyn EmbeddingProvider,
    trace: &[TokenId],
    block_index: usize,
    block_size: usize,
    per_block_sample: usize,
    answer: &Embedding,
    rng: &mut R,
) -> Result<MatchScorePair> {
    let start = block_index * block_size;
    let block = &trace[start..(start + block_size).min(trace.len())];
    let block_embedding = provider.embed_block(block)?;
    let tokens = sample_offsets(block.len(), per_block_sample, rng)
        .into_iter()
        .map(|o| provider.embed_token(block[o]))
        .collect::<Result<Vec<_>>>()?;
    let s_tb = score_token_to_block(&heads.token_to_block, &tokens, &block_embedding)?;
    let s_ba = score_block_to_answer(&heads.block_to_answer, &block_embedding, answer)?;
    Ok(MatchScorePair::new(s_tb, s_ba, block_index))
}

/// Score sets shaped like audit rounds. Each benign record contributes one
/// round, a first round or a single block with equal probability. Each
/// inflated copy contributes the first `inflated_rounds` rounds of a
/// simulated audit: its first round, then one block per round.
pub fn deepsets_sets(
    corpus: &[ServiceRecord],
    ctx: &InflationContext,
    heads: &AuditHeads,
    plan: &TrainingPlan,
) -> Result<LabeledScoreSets> {
    plan.validate()?;
    let provider = ctx.provider.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0xd5);
    let mut data = LabeledScoreSets::new();
    let mut add = |trace: &[TokenId], answer: &Embedding, benign: bool, rng: &mut ChaCha8Rng| -> Result<()> {
        let beta = *plan.block_sizes.choose(rng).expect("validated");
        let alpha = block_count(trace.len(), beta);
        let first = ((plan.initial_ratio * alpha as f64 - 1e-9).ceil() as usize).clamp(1, alpha);
        let mut order: Vec<usize> = (0..alpha).collect();
        order.shuffle(rng);
        let mut rounds: Vec<&[usize]> = vec![&order[..first]];
        rounds.extend(order[first..].chunks(1));
        let rounds: Vec<&[usize]> = if benign {
            vec![rounds[if rounds.len() > 1 && rng.random_bool(0.5) { 1 } else { 0 }]]
        } else {
            rounds.into_iter().take(plan.inflated_rounds).collect()
        };
        let k = default_per_block_sample(beta);
        for blocks in rounds {
            let scores = blocks
                .iter()
                .map(|&b| score_block(heads, provider, trace, b, beta, k, answer, rng))
                .collect::<Result<Vec<_>>>()?;
            data.push(&scores, benign);
        }
        Ok(())
    };
    for (i, record) in corpus.iter().enumerate() {
        if record.reasoning.is_empty() || record.answer.is_empty() {
            continue;
        }
        let answer = provider.embed_block(&record.answer)?;
        add(&record.reasoning, &answer, true, &mut rng)?;
        let kind = *plan.deepsets_kinds.choose(&mut rng).expect("validated");
        let inflated = inflate_at(corpus, i, kind, &plan.ratios, ctx, &mut rng)?;
        add(&inflated.record.reasoning, &answer, false, &mut rng)?;
    }
    Ok(data)
}

/// Trained heads plus an optional DeepSets verifier.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub heads: AuditHeads,
    pub deepsets: Option<Arc<DeepSetsModel>>,
}

pub const TOKEN_TO_BLOCK_FILE: &str = "mh_tb.json";
pub const BLOCK_TO_ANSWER_FILE: &str = "mh_ba.json";
pub const DEEPSETS_FILE: &str = "deepsets.json";

impl Artifacts {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.heads.token_to_block.save(&dir.join(TOKEN_TO_BLOCK_FILE))?;
        self.heads.block_to_answer.save(&dir.join(BLOCK_TO_ANSWER_FILE))?;
        if let Some(ds) = &self.deepsets {
            ds.save(&dir.join(DEEPSETS_FILE))?;
        }
        Ok(())
    }

    /// Loads the heads (required) and the DeepSets model (if present).
    pub fn load(dir: &Path) -> Result<Self> {
        let need = |name: &str| {
            let p = dir.join(name);
            if p.exists() {
                Ok(p)
            } else {
                Err(AuditError::Config(format!("missing artifact {}", p.display())))
            }
        };
        let tb = MatchingHead::load(&need(TOKEN_TO_BLOCK_FILE)?)?;
        let ba = MatchingHead::load(&need(BLOCK_TO_ANSWER_FILE)?)?;
        let ds_path = dir.join(DEEPSETS_FILE);
        let deepsets = if ds_path.exists() {
            Some(Arc::new(DeepSetsModel::load(&ds_path)?))
        } else {
            None
        };
        Ok(Artifacts {
            heads: AuditHeads::new(Arc::new(tb), Arc::new(ba))?,
            deepsets,
        })
    }
}

/// Learning rate the desk-scale pipeline trains heads at. The reference
/// setting (`TrainConfig::matching_head`) barely moves a freshly initialized
/// head within three epochs over tens of thousands of pairs.
pub const DESK_HEAD_LEARNING_RATE: f64 = 1e-3;

/// Everything needed to train a full artifact set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArtifactConfig {
    pub plan: TrainingPlan,
    pub head: TrainConfig,
    pub deepsets: TrainConfig,
}

impl Default for ArtifactConfig {
    fn default() -> Self {
        ArtifactConfig {
            plan: TrainingPlan::default(),
            head: TrainConfig::matching_head().with_learning_rate(DESK_HEAD_LEARNING_RATE),
            deepsets: TrainConfig::deepsets(),
        }
    }
}

/// Trains both heads on `head_corpus` and the verifier on the disjoint
/// `verifier_corpus`, whose inflated copies are scored with the new heads.
pub fn train_artifacts(
    head_corpus: &[ServiceRecord],
    verifier_corpus: &[ServiceRecord],
    head_ctx: &InflationContext,
    verifier_ctx: &InflationContext,
    config: &ArtifactConfig,
) -> Result<Artifacts> {
    let tb_data = token_to_block_pairs(head_corpus, head_ctx, &config.plan)?;
    let tb = train_matching_head(HeadKind::TokenToBlock, &tb_data, &config.head)?;
    drop(tb_data);
    let ba_data = block_to_answer_pairs(head_corpus, head_ctx, &config.plan)?;
    let ba = train_matching_head(HeadKind::BlockToAnswer, &ba_data, &config.head)?;
    drop(ba_data);
    let heads = AuditHeads::new(Arc::new(tb), Arc::new(ba))?;
    let sets = deepsets_sets(verifier_corpus, verifier_ctx, &heads, &config.plan)?;
    let deepsets = train_deepsets(&sets, &config.deepsets)?;
    Ok(Artifacts {
        heads,
        deepsets: Some(Arc::new(deepsets)),
    })
}
