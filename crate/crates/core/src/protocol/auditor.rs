use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::messages::{
    audit_cost, decode_fingerprint, path_from_wire, AuditCost, AuditDecision, Challenge, FailureReason, ProviderReply,
    Refusal, Response, VerdictMessage, WireMessage,
};
use super::provider::ProviderEndpoint;
use super::AuditorView;
use crate::embedding::{Embedding, EmbeddingProvider};
use crate::error::{invalid, AuditError, Result};
use crate::matching::{score_block_to_answer, score_token_to_block, HeadKind, MatchingHead};
use crate::merkle::{NodeHash, TokenFingerprint};
use crate::params::{AuditParams, Evidence};
use crate::record::block_count;
use crate::verifier::{MatchScorePair, Verifier};

/// The two matching heads an auditor scores with.
#[derive(Debug, Clone)]
pub struct AuditHeads {
    pub token_to_block: Arc<MatchingHead>,
    pub block_to_answer: Arc<MatchingHead>,
}

impl AuditHeads {
    pub fn new(token_to_block: Arc<MatchingHead>, block_to_answer: Arc<MatchingHead>) -> Result<Self> {
        if token_to_block.kind() != HeadKind::TokenToBlock || block_to_answer.kind() != HeadKind::BlockToAnswer {
            return Err(AuditError::Config("matching heads are swapped or mislabelled".into()));
        }
        if token_to_block.dim() != block_to_answer.dim() {
            return Err(AuditError::Config(format!(
                "matching heads disagree on dimension: {} vs {}",
                token_to_block.dim(),
                block_to_answer.dim()
            )));
        }
        Ok(AuditHeads {
            token_to_block,
            block_to_answer,
        })
    }

    pub fn dim(&self) -> usize {
        self.token_to_block.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub audit_id: u64,
    pub decision: AuditDecision,
    /// ℓ: blocks audited. The first round contributes each of its blocks.
    pub rounds: usize,
    /// α: blocks implied by the claimed count.
    pub alpha: usize,
    /// Times the verifier was consulted.
    pub verifier_calls: usize,
    /// Audited block indices in audit order.
    pub audited_blocks: Vec<usize>,
    pub cost: AuditCost,
    /// `audited blocks / α`, zero when α is zero.
    pub exposed_block_fraction: f64,
    pub reason: Option<FailureReason>,
    /// Score pairs per verifier call, in order.
    pub round_scores: Vec<Vec<MatchScorePair>>,
}

impl AuditVerdict {
    pub fn is_flagged(&self) -> bool {
        self.decision == AuditDecision::FlaggedForInflation
    }

    pub fn to_message(&self) -> VerdictMessage {
        VerdictMessage {
            audit_id: self.audit_id,
            decision: self.decision,
            l: self.rounds,
            cost: self.cost,
            reason: self.reason,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuditOutcome {
    pub verdict: AuditVerdict,
    /// Every message exchanged, in order; empty unless requested.
    pub transcript: Vec<WireMessage>,
}

/// Score pairs already computed for one session, keyed by challenged block
/// and token indices.
///
/// Opened leaves are checked against the root before scoring, so a repeated
/// challenge against the same commitment and answer yields the same pair.
/// Auditors that share one memo must share heads; the memo resets itself
/// when the heads, root or answer change.
#[derive(Debug, Default)]
pub struct ScoreMemo {
    owner: Option<(usize, usize, NodeHash, Vec<crate::text::TokenId>)>,
    scores: HashMap<(usize, Vec<usize>), MatchScorePair>,
}

impl ScoreMemo {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn bind(&mut self, heads: &AuditHeads, view: &AuditorView) {
        let owner = (
            Arc::as_ptr(&heads.token_to_block) as usize,
            Arc::as_ptr(&heads.block_to_answer) as usize,
            view.commitment.root,
            view.answer.clone(),
        );
        if self.owner.as_ref() != Some(&owner) {
            self.scores.clear();
            self.owner = Some(owner);
        }
    }
}

/// Auditor configuration. `params.threshold` overrides the verifier's own.
#[derive(Clone)]
pub struct Auditor {
    pub heads: AuditHeads,
    pub verifier: Verifier,
    pub params: AuditParams,
    pub provider: Arc<dyn EmbeddingProvider>,
    pub keep_transcript: bool,
}

impl std::fmt::Debug for Auditor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Auditor")
            .field("params", &self.params)
            .field("verifier", &self.verifier.kind())
            .field("provider", &self.provider.name())
            .finish_non_exhaustive()
    }
}

/// Sorted offsets into a block of `block_len` tokens: `k` distinct ones when
/// the block is long enough, otherwise every offset plus draws with
/// replacement, so exactly `k` come back either way.
pub fn sample_offsets<R: Rng>(block_len: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut out = if block_len >= k {
        index::sample(rng, block_len, k).into_vec()
    } else {
        let mut all: Vec<usize> = (0..block_len).collect();
        all.extend((block_len..k).map(|_| rng.random_range(0..block_len)));
        all
    };
    out.sort_unstable();
    out
}

struct Opened {
    block: Embedding,
    tokens: Vec<Embedding>,
}

fn same_bits(a: &Embedding, b: &Embedding) -> bool {
    a.dim() == b.dim()
        && a.values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Checks a reply against the challenge and the commitment. Proof failures
/// take precedence over internal inconsistencies.
fn check_reply(
    challenge: &Challenge,
    reply: &ProviderReply,
    root: &NodeHash,
    claimed: usize,
    dim: usize,
) -> std::result::Result<Opened, FailureReason> {
    let response: &Response = match reply {
        ProviderReply::Refusal(_) => return Err(FailureReason::Refusal),
        ProviderReply::Response(r) => r,
    };
    let k = challenge.token_indices.len();
    if response.audit_id != challenge.audit_id
        || response.block_index != challenge.block_index
        || response.fingerprints.len() != k
        || response.paths.len() != k
        || response.block_embedding.dim() != dim
    {
        return Err(FailureReason::InconsistentResponse);
    }
    let mut fingerprints = Vec::with_capacity(k);
    for ((&index, encoded), wire) in challenge
        .token_indices
        .iter()
        .zip(&response.fingerprints)
        .zip(&response.paths)
    {
        let bytes = decode_fingerprint(encoded).ok_or(FailureReason::InconsistentResponse)?;
        let path = path_from_wire(wire).ok_or(FailureReason::MerkleMismatch)?;
        if !path.matches_index(index, claimed) || path.root_from_leaf(crate::merkle::hash_bytes(&bytes)) != *root {
            return Err(FailureReason::MerkleMismatch);
        }
        let fp = TokenFingerprint::from_bytes(&bytes).map_err(|_| FailureReason::InconsistentResponse)?;
        fingerprints.push(fp);
    }
    let block = response.block_embedding.clone();
    if !block.is_finite() {
        return Err(FailureReason::InconsistentResponse);
    }
    let mut tokens = Vec::with_capacity(k);
    for fp in fingerprints {
        if fp.dim() != dim || !same_bits(&fp.block, &block) || !fp.token.is_finite() {
            return Err(FailureReason::InconsistentResponse);
        }
        tokens.push(fp.token);
    }
    Ok(Opened { block, tokens })
}

impl Auditor {
    pub fn new(
        heads: AuditHeads,
        verifier: Verifier,
        params: AuditParams,
        provider: Arc<dyn EmbeddingProvider>,
    ) -> Result<Self> {
        params.validate()?;
        if provider.dim() != heads.dim() {
            return Err(AuditError::Config(format!(
                "embedding provider has dimension {} but the heads expect {}",
                provider.dim(),
                heads.dim()
            )));
        }
        Ok(Auditor {
            heads,
            verifier,
            params,
            provider,
            keep_transcript: false,
        })
    }

    pub fn with_transcript(mut self, keep: bool) -> Self {
        self.keep_transcript = keep;
        self
    }

    /// Runs one audit against `endpoint`. The seed fixes the block order and
    /// every challenge, and doubles as the audit id.
    ///
    /// Challenges of one round go out together; if any reply fails its
    /// checks the audit ends flagged once that round's replies are in.
    pub fn run(&self, view: &AuditorView, endpoint: &dyn ProviderEndpoint, seed: u64) -> Result<AuditOutcome> {
        self.run_with_memo(view, endpoint, seed, &mut ScoreMemo::new())
    }

    /// [`Auditor::run`], reusing scores from earlier audits of the same
    /// session. Challenges and proof checks are never skipped.
    pub fn run_with_memo(
        &self,
        view: &AuditorView,
        endpoint: &dyn ProviderEndpoint,
        seed: u64,
        memo: &mut ScoreMemo,
    ) -> Result<AuditOutcome> {
        memo.bind(&self.heads, view);
        let params = &self.params;
        let verifier = self.verifier.clone().with_threshold(params.threshold);
        let k = params.per_block_sample;
        let m = view.commitment.claimed_count;
        let beta = params.block_size;
        let alpha = block_count(m, beta);
        let mut transcript = Vec::new();
        let mut log = |msg: WireMessage| {
            if self.keep_transcript {
                transcript.push(msg);
            }
        };
        log(WireMessage::Commit(view.commitment.clone()));

        let mut audited: Vec<usize> = Vec::new();
        let mut round_scores: Vec<Vec<MatchScorePair>> = Vec::new();
        let finish = |decision, audited: Vec<usize>, round_scores, reason| {
            let rounds = audited.len();
            AuditVerdict {
                audit_id: seed,
                decision,
                rounds,
                alpha,
                verifier_calls: 0,
                exposed_block_fraction: if alpha == 0 { 0.0 } else { rounds as f64 / alpha as f64 },
                audited_blocks: audited,
                cost: audit_cost(rounds, k),
                reason,
                round_scores,
            }
        };

        let early = if m == 0 {
            Some(FailureReason::EmptyCommitment)
        } else if view.m != m {
            Some(FailureReason::InconsistentResponse)
        } else {
            None
        };
        if let Some(reason) = early {
            let verdict = finish(AuditDecision::FlaggedForInflation, audited, round_scores, Some(reason));
            log(WireMessage::Verdict(verdict.to_message()));
            return Ok(AuditOutcome { verdict, transcript });
        }

        let answer = self
            .provider
            .embed_block(&view.answer)
            .map_err(|_| AuditError::Undefined("block-to-answer relevance needs a non-empty answer".into()))?;
        let root = view.commitment.root;
        let dim = self.heads.dim();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..alpha).collect();
        order.shuffle(&mut rng);

        let mut cursor = 0;
        let mut round_size = params.initial_blocks(alpha);
        let mut all_scores: Vec<MatchScorePair> = Vec::new();
        let mut calls = 0;
        let (decision, reason) = loop {
            let mut failure = None;
            let mut scores = Vec::with_capacity(round_size);
            for &block in &order[cursor..cursor + round_size] {
                let start = block * beta;
                let len = beta.min(m - start);
                let token_indices = sample_offsets(len, k, &mut rng)
                    .into_iter()
                    .map(|o| start + o)
                    .collect();
                let challenge = Challenge {
                    audit_id: seed,
                    block_index: block,
                    token_indices,
                };
                log(WireMessage::Challenge(challenge.clone()));
                let reply = endpoint.respond(&challenge);
                let checked = check_reply(&challenge, &reply, &root, m, dim);
                log(reply.into());
                audited.push(block);
                match checked {
                    Ok(opened) if failure.is_none() => {
                        let key = (block, challenge.token_indices);
                        let pair = match memo.scores.get(&key) {
                            Some(&pair) => pair,
                            None => {
                                let heads = &self.heads;
                                let s_tb = score_token_to_block(&heads.token_to_block, &opened.tokens, &opened.block)?;
                                let s_ba = score_block_to_answer(&heads.block_to_answer, &opened.block, &answer)?;
                                let pair = MatchScorePair::new(s_tb, s_ba, block);
                                memo.scores.insert(key, pair);
                                pair
                            }
                        };
                        scores.push(pair);
                    }
                    Ok(_) => {}
                    Err(reason) => {
                        failure.get_or_insert(reason);
                    }
                }
            }
            cursor += round_size;
            if let Some(reason) = failure {
                break (AuditDecision::FlaggedForInflation, Some(reason));
            }
            all_scores.extend_from_slice(&scores);
            let evidence = match params.evidence {
                Evidence::PerRound => &scores,
                Evidence::Cumulative => &all_scores,
            };
            let accepted = verifier.decide(evidence).is_accept();
            calls += 1;
            round_scores.push(scores);
            if accepted {
                break (AuditDecision::AuditSuccessful, None);
            }
            if cursor == alpha {
                break (
                    AuditDecision::FlaggedForInflation,
                    Some(FailureReason::SemanticRejectExhausted),
                );
            }
            round_size = 1;
        };
        let mut verdict = finish(decision, audited, round_scores, reason);
        verdict.verifier_calls = calls;
        log(WireMessage::Verdict(verdict.to_message()));
        Ok(AuditOutcome { verdict, transcript })
    }
}

/// One-call form of [`Auditor::run`].
#[allow(clippy::too_many_arguments)]
pub fn run_audit(
    view: &AuditorView,
    endpoint: &dyn ProviderEndpoint,
    heads: &AuditHeads,
    verifier: &Verifier,
    params: &AuditParams,
    provider: Arc<dyn EmbeddingProvider>,
    seed: u64,
) -> Result<AuditVerdict> {
    let auditor = Auditor::new(heads.clone(), verifier.clone(), *params, provider)?;
    Ok(auditor.run(view, endpoint, seed)?.verdict)
}

/// Serves the replies recorded in a transcript. A challenge that differs from
/// the recorded one is refused.
#[derive(Debug, Clone)]
pub struct ReplayEndpoint {
    replies: BTreeMap<usize, (Challenge, ProviderReply)>,
}

impl ReplayEndpoint {
    pub fn from_transcript(transcript: &[WireMessage]) -> Result<Self> {
        let mut replies = BTreeMap::new();
        let mut pending: Option<Challenge> = None;
        for msg in transcript {
            let reply = match msg {
                WireMessage::Challenge(c) => {
                    pending = Some(c.clone());
                    continue;
                }
                WireMessage::Response(r) => ProviderReply::Response(r.clone()),
                WireMessage::Refusal(r) => ProviderReply::Refusal(r.clone()),
                _ => continue,
            };
            let challenge = pending
                .take()
                .ok_or_else(|| invalid("transcript has a reply without a challenge"))?;
            replies.insert(challenge.block_index, (challenge, reply));
        }
        Ok(ReplayEndpoint { replies })
    }
}

impl ProviderEndpoint for ReplayEndpoint {
    fn respond(&self, challenge: &Challenge) -> ProviderReply {
        match self.replies.get(&challenge.block_index) {
            Some((recorded, reply)) if recorded == challenge => reply.clone(),
            _ => ProviderReply::Refusal(Refusal {
                audit_id: challenge.audit_id,
                block_index: challenge.block_index,
                reason: "not in transcript".into(),
            }),
        }
    }
}

/// Re-derives a verdict from a persisted transcript and checks it against
/// the verdict recorded there.
pub fn replay_audit(auditor: &Auditor, view: &AuditorView, transcript: &[WireMessage]) -> Result<AuditVerdict> {
    let commit = transcript.iter().find_map(|m| match m {
        WireMessage::Commit(c) => Some(c),
        _ => None,
    });
    let recorded = transcript.iter().rev().find_map(|m| match m {
        WireMessage::Verdict(v) => Some(v),
        _ => None,
    });
    let (Some(commit), Some(recorded)) = (commit, recorded) else {
        return Err(invalid("transcript lacks a commitment or a verdict"));
    };
    if *commit != view.commitment {
        return Err(invalid("transcript commitment differs from the view"));
    }
    let endpoint = ReplayEndpoint::from_transcript(transcript)?;
    let verdict = auditor.run(view, &endpoint, recorded.audit_id)?.verdict;
    if verdict.to_message() != *recorded {
        return Err(invalid(format!(
            "replayed verdict {:?} differs from recorded {:?}",
            verdict.to_message(),
            recorded
        )));
    }
    Ok(verdict)
}
