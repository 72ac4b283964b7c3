use std::sync::Arc;

use super::messages::{encode_fingerprint, path_to_wire, Challenge, ProviderReply, Refusal, Response};
use super::AuditorView;
use crate::embedding::{Embedding, EmbeddingProvider};
use crate::error::Result;
use crate::merkle::{make_fingerprint, BlockLeafHasher, MerkleCommitment, MerkleTree, TokenFingerprint};
use crate::record::{partition_trace, ServiceRecord};

/// Deliberate misbehaviour, for exercising the auditor's checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Flips one bit in every returned fingerprint.
    TamperFingerprint,
    /// Returns a block embedding that differs from the fingerprints' block half.
    MismatchedBlockEmbedding,
    /// Declines every challenge.
    RefuseAll,
    /// Answers indices past the real trace with proofs of real leaves.
    ForgePhantom,
}

/// Anything that can answer challenges: an in-process session, or a
/// transport to a remote one.
pub trait ProviderEndpoint {
    fn respond(&self, challenge: &Challenge) -> ProviderReply;
}

/// The provider's private side of one billed interaction.
///
/// The tree covers the tokens actually held, while the commitment carries
/// whatever count the provider bills (`record.reported_reasoning`), so a
/// misreported count produces a commitment the tree cannot back.
pub struct ProviderSession {
    record: ServiceRecord,
    block_size: usize,
    provider: Arc<dyn EmbeddingProvider>,
    block_embeddings: Vec<Embedding>,
    tree: MerkleTree,
    commitment: MerkleCommitment,
    fault: Fault,
}

impl std::fmt::Debug for ProviderSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderSession")
            .field("commitment", &self.commitment)
            .field("block_size", &self.block_size)
            .finish_non_exhaustive()
    }
}

impl ProviderSession {
    pub fn new(
        record: ServiceRecord,
        block_size: usize,
        provider: Arc<dyn EmbeddingProvider>,
        provider_id: impl Into<String>,
    ) -> Result<Self> {
        let blocks = partition_trace(&record.reasoning, block_size)?;
        let mut block_embeddings = Vec::with_capacity(blocks.len());
        let mut leaves = Vec::with_capacity(record.reasoning.len());
        for block in &blocks {
            let be = provider.embed_block(block.tokens)?;
            let mut hasher = BlockLeafHasher::new(&be);
            for &t in block.tokens {
                leaves.push(hasher.leaf(&provider.embed_token(t)?)?);
            }
            block_embeddings.push(be);
        }
        let tree = MerkleTree::from_leaf_hashes(leaves);
        let commitment = MerkleCommitment {
            root: tree.root(),
            claimed_count: record.reported_reasoning,
            provider_id: provider_id.into(),
        };
        Ok(ProviderSession {
            record,
            block_size,
            provider,
            block_embeddings,
            tree,
            commitment,
            fault: Fault::None,
        })
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = fault;
        self
    }

    /// The commitment, published before any challenge.
    pub fn commit(&self) -> MerkleCommitment {
        self.commitment.clone()
    }

    pub fn tree(&self) -> &MerkleTree {
        &self.tree
    }

    pub fn record(&self) -> &ServiceRecord {
        &self.record
    }

    /// What the auditor is allowed to see.
    pub fn visible(&self) -> AuditorView {
        AuditorView {
            prompt: self.record.prompt.clone(),
            answer: self.record.answer.clone(),
            m: self.record.reported_reasoning,
            n: self.record.reported_answer,
            commitment: self.commit(),
        }
    }

    fn fingerprint(&self, index: usize) -> Result<TokenFingerprint> {
        let block = &self.block_embeddings[index / self.block_size];
        make_fingerprint(block, &self.provider.embed_token(self.record.reasoning[index])?)
    }

    fn refuse(&self, challenge: &Challenge, reason: &str) -> ProviderReply {
        ProviderReply::Refusal(Refusal {
            audit_id: challenge.audit_id,
            block_index: challenge.block_index,
            reason: reason.into(),
        })
    }

    fn answer(&self, challenge: &Challenge) -> Result<ProviderReply> {
        let held = self.record.reasoning.len();
        if self.fault == Fault::RefuseAll {
            return Ok(self.refuse(challenge, "declined"));
        }
        let phantom =
            challenge.block_index >= self.block_embeddings.len() || challenge.token_indices.iter().any(|&i| i >= held);
        if phantom && (self.fault != Fault::ForgePhantom || held == 0) {
            return Ok(self.refuse(challenge, "index out of range"));
        }
        let block_index = challenge.block_index.min(self.block_embeddings.len() - 1);
        let mut block_embedding = self.block_embeddings[block_index].clone();
        let mut fingerprints = Vec::with_capacity(challenge.token_indices.len());
        let mut paths = Vec::with_capacity(challenge.token_indices.len());
        for &requested in &challenge.token_indices {
            let i = if requested < held { requested } else { requested % held };
            let mut fp = self.fingerprint(i)?.to_bytes();
            if self.fault == Fault::TamperFingerprint {
                fp[0] ^= 1;
            }
            fingerprints.push(encode_fingerprint(&fp));
            paths.push(path_to_wire(&self.tree.prove(i)?));
        }
        if self.fault == Fault::MismatchedBlockEmbedding {
            let mut v = block_embedding.values().to_vec();
            v[0] += 1.0;
            block_embedding = Embedding::new(v);
        }
        Ok(ProviderReply::Response(Response {
            audit_id: challenge.audit_id,
            block_index: challenge.block_index,
            block_embedding,
            fingerprints,
            paths,
        }))
    }
}

impl ProviderEndpoint for ProviderSession {
    fn respond(&self, challenge: &Challenge) -> ProviderReply {
        self.answer(challenge)
            .unwrap_or_else(|e| self.refuse(challenge, &e.to_string()))
    }
}
