//! The audit itself: a provider that commits to its reasoning and answers
//! challenges, and an auditor that checks proofs, scores the opened blocks
//! and decides round by round.
//!
//! The two sides share nothing but [`WireMessage`]s. The auditor starts from
//! an [`AuditorView`], which holds only what a user legitimately sees.

mod auditor;
mod messages;
mod provider;

pub use auditor::{
    replay_audit, run_audit, sample_offsets, AuditHeads, AuditOutcome, AuditVerdict, Auditor, ReplayEndpoint, ScoreMemo,
};
pub use messages::{
    audit_cost, decode_fingerprint, encode_fingerprint, path_from_wire, path_to_wire, read_transcript,
    write_transcript, AuditCost, AuditDecision, Challenge, FailureReason, ProviderReply, Refusal, Response,
    VerdictMessage, WireMessage, WireStep,
};
pub use provider::{Fault, ProviderEndpoint, ProviderSession};

use serde::{Deserialize, Serialize};

use crate::merkle::MerkleCommitment;
use crate::text::TokenId;

/// The auditor's entire knowledge of an interaction: prompt, answer, the
/// billed counts and the commitment. Reasoning never appears here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditorView {
    pub prompt: Vec<TokenId>,
    pub answer: Vec<TokenId>,
    /// Billed reasoning tokens.
    pub m: usize,
    /// Billed answer tokens.
    pub n: usize,
    pub commitment: MerkleCommitment,
}
