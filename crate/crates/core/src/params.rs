//! Audit hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Which round-decision function the auditor uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifierKind {
    Rule,
    Learned,
}

impl VerifierKind {
    pub fn default_threshold(self) -> f64 {
        match self {
            VerifierKind::Rule => 0.6,
            VerifierKind::Learned => 0.5,
        }
    }
}

/// Which scores a round's verdict sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Evidence {
    /// Only the current round's score pairs.
    #[default]
    PerRound,
    /// Every score pair collected so far in the audit.
    Cumulative,
}

/// Block sizes the toolkit is tuned for.
pub const BLOCK_SIZE_PRESETS: [usize; 3] = [256, 512, 1024];

pub const DEFAULT_INITIAL_RATIO: f64 = 0.3;

/// `max(1, floor(0.1 · β))`.
pub fn default_per_block_sample(block_size: usize) -> usize {
    (block_size / 10).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditParams {
    /// Tokens per block, β.
    pub block_size: usize,
    /// Fraction of blocks audited in the first round, γ.
    pub initial_ratio: f64,
    /// Tokens sampled per audited block, k.
    pub per_block_sample: usize,
    /// Acceptance threshold, τ.
    pub threshold: f64,
    pub verifier: VerifierKind,
    #[serde(default)]
    pub evidence: Evidence,
}

impl AuditParams {
    pub fn new(block_size: usize, verifier: VerifierKind) -> Self {
        AuditParams {
            block_size,
            initial_ratio: DEFAULT_INITIAL_RATIO,
            per_block_sample: default_per_block_sample(block_size),
            threshold: verifier.default_threshold(),
            verifier,
            evidence: Evidence::PerRound,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_initial_ratio(mut self, gamma: f64) -> Self {
        self.initial_ratio = gamma;
        self
    }

    pub fn with_evidence(mut self, evidence: Evidence) -> Self {
        self.evidence = evidence;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(invalid("block size must be at least 1"));
        }
        if !(self.initial_ratio > 0.0 && self.initial_ratio <= 1.0) {
            return Err(invalid("initial ratio must lie in (0, 1]"));
        }
        if self.per_block_sample == 0 {
            return Err(invalid("per-block sample must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(invalid("threshold must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Blocks audited in the first round: `ceil(γ · α)`, at least one when
    /// there is any block.
    pub fn initial_blocks(&self, alpha: usize) -> usize {
        if alpha == 0 {
            return 0;
        }
        let n = (self.initial_ratio * alpha as f64 - 1e-9).ceil() as usize;
        n.clamp(1, alpha)
    }
}

impl Default for AuditParams {
    fn default() -> Self {
        AuditParams::new(256, VerifierKind::Rule)
    }
}
