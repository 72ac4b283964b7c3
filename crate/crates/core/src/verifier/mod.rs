//! Round decisions over the per-block score pairs `(S_tb, S_ba)`.

mod deepsets;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::params::VerifierKind;

pub use deepsets::{train_deepsets, DeepSetsEvaluation, DeepSetsModel, LabeledScoreSets};

/// Scores from one audited block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchScorePair {
    pub s_tb: f64,
    pub s_ba: f64,
    pub block_index: usize,
}

impl MatchScorePair {
    pub fn new(s_tb: f64, s_ba: f64, block_index: usize) -> Self {
        MatchScorePair {
            s_tb,
            s_ba,
            block_index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

impl Decision {
    pub fn is_accept(self) -> bool {
        self == Decision::Accept
    }
}

/// Accepts iff both score means strictly exceed `τ`; an empty set rejects.
pub fn rule_verdict(scores: &[MatchScorePair], threshold: f64) -> Decision {
    if scores.is_empty() {
        return Decision::Reject;
    }
    let n = scores.len() as f64;
    let tb = scores.iter().map(|s| s.s_tb).sum::<f64>() / n;
    let ba = scores.iter().map(|s| s.s_ba).sum::<f64>() / n;
    if tb > threshold && ba > threshold {
        Decision::Accept
    } else {
        Decision::Reject
    }
}

/// Accepts iff the model's benign confidence strictly exceeds `τ`; an empty
/// set rejects without evaluating the model.
pub fn deepsets_verdict(model: &DeepSetsModel, scores: &[MatchScorePair], threshold: f64) -> Decision {
    match model.confidence(scores) {
        Some(c) if c > threshold => Decision::Accept,
        _ => Decision::Reject,
    }
}

/// A configured round verifier.
#[derive(Debug, Clone)]
pub enum Verifier {
    Rule { threshold: f64 },
    Learned { model: Arc<DeepSetsModel>, threshold: f64 },
}

impl Verifier {
    pub fn rule() -> Self {
        Verifier::Rule {
            threshold: VerifierKind::Rule.default_threshold(),
        }
    }

    pub fn learned(model: Arc<DeepSetsModel>) -> Self {
        Verifier::Learned {
            model,
            threshold: VerifierKind::Learned.default_threshold(),
        }
    }

    pub fn with_threshold(self, threshold: f64) -> Self {
        match self {
            Verifier::Rule { .. } => Verifier::Rule { threshold },
            Verifier::Learned { model, .. } => Verifier::Learned { model, threshold },
        }
    }

    pub fn kind(&self) -> VerifierKind {
        match self {
            Verifier::Rule { .. } => VerifierKind::Rule,
            Verifier::Learned { .. } => VerifierKind::Learned,
        }
    }

    pub fn threshold(&self) -> f64 {
        match self {
            Verifier::Rule { threshold } | Verifier::Learned { threshold, .. } => *threshold,
        }
    }

    pub fn decide(&self, scores: &[MatchScorePair]) -> Decision {
        match self {
            Verifier::Rule { threshold } => rule_verdict(scores, *threshold),
            Verifier::Learned { model, threshold } => deepsets_verdict(model, scores, *threshold),
        }
    }
}
