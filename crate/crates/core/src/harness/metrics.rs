use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::protocol::{AuditDecision, AuditVerdict};
use crate::record::Label;

/// Per-class verdict accuracy. A class with no records has no rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRates {
    /// Inflated records flagged, over inflated records.
    pub dsr_malicious: Option<f64>,
    /// Benign records accepted, over benign records.
    pub dsr_benign: Option<f64>,
    pub malicious: usize,
    pub benign: usize,
}

pub fn compute_dsr(decisions: &[AuditDecision], labels: &[Label]) -> Result<DetectionRates> {
    if decisions.len() != labels.len() {
        return Err(invalid(format!(
            "{} verdicts for {} labels",
            decisions.len(),
            labels.len()
        )));
    }
    let (mut mal, mut mal_hit, mut ben, mut ben_hit) = (0, 0, 0, 0);
    for (d, l) in decisions.iter().zip(labels) {
        if l.is_benign() {
            ben += 1;
            ben_hit += usize::from(*d == AuditDecision::AuditSuccessful);
        } else {
            mal += 1;
            mal_hit += usize::from(*d == AuditDecision::FlaggedForInflation);
        }
    }
    let rate = |hit: usize, n: usize| (n > 0).then(|| hit as f64 / n as f64);
    Ok(DetectionRates {
        dsr_malicious: rate(mal_hit, mal),
        dsr_benign: rate(ben_hit, ben),
        malicious: mal,
        benign: ben,
    })
}

/// Mean of `audited blocks / α` over audits with at least one block; `None`
/// when there are none.
pub fn compute_aer(benign: &[AuditVerdict]) -> Option<f64> {
    let fractions: Vec<f64> = benign
        .iter()
        .filter(|v| v.alpha > 0)
        .map(|v| v.audited_blocks.len() as f64 / v.alpha as f64)
        .collect();
    (!fractions.is_empty()).then(|| fractions.iter().sum::<f64>() / fractions.len() as f64)
}
