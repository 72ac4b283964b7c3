use serde::{Deserialize, Serialize};

use crate::nn::{sigmoid, softplus};

pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 0.25;
/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// Binary focal loss on a predicted probability of the positive class.
pub fn focal_loss(p: f64, y: u8, gamma: f64, alpha: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let (p_t, alpha_t) = if y == 1 { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
    -alpha_t * (1.0 - p_t).powf(gamma) * p_t.ln()
}

pub fn bce_loss(p: f64, y: u8) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LossKind {
    Focal { gamma: f64, alpha: f64 },
    Bce,
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Focal {
            gamma: FOCAL_GAMMA,
            alpha: FOCAL_ALPHA,
        }
    }
}

impl LossKind {
    /// Loss and `∂loss/∂z` for a logit `z` of the positive class.
    ///
    /// Works in log space so large logits neither overflow nor hit the
    /// probability clamp.
    pub fn with_grad(self, z: f64, y: u8) -> (f64, f64) {
        let s = if y == 1 { 1.0 } else { -1.0 };
        let sz = s * z;
        match self {
            LossKind::Bce => (softplus(-sz), sigmoid(z) - y as f64),
            LossKind::Focal { gamma, alpha } => {
                let alpha_t = if y == 1 { alpha } else { 1.0 - alpha };
                let p_t = sigmoid(sz);
                let q = sigmoid(-sz);
                let log_p_t = -softplus(-sz);
                let qg = q.powf(gamma);
                let loss = -alpha_t * qg * log_p_t;
                let grad = s * alpha_t * qg * (gamma * p_t * log_p_t - q);
                (loss, grad)
            }
        }
    }

    pub fn on_probability(self, p: f64, y: u8) -> f64 {
        match self {
            LossKind::Bce => bce_loss(p, y),
            LossKind::Focal { gamma, alpha } => focal_loss(p, y, gamma, alpha),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        // 0.25 · (1 − 0.5)² · ln 2
        let oracle = 0.25 * 0.25 * 2f64.ln();
        assert!((focal_loss(0.5, 1, 2.0, 0.25) - oracle).abs() < 1e-15);
        assert!((oracle - 0.0433).abs() < 1e-4);
        assert!(focal_loss(1.0, 1, 2.0, 0.25) < 1e-15);
        assert!(focal_loss(0.0, 0, 2.0, 0.25) < 1e-15);
        assert!(focal_loss(0.0, 1, 2.0, 0.25).is_finite());
    }

    proptest! {
        #[test]
        fn focal_reduces_to_half_bce(p in 0.0f64..1.0, y in 0u8..2) {
            let f = focal_loss(p, y, 0.0, 0.5);
            prop_assert!((f - 0.5 * bce_loss(p, y)).abs() < 1e-12);
            prop_assert!(f >= 0.0);
        }

        #[test]
        fn logit_path_agrees_with_probability_path(z in -12.0f64..12.0, y in 0u8..2) {
            for kind in [LossKind::default(), LossKind::Bce] {
                let (l, _) = kind.with_grad(z, y);
                let reference = kind.on_probability(sigmoid(z), y);
                prop_assert!((l - reference).abs() < 1e-9 * (1.0 + reference));
            }
        }

        #[test]
        fn logit_gradient_matches_finite_difference(z in -8.0f64..8.0, y in 0u8..2) {
            let h = 1e-6;
            for kind in [LossKind::default(), LossKind::Bce] {
                let (_, g) = kind.with_grad(z, y);
                let num = (kind.with_grad(z + h, y).0 - kind.with_grad(z - h, y).0) / (2.0 * h);
                prop_assert!((g - num).abs() <= 1e-6 * (1.0 + g.abs()));
            }
        }
    }
}
