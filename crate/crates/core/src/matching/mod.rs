//! Matching heads: a two-layer feedforward classifier over the pair feature
//! `[a; b; a − b; a ⊙ b; cos(a, b)]`.
//!
//! The head is trained to predict whether a pair was inflated (label 1) or
//! benign (label 0). The *match score* it reports is the complement,
//! `S = 1 − P(inflated)`, so a high score means the pair fits together.

mod loss;
mod train;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{average_embeddings, cosine_similarity, Embedding};
use crate::error::{invalid, Result};
use crate::nn::{relu_inplace, sigmoid, Dense};
use crate::weights::{Tensor, WeightEnvelope};

pub use loss::{bce_loss, focal_loss, LossKind, FOCAL_ALPHA, FOCAL_GAMMA, PROB_EPS};
pub(crate) use train::HeadGrads;
pub use train::{train_matching_head, HeadEvaluation, LabeledPairs, TrainConfig, TrainMeta};

/// Scores never reach 0 or 1 exactly.
const SCORE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    TokenToBlock,
    BlockToAnswer,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::TokenToBlock => "token_to_block",
            HeadKind::BlockToAnswer => "block_to_answer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "token_to_block" => Some(HeadKind::TokenToBlock),
            "block_to_answer" => Some(HeadKind::BlockToAnswer),
            _ => None,
        }
    }
}

pub fn feature_len(dim: usize) -> usize {
    4 * dim + 1
}

/// The `4d + 1` pair feature.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchFeature(Vec<f64>);

impl MatchFeature {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn cosine(&self) -> f64 {
        *self.0.last().expect("features are never empty")
    }

    /// Embedding width this feature was built from.
    pub fn dim(&self) -> usize {
        (self.0.len() - 1) / 4
    }
}

pub fn build_features(a: &[f32], b: &[f32]) -> Result<MatchFeature> {
    let cos = cosine_similarity(a, b)?.value;
    let mut out = vec![0.0; feature_len(a.len())];
    write_features(a, b, cos, &mut out);
    Ok(MatchFeature(out))
}

/// Writes the feature of an equal-length pair into `out`.
pub(crate) fn write_features(a: &[f32], b: &[f32], cos: f64, out: &mut [f64]) {
    let d = a.len();
    debug_assert_eq!(out.len(), feature_len(d));
    for i in 0..d {
        let (x, y) = (a[i] as f64, b[i] as f64);
        out[i] = x;
        out[d + i] = y;
        out[2 * d + i] = x - y;
        out[3 * d + i] = x * y;
    }
    out[4 * d] = cos;
}

/// A trained (or initialized) matching head.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingHead {
    kind: HeadKind,
    dim: usize,
    layer1: Dense,
    layer2: Dense,
    meta: Option<TrainMeta>,
}

impl MatchingHead {
    /// Uniform fan-in initialization for both layers.
    pub fn init<R: Rng>(kind: HeadKind, dim: usize, hidden: usize, rng: &mut R) -> Self {
        let layer1 = Dense::init(feature_len(dim), hidden, rng);
        let layer2 = Dense::init(hidden, 1, rng);
        MatchingHead {
            kind,
            dim,
            layer1,
            layer2,
            meta: None,
        }
    }

    /// All weights zero: every input scores exactly 0.5.
    pub fn zeros(kind: HeadKind, dim: usize, hidden: usize) -> Self {
        MatchingHead {
            kind,
            dim,
            layer1: Dense::zeros(feature_len(dim), hidden),
            layer2: Dense::zeros(hidden, 1),
            meta: None,
        }
    }

    /// Random first layer, zero output layer: every input still scores 0.5.
    pub fn untrained<R: Rng>(kind: HeadKind, dim: usize, hidden: usize, rng: &mut R) -> Self {
        MatchingHead {
            layer2: Dense::zeros(hidden, 1),
            ..MatchingHead::init(kind, dim, hidden, rng)
        }
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.layer1.fan_out()
    }

    pub fn input_len(&self) -> usize {
        feature_len(self.dim)
    }

    pub fn meta(&self) -> Option<&TrainMeta> {
        self.meta.as_ref()
    }

    pub fn is_finite(&self) -> bool {
        self.layer1.is_finite() && self.layer2.is_finite()
    }

    /// Logits of `P(inflated)` for a batch of feature rows.
    pub fn logits(&self, x: &ArrayView2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.input_len() {
            return Err(invalid(format!(
                "feature length {} does not match head input {}",
                x.ncols(),
                self.input_len()
            )));
        }
        let mut h = self.layer1.forward(x);
        relu_inplace(&mut h);
        Ok(self.layer2.forward(&h.view()).remove_axis(Axis(1)))
    }

    pub fn logit(&self, feature: &MatchFeature) -> Result<f64> {
        let x = ArrayView2::from_shape((1, feature.len()), feature.values()).map_err(|e| invalid(e.to_string()))?;
        Ok(self.logits(&x)?[0])
    }

    /// `P(inflated)` for one feature.
    pub fn inflation_probability(&self, feature: &MatchFeature) -> Result<f64> {
        Ok(sigmoid(self.logit(feature)?))
    }

    /// The match score `S = 1 − P(inflated)`, strictly inside (0, 1).
    pub fn forward(&self, feature: &MatchFeature) -> Result<f64> {
        Ok(score_from_logit(self.logit(feature)?))
    }

    /// Scores for a batch of feature rows.
    pub fn forward_batch(&self, x: &ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.logits(x)?.mapv(score_from_logit))
    }

    pub fn score_pair(&self, a: &Embedding, b: &Embedding) -> Result<f64> {
        self.check_dim(a)?;
        self.forward(&build_features(a, b)?)
    }

    /// All weights flattened in the order layer-1 `W`, layer-1 `b`,
    /// layer-2 `W`, layer-2 `b`.
    pub fn parameters(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.parameter_count());
        for layer in [&self.layer1, &self.layer2] {
            v.extend(layer.w.iter());
            v.extend(layer.b.iter());
        }
        v
    }

    pub fn parameter_count(&self) -> usize {
        [&self.layer1, &self.layer2].iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// A copy with the flattened parameters replaced.
    pub fn with_parameters(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.parameter_count() {
            return Err(invalid(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                values.len()
            )));
        }
        let mut head = self.clone();
        let mut rest = values;
        for layer in [&mut head.layer1, &mut head.layer2] {
            for slot in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                *slot = rest[0];
                rest = &rest[1..];
            }
        }
        Ok(head)
    }

    /// Mean loss over a batch of feature rows and its gradient with respect
    /// to [`MatchingHead::parameters`].
    pub fn loss_gradient(&self, x: &ArrayView2<f64>, labels: &[u8], loss: LossKind) -> Result<(f64, Vec<f64>)> {
        if x.ncols() != self.input_len() || x.nrows() != labels.len() || labels.is_empty() {
            return Err(invalid("batch shape does not match the head or the labels"));
        }
        let (l, g) = self.loss_and_grads(x, labels, loss);
        let mut v = Vec::with_capacity(self.parameter_count());
        for layer in [&g.layer1, &g.layer2] {
            v.extend(layer.w.iter());
            v.extend(layer.b.iter());
        }
        Ok((l, v))
    }

    fn check_dim(&self, e: &Embedding) -> Result<()> {
        if e.dim() != self.dim {
            return Err(invalid(format!(
                "embedding width {} does not match head width {}",
                e.dim(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn to_envelope(&self) -> WeightEnvelope {
        let mut tensors = std::collections::BTreeMap::new();
        tensors.insert("layer1".into(), Tensor::from_matrix(&self.layer1.w));
        tensors.insert("bias1".into(), Tensor::from_vector(&self.layer1.b));
        tensors.insert(
            "layer2".into(),
            Tensor::from_vector(&self.layer2.w.column(0).to_owned()),
        );
        tensors.insert("bias2".into(), Tensor::Scalar(self.layer2.b[0] as f32));
        WeightEnvelope {
            kind: self.kind.as_str().into(),
            d: self.dim,
            hidden: self.hidden(),
            tensors,
            train_meta: serde_json::to_value(&self.meta).unwrap_or_default(),
        }
    }

    pub fn from_envelope(env: &WeightEnvelope) -> Result<Self> {
        let kind =
            HeadKind::parse(&env.kind).ok_or_else(|| invalid(format!("`{}` is not a matching head", env.kind)))?;
        let (d, h) = (env.d, env.hidden);
        let layer1 = Dense {
            w: env.tensor("layer1")?.to_matrix(feature_len(d), h)?,
            b: env.tensor("bias1")?.to_vector(h)?,
        };
        let layer2 = Dense {
            w: env.tensor("layer2")?.to_vector(h)?.insert_axis(Axis(1)),
            b: env.tensor("bias2")?.to_vector(1)?,
        };
        let head = MatchingHead {
            kind,
            dim: d,
            layer1,
            layer2,
            meta: serde_json::from_value(env.train_meta.clone()).unwrap_or(None),
        };
        if !head.is_finite() {
            return Err(invalid("matching head weights are not finite"));
        }
        Ok(head)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_envelope().save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        MatchingHead::from_envelope(&WeightEnvelope::load(path)?)
    }

    /// Mean loss over a batch and its parameter gradients.
    pub(crate) fn loss_and_grads(&self, x: &ArrayView2<f64>, labels: &[u8], loss: LossKind) -> (f64, HeadGrads) {
        let n = x.nrows() as f64;
        let pre1 = self.layer1.forward(x);
        let mut h = pre1.clone();
        relu_inplace(&mut h);
        let z = self.layer2.forward(&h.view());
        let mut total = 0.0;
        let mut dz = Array2::zeros((x.nrows(), 1));
        for (i, &y) in labels.iter().enumerate() {
            let (l, g) = loss.with_grad(z[[i, 0]], y);
            total += l;
            dz[[i, 0]] = g / n;
        }
        let (g2, dh) = self.layer2.backward(&h.view(), &dz, true);
        let mut dpre1 = dh.expect("requested");
        crate::nn::relu_backward(&mut dpre1, &pre1);
        let (g1, _) = self.layer1.backward(x, &dpre1, false);
        (total / n, HeadGrads { layer1: g1, layer2: g2 })
    }

    pub(crate) fn layers_mut(&mut self) -> (&mut Dense, &mut Dense) {
        (&mut self.layer1, &mut self.layer2)
    }

    pub(crate) fn set_meta(&mut self, meta: TrainMeta) {
        self.meta = Some(meta);
    }
}

fn score_from_logit(z: f64) -> f64 {
    sigmoid(-z).clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

/// `S_tb = MH_tb(AVG(sampled token embeddings), block embedding)`.
pub fn score_token_to_block(head: &MatchingHead, sampled_tokens: &[Embedding], block: &Embedding) -> Result<f64> {
    if sampled_tokens.is_empty() {
        return Err(invalid("token-to-block scoring needs at least one sampled token"));
    }
    let avg = average_embeddings(sampled_tokens)?;
    head.score_pair(&avg, block)
}

/// `S_ba = MH_ba(block embedding, answer embedding)`.
pub fn score_block_to_answer(head: &MatchingHead, block: &Embedding, answer: &Embedding) -> Result<f64> {
    head.score_pair(block, answer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec())
    }

    #[test]
    fn feature_layout() {
        let f = build_features(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(f.len(), 9);
        assert_eq!(&f.values()[..2], &[1.0, 2.0]);
        assert_eq!(&f.values()[2..4], &[3.0, 4.0]);
        assert_eq!(&f.values()[4..6], &[-2.0, -2.0]);
        assert_eq!(&f.values()[6..8], &[3.0, 8.0]);
        let oracle = 11.0 / (5f64.sqrt() * 5.0);
        assert!((f.cosine() - oracle).abs() < 1e-12);

        let v = [0.3f32, -0.7, 0.1];
        let same = build_features(&v, &v).unwrap();
        assert!(same.values()[6..9].iter().all(|&x| x == 0.0));
        assert!((same.cosine() - 1.0).abs() < 1e-12);
        assert_eq!(feature_len(384), 1537);
        assert!(build_features(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_heads_score_one_half() {
        let head = MatchingHead::zeros(HeadKind::TokenToBlock, 2, 5);
        let f = build_features(&[1.0, -4.0], &[0.5, 9.0]).unwrap();
        assert_eq!(head.forward(&f).unwrap(), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let untrained = MatchingHead::untrained(HeadKind::BlockToAnswer, 2, 5, &mut rng);
        assert_eq!(
            score_block_to_answer(&untrained, &emb(&[1.0, 0.0]), &emb(&[0.2, 0.3])).unwrap(),
            0.5
        );
    }

    #[test]
    fn forward_rejects_size_mismatch() {
        let head = MatchingHead::zeros(HeadKind::TokenToBlock, 3, 4);
        let f = build_features(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert!(head.forward(&f).is_err());
        assert!(head.score_pair(&emb(&[1.0, 2.0]), &emb(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn single_sample_equals_direct_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let head = MatchingHead::init(HeadKind::TokenToBlock, 4, 6, &mut rng);
        let t = emb(&[0.1, 0.2, -0.3, 0.4]);
        let b = emb(&[0.5, -0.1, 0.0, 0.2]);
        let via_avg = score_token_to_block(&head, std::slice::from_ref(&t), &b).unwrap();
        let direct = head.forward(&build_features(&t, &b).unwrap()).unwrap();
        assert_eq!(via_avg, direct);
        assert!(score_token_to_block(&head, &[], &b).is_err());
    }

    #[test]
    fn scores_stay_strictly_inside_unit_interval() {
        let mut head = MatchingHead::zeros(HeadKind::TokenToBlock, 1, 1);
        head.layer2.b[0] = 1e6;
        let f = build_features(&[1.0], &[1.0]).unwrap();
        let s = head.forward(&f).unwrap();
        assert!(s > 0.0 && s < 1.0);
        head.layer2.b[0] = -1e6;
        let s = head.forward(&f).unwrap();
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn envelope_round_trip_rounds_to_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = MatchingHead::init(HeadKind::BlockToAnswer, 3, 4, &mut rng);
        let env = head.to_envelope();
        assert_eq!(env.kind, "block_to_answer");
        let back = MatchingHead::from_envelope(&env).unwrap();
        assert_eq!(back.kind(), HeadKind::BlockToAnswer);
        assert_eq!(back.hidden(), 4);
        let f = build_features(&[0.1, 0.2, 0.3], &[0.3, 0.2, 0.1]).unwrap();
        let (a, b) = (head.forward(&f).unwrap(), back.forward(&f).unwrap());
        assert!((a - b).abs() < 1e-6);
        let mut bad = env.clone();
        bad.kind = "deepsets".into();
        assert!(MatchingHead::from_envelope(&bad).is_err());
    }
}
