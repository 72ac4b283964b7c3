use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{feature_len, write_features, HeadKind, LossKind, MatchingHead};
use crate::embedding::{cosine_similarity, Embedding};
use crate::error::{invalid, Result};
use crate::nn::{Adam, DenseGrad, DenseMoments};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub hidden: usize,
}

impl TrainConfig {
    /// Matching-head defaults: Adam at 2e-5, batch 128, 3 epochs, focal loss,
    /// seed 42, hidden width 384.
    pub fn matching_head() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            batch_size: 128,
            epochs: 3,
            loss: LossKind::default(),
            seed: 42,
            hidden: 384,
        }
    }

    /// DeepSets defaults: Adam at 1e-3, batch 128, 5 epochs, BCE, seed 42,
    /// hidden width 256.
    pub fn deepsets() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 5,
            loss: LossKind::Bce,
            seed: 42,
            hidden: 256,
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.hidden == 0 {
            return Err(invalid("batch size, epochs and hidden width must be positive"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::matching_head()
    }
}

/// What training saw and how the loss evolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub config: TrainConfig,
    pub samples: usize,
    pub epoch_losses: Vec<f64>,
}

/// Embedding pairs with labels: 0 = benign, 1 = inflated.
///
/// Features are built per mini-batch, so pairs that share an embedding share
/// its storage.
#[derive(Debug, Clone, Default)]
pub struct LabeledPairs {
    pairs: Vec<(Embedding, Embedding)>,
    labels: Vec<u8>,
}

impl LabeledPairs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, a: Embedding, b: Embedding, inflated: bool) {
        self.pairs.push((a, b));
        self.labels.push(inflated as u8);
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pairs(&self) -> &[(Embedding, Embedding)] {
        &self.pairs
    }

    pub fn extend(&mut self, other: LabeledPairs) {
        self.pairs.extend(other.pairs);
        self.labels.extend(other.labels);
    }

    pub fn dim(&self) -> Option<usize> {
        self.pairs.first().map(|(a, _)| a.dim())
    }

    /// Feature rows for the given sample indices.
    pub fn feature_matrix(&self, indices: &[usize]) -> Result<Array2<f64>> {
        let d = self.dim().ok_or_else(|| invalid("empty dataset"))?;
        let mut x = Array2::zeros((indices.len(), feature_len(d)));
        for (row, &i) in x.rows_mut().into_iter().zip(indices) {
            let (a, b) = &self.pairs[i];
            let cos = cosine_similarity(a, b)?.value;
            write_features(a, b, cos, row.into_slice().expect("standard layout"));
        }
        Ok(x)
    }

    fn validate(&self) -> Result<usize> {
        let d = self.dim().ok_or_else(|| invalid("cannot train on an empty dataset"))?;
        if self.pairs.iter().any(|(a, b)| a.dim() != d || b.dim() != d) {
            return Err(invalid("all pairs must share one embedding width"));
        }
        if !self.labels.contains(&0) || !self.labels.contains(&1) {
            return Err(invalid("training data needs both benign and inflated pairs"));
        }
        Ok(d)
    }
}

pub(crate) struct HeadGrads {
    pub layer1: DenseGrad,
    pub layer2: DenseGrad,
}

/// Trains a fresh head with Adam over seeded, shuffled mini-batches.
///
/// The same seed drives initialization and shuffling, so a fixed seed gives
/// bit-identical weights.
pub fn train_matching_head(kind: HeadKind, data: &LabeledPairs, config: &TrainConfig) -> Result<MatchingHead> {
    config.validate()?;
    let dim = data.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut head = MatchingHead::init(kind, dim, config.hidden, &mut rng);
    let mut adam = Adam::new(config.learning_rate);
    let (l1, l2) = head.layers_mut();
    let mut m1 = DenseMoments::for_layer(l1);
    let mut m2 = DenseMoments::for_layer(l2);

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut labels = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = data.feature_matrix(batch)?;
            labels.clear();
            labels.extend(batch.iter().map(|&i| data.labels[i]));
            let (loss, grads) = head.loss_and_grads(&x.view(), &labels, config.loss);
            total += loss * batch.len() as f64;
            adam.tick();
            let (l1, l2) = head.layers_mut();
            adam.update_dense(&mut m1, l1, &grads.layer1);
            adam.update_dense(&mut m2, l2, &grads.layer2);
        }
        epoch_losses.push(total / data.len() as f64);
    }
    if !head.is_finite() {
        return Err(invalid("training diverged to non-finite weights"));
    }
    head.set_meta(TrainMeta {
        config: config.clone(),
        samples: data.len(),
        epoch_losses,
    });
    Ok(head)
}

/// Held-out quality of a head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadEvaluation {
    /// Fraction classified correctly at `P(inflated) = 0.5`.
    pub accuracy: f64,
    pub mean_benign_score: f64,
    pub mean_inflated_score: f64,
}

impl MatchingHead {
    pub fn evaluate(&self, data: &LabeledPairs) -> Result<HeadEvaluation> {
        if data.is_empty() {
            return Err(invalid("cannot evaluate on an empty dataset"));
        }
        let (mut correct, mut sums, mut counts) = (0usize, [0.0f64; 2], [0usize; 2]);
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(512) {
            let x = data.feature_matrix(chunk)?;
            let scores = self.forward_batch(&x.view())?;
            for (&i, &s) in chunk.iter().zip(scores.iter()) {
                let y = data.labels[i] as usize;
                if (s < 0.5) == (y == 1) {
                    correct += 1;
                }
                sums[y] += s;
                counts[y] += 1;
            }
        }
        let mean = |k: usize| {
            if counts[k] == 0 {
                f64::NAN
            } else {
                sums[k] / counts[k] as f64
            }
        };
        Ok(HeadEvaluation {
            accuracy: correct as f64 / data.len() as f64,
            mean_benign_score: mean(0),
            mean_inflated_score: mean(1),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::build_features;
    use crate::nn::Dense;
    use ndarray::ArrayView2;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    /// Benign pairs are noisy copies; inflated pairs are independent draws.
    fn separable(n: usize, d: usize, seed: u64) -> LabeledPairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = LabeledPairs::new();
        for i in 0..n {
            let a = random_unit(&mut rng, d);
            let inflated = i % 2 == 1;
            let b = if inflated {
                random_unit(&mut rng, d)
            } else {
                let noise = random_unit(&mut rng, d);
                a.iter().zip(&noise).map(|(x, e)| x + 0.5 * e).collect()
            };
            data.push(Embedding::from_f64(&a), Embedding::from_f64(&b), inflated);
        }
        data
    }

    fn flat_params(head: &MatchingHead) -> Vec<f64> {
        let mut v: Vec<f64> = head.layer1.w.iter().copied().collect();
        v.extend(head.layer1.b.iter());
        v.extend(head.layer2.w.iter());
        v.extend(head.layer2.b.iter());
        v
    }

    fn param_mut(head: &mut MatchingHead, k: usize) -> &mut f64 {
        let layers: [&mut Dense; 2] = [&mut head.layer1, &mut head.layer2];
        let mut k = k;
        for layer in layers {
            let wl = layer.w.len();
            if k < wl {
                return &mut layer.w.as_slice_mut().unwrap()[k];
            }
            k -= wl;
            let bl = layer.b.len();
            if k < bl {
                return &mut layer.b.as_slice_mut().unwrap()[k];
            }
            k -= bl;
        }
        panic!("parameter index out of range")
    }

    fn flat_grads(g: &HeadGrads) -> Vec<f64> {
        let mut v: Vec<f64> = g.layer1.w.iter().copied().collect();
        v.extend(g.layer1.b.iter());
        v.extend(g.layer2.w.iter());
        v.extend(g.layer2.b.iter());
        v
    }

    #[test]
    fn focal_gradients_match_central_differences() {
        // 100 random parameter/input draws, one random coordinate each.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let (d, hidden, batch) = (3, 5, 4);
        let loss = LossKind::default();
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let mut head = MatchingHead::init(HeadKind::TokenToBlock, d, hidden, &mut rng);
            // Non-trivial output bias so both branches of the loss matter.
            head.layer2.b[0] = rng.random_range(-1.0..1.0);
            let x = Array2::from_shape_simple_fn((batch, feature_len(d)), || rng.random_range(-1.0..1.0));
            let labels: Vec<u8> = (0..batch).map(|_| rng.random_range(0..2)).collect();
            let (_, grads) = head.loss_and_grads(&x.view(), &labels, loss);
            let analytic = flat_grads(&grads);
            let k = rng.random_range(0..analytic.len());
            let h = 1e-6;
            let orig = *param_mut(&mut head, k);
            *param_mut(&mut head, k) = orig + h;
            let up = head.loss_and_grads(&x.view(), &labels, loss).0;
            *param_mut(&mut head, k) = orig - h;
            let down = head.loss_and_grads(&x.view(), &labels, loss).0;
            *param_mut(&mut head, k) = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn rejects_bad_datasets() {
        let cfg = TrainConfig::matching_head();
        assert!(train_matching_head(HeadKind::TokenToBlock, &LabeledPairs::new(), &cfg).is_err());
        let mut one_label = LabeledPairs::new();
        one_label.push(Embedding::new(vec![1.0]), Embedding::new(vec![1.0]), false);
        assert!(train_matching_head(HeadKind::TokenToBlock, &one_label, &cfg).is_err());
    }

    #[test]
    fn same_seed_gives_bit_identical_weights() {
        let data = separable(300, 8, 1);
        let cfg = TrainConfig::matching_head().with_hidden(16).with_learning_rate(1e-3);
        let a = train_matching_head(HeadKind::TokenToBlock, &data, &cfg).unwrap();
        let b = train_matching_head(HeadKind::TokenToBlock, &data, &cfg).unwrap();
        assert_eq!(flat_params(&a), flat_params(&b));
        let c = train_matching_head(HeadKind::TokenToBlock, &data, &cfg.clone().with_seed(7)).unwrap();
        assert_ne!(flat_params(&a), flat_params(&c));
    }

    #[test]
    fn learns_a_separable_set() {
        let d = 32;
        let train = separable(4000, d, 10);
        let held_out = separable(1000, d, 11);
        let cfg = TrainConfig::matching_head().with_hidden(64).with_learning_rate(3e-3);
        let head = train_matching_head(HeadKind::BlockToAnswer, &train, &cfg).unwrap();
        let eval = head.evaluate(&held_out).unwrap();
        assert!(eval.accuracy >= 0.95, "{eval:?}");
        assert!(eval.mean_benign_score > eval.mean_inflated_score);
        let losses = &head.meta().unwrap().epoch_losses;
        assert!(losses.last().unwrap() < losses.first().unwrap(), "{losses:?}");

        // Raising only the cosine component moves S towards "benign".
        let base = build_features(&train.pairs()[0].0, &train.pairs()[1].1).unwrap();
        let sweep: Vec<f64> = (-4..=4)
            .map(|i| {
                let mut v = base.values().to_vec();
                *v.last_mut().unwrap() = i as f64 / 4.0;
                let x = ArrayView2::from_shape((1, v.len()), &v).unwrap().to_owned();
                head.forward_batch(&x.view()).unwrap()[0]
            })
            .collect();
        assert!(sweep.last() > sweep.first(), "{sweep:?}");
    }
}
