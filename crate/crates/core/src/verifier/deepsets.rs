use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MatchScorePair;
use crate::error::{invalid, Result};
use crate::matching::{TrainConfig, TrainMeta};
use crate::nn::{relu_backward, relu_inplace, sigmoid, Adam, Dense, DenseGrad, DenseMoments};
use crate::weights::{Tensor, WeightEnvelope};

const INPUT: usize = 2;

/// `ρ(Σ φ(s_tb, s_ba))` with a logistic output giving `P(benign)`.
///
/// Elements are pooled in a canonical order (sorted by score values), so the
/// output is bit-identical under any permutation of the input set.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepSetsModel {
    phi1: Dense,
    phi2: Dense,
    rho1: Dense,
    rho2: Dense,
    meta: Option<TrainMeta>,
}

struct Pass {
    x: Array2<f64>,
    pre1: Array2<f64>,
    h1: Array2<f64>,
    pre2: Array2<f64>,
    h2: Array2<f64>,
    pooled: Array2<f64>,
    pre3: Array2<f64>,
    h3: Array2<f64>,
    logits: Vec<f64>,
}

struct Grads {
    phi1: DenseGrad,
    phi2: DenseGrad,
    rho1: DenseGrad,
    rho2: DenseGrad,
}

fn canonical(set: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut s = set.to_vec();
    s.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    s
}

impl DeepSetsModel {
    pub fn init<R: Rng>(hidden: usize, rng: &mut R) -> Self {
        DeepSetsModel {
            phi1: Dense::init(INPUT, hidden, rng),
            phi2: Dense::init(hidden, hidden, rng),
            rho1: Dense::init(hidden, hidden, rng),
            rho2: Dense::init(hidden, 1, rng),
            meta: None,
        }
    }

    pub fn hidden(&self) -> usize {
        self.phi1.fan_out()
    }

    pub fn meta(&self) -> Option<&TrainMeta> {
        self.meta.as_ref()
    }

    pub fn is_finite(&self) -> bool {
        [&self.phi1, &self.phi2, &self.rho1, &self.rho2]
            .iter()
            .all(|l| l.is_finite())
    }

    /// Benign confidence in (0, 1); `None` for an empty set.
    pub fn confidence(&self, scores: &[MatchScorePair]) -> Option<f64> {
        if scores.is_empty() {
            return None;
        }
        let set: Vec<(f64, f64)> = scores.iter().map(|s| (s.s_tb, s.s_ba)).collect();
        Some(sigmoid(self.forward(&[set.as_slice()]).logits[0]))
    }

    fn forward(&self, sets: &[&[(f64, f64)]]) -> Pass {
        let elems: Vec<Vec<(f64, f64)>> = sets.iter().map(|s| canonical(s)).collect();
        let total: usize = elems.iter().map(Vec::len).sum();
        let mut x = Array2::zeros((total, INPUT));
        for (row, &(a, b)) in elems.iter().flatten().enumerate() {
            x[[row, 0]] = a;
            x[[row, 1]] = b;
        }
        let pre1 = self.phi1.forward(&x.view());
        let mut h1 = pre1.clone();
        relu_inplace(&mut h1);
        let pre2 = self.phi2.forward(&h1.view());
        let mut h2 = pre2.clone();
        relu_inplace(&mut h2);

        let mut pooled = Array2::zeros((sets.len(), self.hidden()));
        let mut row = 0;
        for (i, set) in elems.iter().enumerate() {
            let mut acc = pooled.row_mut(i);
            for _ in 0..set.len() {
                acc += &h2.row(row);
                row += 1;
            }
        }
        let pre3 = self.rho1.forward(&pooled.view());
        let mut h3 = pre3.clone();
        relu_inplace(&mut h3);
        let logits = self.rho2.forward(&h3.view()).remove_axis(Axis(1)).to_vec();
        Pass {
            x,
            pre1,
            h1,
            pre2,
            h2,
            pooled,
            pre3,
            h3,
            logits,
        }
    }

    fn loss_and_grads(&self, sets: &[&[(f64, f64)]], labels: &[u8], config: &TrainConfig) -> (f64, Grads) {
        let pass = self.forward(sets);
        let n = sets.len() as f64;
        let mut total = 0.0;
        let mut dz = Array2::zeros((sets.len(), 1));
        for (i, &y) in labels.iter().enumerate() {
            let (l, g) = config.loss.with_grad(pass.logits[i], y);
            total += l;
            dz[[i, 0]] = g / n;
        }
        let (rho2, dh3) = self.rho2.backward(&pass.h3.view(), &dz, true);
        let mut dpre3 = dh3.expect("requested");
        relu_backward(&mut dpre3, &pass.pre3);
        let (rho1, dpooled) = self.rho1.backward(&pass.pooled.view(), &dpre3, true);
        let dpooled = dpooled.expect("requested");

        let mut dh2 = Array2::zeros(pass.h2.raw_dim());
        let mut row = 0;
        for (i, set) in sets.iter().enumerate() {
            for _ in 0..set.len() {
                dh2.row_mut(row).assign(&dpooled.row(i));
                row += 1;
            }
        }
        relu_backward(&mut dh2, &pass.pre2);
        let (phi2, dh1) = self.phi2.backward(&pass.h1.view(), &dh2, true);
        let mut dpre1 = dh1.expect("requested");
        relu_backward(&mut dpre1, &pass.pre1);
        let (phi1, _) = self.phi1.backward(&pass.x.view(), &dpre1, false);
        (total / n, Grads { phi1, phi2, rho1, rho2 })
    }

    pub fn to_envelope(&self) -> WeightEnvelope {
        let mut tensors = BTreeMap::new();
        for (name, layer) in [
            ("phi_layer1", &self.phi1),
            ("phi_layer2", &self.phi2),
            ("rho_layer1", &self.rho1),
        ] {
            tensors.insert(name.to_string(), Tensor::from_matrix(&layer.w));
            tensors.insert(name.replace("layer", "bias"), Tensor::from_vector(&layer.b));
        }
        tensors.insert(
            "rho_layer2".into(),
            Tensor::from_vector(&self.rho2.w.column(0).to_owned()),
        );
        tensors.insert("rho_bias2".into(), Tensor::Scalar(self.rho2.b[0] as f32));
        WeightEnvelope {
            kind: "deepsets".into(),
            d: INPUT,
            hidden: self.hidden(),
            tensors,
            train_meta: serde_json::to_value(&self.meta).unwrap_or_default(),
        }
    }

    pub fn from_envelope(env: &WeightEnvelope) -> Result<Self> {
        if env.kind != "deepsets" || env.d != INPUT {
            return Err(invalid(format!(
                "`{}` (d = {}) is not a DeepSets model",
                env.kind, env.d
            )));
        }
        let h = env.hidden;
        let dense = |name: &str, rows: usize| -> Result<Dense> {
            Ok(Dense {
                w: env.tensor(name)?.to_matrix(rows, h)?,
                b: env.tensor(&name.replace("layer", "bias"))?.to_vector(h)?,
            })
        };
        let model = DeepSetsModel {
            phi1: dense("phi_layer1", INPUT)?,
            phi2: dense("phi_layer2", h)?,
            rho1: dense("rho_layer1", h)?,
            rho2: Dense {
                w: env.tensor("rho_layer2")?.to_vector(h)?.insert_axis(Axis(1)),
                b: env.tensor("rho_bias2")?.to_vector(1)?,
            },
            meta: serde_json::from_value(env.train_meta.clone()).unwrap_or(None),
        };
        if !model.is_finite() {
            return Err(invalid("DeepSets weights are not finite"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_envelope().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        DeepSetsModel::from_envelope(&WeightEnvelope::load(path)?)
    }

    pub fn evaluate(&self, data: &LabeledScoreSets, threshold: f64) -> Result<DeepSetsEvaluation> {
        if data.is_empty() {
            return Err(invalid("cannot evaluate on an empty dataset"));
        }
        let mut correct = [0usize; 2];
        let mut counts = [0usize; 2];
        for (set, &y) in data.sets.iter().zip(&data.labels) {
            let c = sigmoid(self.forward(&[set.as_slice()]).logits[0]);
            let y = y as usize;
            counts[y] += 1;
            if (c > threshold) == (y == 1) {
                correct[y] += 1;
            }
        }
        let rate = |k: usize| {
            if counts[k] == 0 {
                f64::NAN
            } else {
                correct[k] as f64 / counts[k] as f64
            }
        };
        Ok(DeepSetsEvaluation {
            accuracy: (correct[0] + correct[1]) as f64 / data.len() as f64,
            benign_accepted: rate(1),
            inflated_rejected: rate(0),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeepSetsEvaluation {
    pub accuracy: f64,
    pub benign_accepted: f64,
    pub inflated_rejected: f64,
}

/// Score sets labeled 1 = benign, 0 = inflated.
#[derive(Debug, Clone, Default)]
pub struct LabeledScoreSets {
    sets: Vec<Vec<(f64, f64)>>,
    labels: Vec<u8>,
}

impl LabeledScoreSets {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, scores: &[MatchScorePair], benign: bool) {
        self.sets.push(scores.iter().map(|s| (s.s_tb, s.s_ba)).collect());
        self.labels.push(benign as u8);
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn extend(&mut self, other: LabeledScoreSets) {
        self.sets.extend(other.sets);
        self.labels.extend(other.labels);
    }
}

/// Trains a DeepSets verifier with seeded initialization and shuffling.
pub fn train_deepsets(data: &LabeledScoreSets, config: &TrainConfig) -> Result<DeepSetsModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    if data.sets.iter().any(Vec::is_empty) {
        return Err(invalid("score sets must be non-empty"));
    }
    if !data.labels.contains(&0) || !data.labels.contains(&1) {
        return Err(invalid("training data needs both benign and inflated sets"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = DeepSetsModel::init(config.hidden, &mut rng);
    let mut adam = Adam::new(config.learning_rate);
    let mut moments: Vec<DenseMoments> = [&model.phi1, &model.phi2, &model.rho1, &model.rho2]
        .into_iter()
        .map(DenseMoments::for_layer)
        .collect();

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let sets: Vec<&[(f64, f64)]> = batch.iter().map(|&i| data.sets[i].as_slice()).collect();
            let labels: Vec<u8> = batch.iter().map(|&i| data.labels[i]).collect();
            let (loss, g) = model.loss_and_grads(&sets, &labels, config);
            total += loss * batch.len() as f64;
            adam.tick();
            adam.update_dense(&mut moments[0], &mut model.phi1, &g.phi1);
            adam.update_dense(&mut moments[1], &mut model.phi2, &g.phi2);
            adam.update_dense(&mut moments[2], &mut model.rho1, &g.rho1);
            adam.update_dense(&mut moments[3], &mut model.rho2, &g.rho2);
        }
        epoch_losses.push(total / data.len() as f64);
    }
    if !model.is_finite() {
        return Err(invalid("training diverged to non-finite weights"));
    }
    model.meta = Some(TrainMeta {
        config: config.clone(),
        samples: data.len(),
        epoch_losses,
    });
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier::deepsets_verdict;

    fn pair(a: f64, b: f64) -> MatchScorePair {
        MatchScorePair::new(a, b, 0)
    }

    fn toy(n: usize, seed: u64) -> LabeledScoreSets {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = LabeledScoreSets::new();
        for i in 0..n {
            let benign = i % 2 == 0;
            let len = rng.random_range(1..8);
            let set: Vec<MatchScorePair> = (0..len)
                .map(|_| {
                    if benign {
                        pair(rng.random_range(0.5..0.95), rng.random_range(0.5..0.95))
                    } else {
                        pair(rng.random_range(0.05..0.6), rng.random_range(0.05..0.6))
                    }
                })
                .collect();
            data.push(&set, benign);
        }
        data
    }

    #[test]
    fn exact_permutation_invariance() {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = DeepSetsModel::init(32, &mut rng);
        let mut set: Vec<MatchScorePair> = (0..10)
            .map(|i| MatchScorePair::new(rng.random(), rng.random(), i))
            .collect();
        let reference = model.confidence(&set).unwrap();
        for _ in 0..50 {
            set.shuffle(&mut rng);
            assert_eq!(model.confidence(&set).unwrap().to_bits(), reference.to_bits());
        }
        assert!(reference > 0.0 && reference < 1.0);
    }

    #[test]
    fn sum_pooling_distinguishes_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = DeepSetsModel::init(16, &mut rng);
        let x = pair(0.7, 0.3);
        assert_ne!(model.confidence(&[x]), model.confidence(&[x, x]));
        assert_eq!(model.confidence(&[]), None);
        assert_eq!(deepsets_verdict(&model, &[], 0.0), super::super::Decision::Reject);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let data = toy(6, 3);
        let sets: Vec<&[(f64, f64)]> = data.sets.iter().map(Vec::as_slice).collect();
        let cfg = TrainConfig::deepsets();
        for _ in 0..20 {
            let mut model = DeepSetsModel::init(6, &mut rng);
            let (_, g) = model.loss_and_grads(&sets, &data.labels, &cfg);
            let layer = rng.random_range(0..4);
            let (grad, param): (&DenseGrad, &mut Dense) = match layer {
                0 => (&g.phi1, &mut model.phi1),
                1 => (&g.phi2, &mut model.phi2),
                2 => (&g.rho1, &mut model.rho1),
                _ => (&g.rho2, &mut model.rho2),
            };
            let r = rng.random_range(0..param.w.nrows());
            let c = rng.random_range(0..param.w.ncols());
            let analytic = grad.w[[r, c]];
            let orig = param.w[[r, c]];
            let h = 1e-6;
            let eval = |v: f64, layer: usize, model: &mut DeepSetsModel| {
                let l = match layer {
                    0 => &mut model.phi1,
                    1 => &mut model.phi2,
                    2 => &mut model.rho1,
                    _ => &mut model.rho2,
                };
                l.w[[r, c]] = v;
                model.loss_and_grads(&sets, &data.labels, &cfg).0
            };
            let up = eval(orig + h, layer, &mut model);
            let down = eval(orig - h, layer, &mut model);
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(rel <= 1e-4, "layer {layer}: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn trains_deterministically_and_separates() {
        let cfg = TrainConfig::deepsets().with_hidden(32);
        let train = toy(4000, 5);
        let a = train_deepsets(&train, &cfg).unwrap();
        let b = train_deepsets(&train, &cfg).unwrap();
        assert_eq!(a, b);
        let losses = &a.meta().unwrap().epoch_losses;
        assert_eq!(losses.len(), 5);
        assert!(losses[4] < losses[0], "{losses:?}");
        let eval = a.evaluate(&toy(400, 6), 0.5).unwrap();
        assert!(eval.accuracy >= 0.9, "{eval:?}");
    }

    #[test]
    fn envelope_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = DeepSetsModel::init(8, &mut rng);
        let env = model.to_envelope();
        assert_eq!(env.kind, "deepsets");
        let back = DeepSetsModel::from_envelope(&env).unwrap();
        let set = [pair(0.2, 0.9), pair(0.6, 0.4)];
        let (x, y) = (model.confidence(&set).unwrap(), back.confidence(&set).unwrap());
        assert!((x - y).abs() < 1e-5);
        assert!(train_deepsets(&LabeledScoreSets::new(), &TrainConfig::deepsets()).is_err());
    }
}
