//! The two round verifiers side by side: the all-pairs rule and a DeepSets
//! model trained on synthetic score sets. Set order never matters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tokenaudit::matching::TrainConfig;
use tokenaudit::verifier::{rule_verdict, train_deepsets, LabeledScoreSets, MatchScorePair};

fn score_set<R: Rng>(benign: bool, rng: &mut R) -> Vec<MatchScorePair> {
    let n = rng.random_range(1..=8);
    (0..n)
        .map(|j| {
            // Injected sets carry a few low-scoring blocks among normal ones.
            let bad = !benign && rng.random_bool(0.4);
            let centre = if bad { 0.3 } else { 0.8 };
            let mut s = || (centre + rng.random_range(-0.15..0.15f64)).clamp(0.01, 0.99);
            MatchScorePair::new(s(), s(), j)
        })
        .collect()
}

fn main() -> tokenaudit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut data = LabeledScoreSets::new();
    for i in 0..4000 {
        data.push(&score_set(i % 2 == 0, &mut rng), i % 2 == 0);
    }
    let model = train_deepsets(&data, &TrainConfig::deepsets())?;

    let mut test = LabeledScoreSets::new();
    for i in 0..1000 {
        test.push(&score_set(i % 2 == 0, &mut rng), i % 2 == 0);
    }
    println!("DeepSets held-out: {:?}", model.evaluate(&test, 0.5)?);

    let mut set = score_set(false, &mut rng);
    let c = model.confidence(&set).expect("non-empty");
    set.shuffle(&mut rng);
    println!(
        "confidence {c:.6}, after shuffling {:.6}",
        model.confidence(&set).expect("non-empty")
    );
    println!("rule verdict at τ = 0.6: {:?}", rule_verdict(&set, 0.6));
    Ok(())
}
