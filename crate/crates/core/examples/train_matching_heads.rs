//! Trains the token-to-block and block-to-answer heads on a small synthetic
//! corpus and reports how well they separate benign from injected pairs.

use std::sync::Arc;
use std::time::Instant;

use tokenaudit::embedding::{EmbeddingProvider, SyntheticProvider};
use tokenaudit::harness::{block_to_answer_pairs, generate_corpus, token_to_block_pairs, ArtifactConfig, CorpusConfig};
use tokenaudit::inflation::InflationContext;
use tokenaudit::matching::{train_matching_head, HeadKind};

fn main() -> tokenaudit::Result<()> {
    let provider: Arc<dyn EmbeddingProvider> = Arc::new(SyntheticProvider::new(42, 384));
    let train = generate_corpus(&CorpusConfig::default().with_records(300).with_seed(1))?;
    let test = generate_corpus(&CorpusConfig::default().with_records(100).with_seed(2))?;
    let base = InflationContext::new(provider, train.vocab())?;
    let train_ctx = base.clone().with_prompt_retrieval(&train.records)?;
    let test_ctx = base.with_prompt_retrieval(&test.records)?;
    let cfg = ArtifactConfig::default();

    for kind in [HeadKind::TokenToBlock, HeadKind::BlockToAnswer] {
        let pairs = |records, ctx| match kind {
            HeadKind::TokenToBlock => token_to_block_pairs(records, ctx, &cfg.plan),
            HeadKind::BlockToAnswer => block_to_answer_pairs(records, ctx, &cfg.plan),
        };
        let (train_set, test_set) = (pairs(&train.records, &train_ctx)?, pairs(&test.records, &test_ctx)?);
        let start = Instant::now();
        let head = train_matching_head(kind, &train_set, &cfg.head)?;
        let eval = head.evaluate(&test_set)?;
        let losses = &head.meta().expect("trained heads carry metadata").epoch_losses;
        println!(
            "{}: {} pairs, {:.1}s, epoch losses {losses:.4?}",
            kind.as_str(),
            train_set.len(),
            start.elapsed().as_secs_f64()
        );
        println!(
            "  held-out accuracy {:.3}, mean S benign {:.3} vs injected {:.3}",
            eval.accuracy, eval.mean_benign_score, eval.mean_inflated_score
        );
    }
    Ok(())
}
