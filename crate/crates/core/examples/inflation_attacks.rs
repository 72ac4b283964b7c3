//! Every inflation strategy applied to one record at IR 1, with what each
//! injects and how it shifts the block-to-answer cosine.

use std::sync::Arc;

use tokenaudit::embedding::{cosine_similarity, EmbeddingProvider, SyntheticProvider};
use tokenaudit::harness::{generate_corpus, CorpusConfig};
use tokenaudit::inflation::{inflate_record_ratios, misreport, InflationConfig, InflationContext};
use tokenaudit::record::{partition_trace, InflationKind};
use tokenaudit::text::Tokenizer;

fn mean_block_answer_cos(
    provider: &dyn EmbeddingProvider,
    reasoning: &[tokenaudit::text::TokenId],
    answer: &[tokenaudit::text::TokenId],
) -> tokenaudit::Result<f64> {
    let a = provider.embed_block(answer)?;
    let blocks = partition_trace(reasoning, 256)?;
    let mut sum = 0.0;
    for b in &blocks {
        sum += cosine_similarity(provider.embed_block(b.tokens)?.values(), a.values())?.value;
    }
    Ok(sum / blocks.len() as f64)
}

fn main() -> tokenaudit::Result<()> {
    let provider: Arc<dyn EmbeddingProvider> = Arc::new(SyntheticProvider::new(42, 384));
    let corpus = generate_corpus(&CorpusConfig::default().with_records(50))?;
    let ctx = InflationContext::new(provider.clone(), corpus.vocab())?.with_prompt_retrieval(&corpus.records)?;
    let tokenizer = tokenaudit::text::RuleTokenizer::new(corpus.vocab().clone());
    let record = &corpus.records[0];
    println!(
        "benign: |R| = {}, mean cos(block, answer) {:.3}",
        record.reasoning.len(),
        mean_block_answer_cos(provider.as_ref(), &record.reasoning, &record.answer)?
    );

    for kind in InflationKind::ALL_INJECTING {
        let cfg = InflationConfig::new(kind).with_ratios(&[1.0]);
        let inflated = inflate_record_ratios(&corpus.records, 0, &ctx, &cfg)?.remove(0);
        let first = inflated.injected_positions[0];
        let sample = tokenizer.decode(&inflated.record.reasoning[first..first + 8]);
        println!(
            "{kind:<6} m = {} (IR {:.2}), mean cos {:.3}, injected run starts \"{sample} ...\"",
            inflated.record.reported_reasoning,
            inflated.achieved_ir,
            mean_block_answer_cos(provider.as_ref(), &inflated.record.reasoning, &record.answer)?
        );
    }
    let m = misreport(record, 2.0)?;
    println!(
        "misreport: bills {} while holding {}",
        m.record.reported_reasoning,
        m.record.reasoning.len()
    );
    Ok(())
}
