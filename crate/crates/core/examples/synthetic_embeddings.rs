//! The deterministic synthetic embedder: token vectors, block means and the
//! cosine scores the matching heads build on.

use tokenaudit::embedding::{average_embeddings, cosine_similarity, EmbeddingProvider, SyntheticProvider};
use tokenaudit::harness::{generate_corpus, CorpusConfig};

fn main() -> tokenaudit::Result<()> {
    let provider = SyntheticProvider::new(42, 384);
    let corpus = generate_corpus(&CorpusConfig::default().with_records(2))?;
    let (own, other) = (&corpus.records[0], &corpus.records[1]);

    let block = provider.embed_block(&own.reasoning[..256])?;
    let answer = provider.embed_block(&own.answer)?;
    let foreign = provider.embed_block(&other.reasoning[..256])?;
    println!("‖block‖ = {:.4}", block.norm());
    println!(
        "cos(block, own answer)     = {:.4}",
        cosine_similarity(block.values(), answer.values())?.value
    );
    println!(
        "cos(block, foreign block)  = {:.4}",
        cosine_similarity(block.values(), foreign.values())?.value
    );

    let sampled = provider.embed_tokens(&own.reasoning[..25])?;
    let avg = average_embeddings(&sampled)?;
    println!(
        "cos(AVG of 25 sampled, block) = {:.4}",
        cosine_similarity(avg.values(), block.values())?.value
    );
    let again = SyntheticProvider::new(42, 384).embed_token(own.reasoning[0])?;
    assert_eq!(again, provider.embed_token(own.reasoning[0])?);
    Ok(())
}
