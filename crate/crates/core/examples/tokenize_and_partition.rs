//! Tokenizes text with the default rule tokenizer and splits the reasoning
//! into fixed-size blocks.

use std::sync::Arc;

use tokenaudit::record::{block_count, inflation_rate, partition_trace};
use tokenaudit::text::{RuleTokenizer, Tokenizer, Vocabulary};

fn main() -> tokenaudit::Result<()> {
    let text = "Solve 2x+3=7. First subtract 3 from both sides, then divide by 2, so x = 2.";
    let tokenizer = RuleTokenizer::new(Arc::new(Vocabulary::build([text])));
    let tokens = tokenizer.tokenize(text);
    let surfaces: Vec<&str> = tokens.iter().map(|t| t.surface.as_str()).collect();
    println!("{} tokens: {surfaces:?}", tokens.len());
    let ids = tokenizer.encode(text);
    assert_eq!(tokenizer.encode(&tokenizer.decode(&ids)), ids);

    for beta in [4, 8, 32] {
        let blocks = partition_trace(&ids, beta)?;
        let sizes: Vec<usize> = blocks.iter().map(|b| b.len()).collect();
        println!(
            "β = {beta:>2}: α = {} blocks of {sizes:?}",
            block_count(ids.len(), beta)
        );
    }
    println!("IR for 500 injected into 1000: {}", inflation_rate(1000, 500)?);
    Ok(())
}
