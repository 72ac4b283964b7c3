//! Commits to a reasoning trace and checks inclusion proofs for single
//! tokens, including a tampered one.

use std::sync::Arc;

use tokenaudit::embedding::{EmbeddingProvider, SyntheticProvider};
use tokenaudit::harness::{generate_corpus, CorpusConfig};
use tokenaudit::merkle::{build_tree, make_fingerprint, verify_proof};
use tokenaudit::protocol::ProviderSession;
use tokenaudit::record::partition_trace;

fn main() -> tokenaudit::Result<()> {
    let provider: Arc<dyn EmbeddingProvider> = Arc::new(SyntheticProvider::new(42, 384));
    let record = generate_corpus(&CorpusConfig::default().with_records(1))?
        .records
        .remove(0);
    let beta = 256;

    let mut fingerprints = Vec::new();
    for block in partition_trace(&record.reasoning, beta)? {
        let be = provider.embed_block(block.tokens)?;
        for &t in block.tokens {
            fingerprints.push(make_fingerprint(&be, &provider.embed_token(t)?)?);
        }
    }
    let tree = build_tree(&fingerprints);
    println!(
        "{} tokens, padded to {} leaves, root {}",
        tree.leaf_count(),
        tree.padded_count(),
        tree.root().to_hex()
    );

    let session = ProviderSession::new(record.clone(), beta, provider.clone(), "demo")?;
    assert_eq!(session.commit().root, tree.root());

    let i = fingerprints.len() / 2;
    let path = tree.prove(i)?;
    println!(
        "leaf {i}: path of {} hashes verifies: {}",
        path.len(),
        verify_proof(&tree.root(), &fingerprints[i], &path)
    );
    let forged = make_fingerprint(&fingerprints[i].block, &provider.embed_token(record.reasoning[0])?)?;
    println!(
        "same path with a different token verifies: {}",
        verify_proof(&tree.root(), &forged, &path)
    );
    Ok(())
}
