//! A full audit: train small artifacts, then audit an honest provider, an
//! injecting one, a misreporting one and one that tampers with its replies.
//! The honest transcript is shown in part. A single injected trace can pass
//! when every block of some round happens to be clean, so the example ends
//! with the flag rate over the whole evaluation set.

use std::sync::Arc;

use tokenaudit::embedding::{EmbeddingProvider, SyntheticProvider};
use tokenaudit::harness::{generate_corpus, train_artifacts, ArtifactConfig, CorpusConfig};
use tokenaudit::inflation::{inflate_record_ratios, misreport, InflationConfig, InflationContext};
use tokenaudit::params::{AuditParams, VerifierKind};
use tokenaudit::protocol::{replay_audit, Auditor, Fault, ProviderSession};
use tokenaudit::record::InflationKind;
use tokenaudit::verifier::Verifier;

fn main() -> tokenaudit::Result<()> {
    let provider: Arc<dyn EmbeddingProvider> = Arc::new(SyntheticProvider::new(42, 384));
    let corpus = |n, seed| generate_corpus(&CorpusConfig::default().with_records(n).with_seed(seed));
    let (heads, verifier, eval) = (corpus(800, 1)?, corpus(400, 2)?, corpus(20, 3)?);
    let base = InflationContext::new(provider.clone(), heads.vocab())?;
    let artifacts = train_artifacts(
        &heads.records,
        &verifier.records,
        &base.clone().with_prompt_retrieval(&heads.records)?,
        &base.clone().with_prompt_retrieval(&verifier.records)?,
        &ArtifactConfig::default(),
    )?;
    let ctx = base.with_prompt_retrieval(&eval.records)?;

    let beta = 256;
    let auditor = Auditor::new(
        artifacts.heads.clone(),
        Verifier::rule(),
        AuditParams::new(beta, VerifierKind::Rule),
        provider.clone(),
    )?
    .with_transcript(true);

    let honest = eval.records[0].clone();
    let injected = inflate_record_ratios(
        &eval.records,
        0,
        &ctx,
        &InflationConfig::new(InflationKind::Naive).with_ratios(&[3.0]),
    )?
    .remove(0)
    .record;
    let cases = [
        (
            "honest",
            ProviderSession::new(honest.clone(), beta, provider.clone(), "p")?,
        ),
        (
            "naive IR 3",
            ProviderSession::new(injected, beta, provider.clone(), "p")?,
        ),
        (
            "bills 2|R|",
            ProviderSession::new(misreport(&honest, 2.0)?.record, beta, provider.clone(), "p")?,
        ),
        (
            "tampered replies",
            ProviderSession::new(honest, beta, provider.clone(), "p")?.with_fault(Fault::TamperFingerprint),
        ),
    ];
    for (i, (name, session)) in cases.iter().enumerate() {
        let view = session.visible();
        let outcome = auditor.run(&view, session, 100 + i as u64)?;
        let v = &outcome.verdict;
        println!(
            "{name:<16} {:?} after ℓ = {} of α = {} blocks, {} proofs, reason {:?}",
            v.decision, v.rounds, v.alpha, v.cost.merkle_proofs, v.reason
        );
        assert_eq!(&replay_audit(&auditor, &view, &outcome.transcript)?, v);
        if i == 0 {
            let n = outcome.transcript.len();
            for (j, m) in outcome.transcript.iter().enumerate() {
                if j < 3 || j + 1 == n {
                    let line = serde_json::to_string(m)?;
                    println!(
                        "    {}",
                        if line.len() > 110 {
                            format!("{}...", &line[..110])
                        } else {
                            line
                        }
                    );
                } else if j == 3 {
                    println!("    ... {} more messages", n - 4);
                }
            }
        }
    }
    let cfg = InflationConfig::new(InflationKind::Naive).with_ratios(&[3.0]);
    let mut flagged = 0;
    for i in 0..eval.records.len() {
        let record = inflate_record_ratios(&eval.records, i, &ctx, &cfg)?.remove(0).record;
        let session = ProviderSession::new(record, beta, provider.clone(), "p")?;
        flagged += usize::from(
            auditor
                .run(&session.visible(), &session, 200 + i as u64)?
                .verdict
                .is_flagged(),
        );
    }
    println!("naive IR 3 flagged in {flagged} of {} audits", eval.records.len());
    Ok(())
}
