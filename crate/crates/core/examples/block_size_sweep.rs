//! Benign audits on the length-matched corpus at β = 256, 512 and 1024 with
//! the rule verifier: how many blocks exist and what fraction of them an
//! audit exposes.

use std::sync::Arc;

use tokenaudit::embedding::{EmbeddingProvider, SyntheticProvider};
use tokenaudit::harness::{
    generate_corpus, run_experiment, train_artifacts, ArtifactConfig, CorpusConfig, ExperimentGrid, VerifierSetting,
};
use tokenaudit::inflation::InflationContext;
use tokenaudit::params::VerifierKind;

fn main() -> tokenaudit::Result<()> {
    let provider: Arc<dyn EmbeddingProvider> = Arc::new(SyntheticProvider::new(42, 384));
    let corpus = |cfg: CorpusConfig, n, seed| generate_corpus(&cfg.with_records(n).with_seed(seed));
    let heads = corpus(CorpusConfig::default(), 800, 1)?;
    let verifier = corpus(CorpusConfig::default(), 400, 2)?;
    let matched = corpus(CorpusConfig::matched(), 100, 3)?;
    let base = InflationContext::new(provider, heads.vocab())?;
    let artifacts = train_artifacts(
        &heads.records,
        &verifier.records,
        &base.clone().with_prompt_retrieval(&heads.records)?,
        &base.clone().with_prompt_retrieval(&verifier.records)?,
        &ArtifactConfig::default(),
    )?;

    let sizes = [256, 512, 1024];
    let grid = ExperimentGrid {
        kinds: Vec::new(),
        block_sizes: sizes.to_vec(),
        verifiers: vec![VerifierSetting::rule(0.6)],
        ..ExperimentGrid::default()
    };
    let report = run_experiment(&matched.records, &base, &grid, &artifacts)?;
    println!("{:>6} {:>8} {:>8} {:>8} {:>8}", "β", "mean α", "mean ℓ", "AER", "DSR");
    for beta in sizes {
        let s = &report.benign_cell(beta, VerifierKind::Rule, 0.6).expect("cell").stats;
        println!(
            "{beta:>6} {:>8.1} {:>8.2} {:>8.3} {:>8.3}",
            s.mean_alpha,
            s.mean_rounds,
            s.aer.unwrap_or(f64::NAN),
            s.dsr.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
