//! Small end-to-end runs of the library pipeline: reproducibility, artifact
//! persistence and report bookkeeping.

use std::sync::Arc;

use tokenaudit::embedding::{EmbeddingProvider, SyntheticProvider};
use tokenaudit::harness::{
    generate_corpus, run_experiment, train_artifacts, ArtifactConfig, Artifacts, CorpusConfig, ExperimentGrid,
    SyntheticCorpus, VerifierSetting,
};
use tokenaudit::inflation::InflationContext;
use tokenaudit::matching::TrainConfig;
use tokenaudit::params::VerifierKind;
use tokenaudit::record::InflationKind;

struct Small {
    eval: SyntheticCorpus,
    ctx: InflationContext,
    artifacts: Artifacts,
}

fn small() -> Small {
    let provider: Arc<dyn EmbeddingProvider> = Arc::new(SyntheticProvider::new(42, 64));
    let cfg = CorpusConfig {
        reasoning_len: [300, 1200],
        ..CorpusConfig::default()
    };
    let corpus = |n, seed| generate_corpus(&cfg.clone().with_records(n).with_seed(seed)).unwrap();
    let (heads, ver, eval) = (corpus(60, 1), corpus(40, 2), corpus(24, 3));
    let base = InflationContext::new(provider, heads.vocab()).unwrap();
    let config = ArtifactConfig {
        head: TrainConfig::matching_head().with_learning_rate(1e-3).with_hidden(32),
        ..ArtifactConfig::default()
    };
    let artifacts = train_artifacts(
        &heads.records,
        &ver.records,
        &base.clone().with_prompt_retrieval(&heads.records).unwrap(),
        &base.clone().with_prompt_retrieval(&ver.records).unwrap(),
        &config,
    )
    .unwrap();
    let ctx = base.with_prompt_retrieval(&eval.records).unwrap();
    Small { eval, ctx, artifacts }
}

fn grid() -> ExperimentGrid {
    ExperimentGrid {
        kinds: vec![InflationKind::Naive, InflationKind::Ada3],
        ratios: vec![0.5, 3.0],
        block_sizes: vec![256, 512],
        verifiers: vec![VerifierSetting::rule(0.6), VerifierSetting::learned(0.5)],
        ..ExperimentGrid::default()
    }
}

#[test]
fn reports_are_reproducible_and_reconcile() {
    let s = small();
    let a = run_experiment(&s.eval.records, &s.ctx, &grid(), &s.artifacts).unwrap();
    let b = run_experiment(&s.eval.records, &s.ctx, &grid(), &s.artifacts).unwrap();
    assert_eq!(a.malicious, b.malicious);
    assert_eq!(a.benign, b.benign);

    assert_eq!(a.malicious.len(), 2 * 2 * 2 * 2);
    assert_eq!(a.benign.len(), 2 * 2);
    for c in &a.malicious {
        assert_eq!(c.stats.records, s.eval.records.len());
        let dsr = c.stats.dsr.unwrap();
        assert!((0.0..=1.0).contains(&dsr));
        assert_eq!(dsr, c.stats.correct as f64 / c.stats.records as f64);
    }
    for c in &a.benign {
        assert!((0.0..=1.0).contains(&c.stats.aer.unwrap()));
        assert!(c.stats.mean_rounds <= c.stats.mean_alpha);
    }
    let rows = a.rows();
    assert_eq!(rows.len(), a.malicious.len() + a.benign.len());
    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), rows.len() + 1);
}

#[test]
fn saved_artifacts_give_the_same_verdicts() {
    let s = small();
    let dir = std::env::temp_dir().join(format!("tokenaudit-artifacts-{}", std::process::id()));
    s.artifacts.save(&dir).unwrap();
    let loaded = Artifacts::load(&dir).unwrap();
    let _ = std::fs::remove_dir_all(&dir);
    let g = ExperimentGrid {
        kinds: vec![InflationKind::Naive],
        ratios: vec![1.0],
        block_sizes: vec![256],
        ..grid()
    };
    let a = run_experiment(&s.eval.records, &s.ctx, &g, &s.artifacts).unwrap();
    let b = run_experiment(&s.eval.records, &s.ctx, &g, &loaded).unwrap();
    // Weights persist as 32-bit decimals, so scores may move in the last
    // digits; verdicts away from the threshold do not.
    let dsr = |r: &tokenaudit::harness::ExperimentReport, k| {
        r.malicious_cell(
            InflationKind::Naive,
            1.0,
            256,
            k,
            if k == VerifierKind::Rule { 0.6 } else { 0.5 },
        )
        .unwrap()
        .stats
        .dsr
        .unwrap()
    };
    for k in [VerifierKind::Rule, VerifierKind::Learned] {
        assert!((dsr(&a, k) - dsr(&b, k)).abs() <= 1.0 / 24.0 + 1e-12);
    }
}

#[test]
fn missing_learned_verifier_is_a_configuration_error() {
    let s = small();
    let bare = Artifacts {
        heads: s.artifacts.heads.clone(),
        deepsets: None,
    };
    let err = run_experiment(&s.eval.records, &s.ctx, &grid(), &bare).unwrap_err();
    assert!(
        err.to_string().to_lowercase().contains("deepsets") || err.to_string().contains("verifier"),
        "{err}"
    );
}
