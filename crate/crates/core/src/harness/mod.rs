//! Metrics, the synthetic corpus, training-set construction, experiment
//! orchestration and the Merkle timing benchmark.

mod bench;
mod corpus;
mod experiment;
mod metrics;
mod training;

pub use bench::{bench_merkle, build_tree_from_embeddings, linear_fit, write_timing_csv, TimingRow, BENCH_BLOCK_SIZE};
pub use corpus::{generate_corpus, CorpusConfig, Lexicon, LexiconShape, SyntheticCorpus};
pub use experiment::{
    audit_seed, run_experiment, BenignCell, CellStats, ExperimentGrid, ExperimentReport, MaliciousCell, ReportRow,
    RuntimeStats, VerifierSetting,
};
pub use metrics::{compute_aer, compute_dsr, DetectionRates};
pub use training::{
    block_to_answer_pairs, deepsets_sets, score_block, token_to_block_pairs, train_artifacts, ArtifactConfig,
    Artifacts, TrainingPlan, BLOCK_TO_ANSWER_FILE, DEEPSETS_FILE, DESK_HEAD_LEARNING_RATE, TOKEN_TO_BLOCK_FILE,
};
