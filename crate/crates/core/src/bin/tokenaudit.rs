use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use tokenaudit::embedding::{EmbeddingProvider, SyntheticProvider};
use tokenaudit::harness::{
    bench_merkle, block_to_answer_pairs, deepsets_sets, generate_corpus, run_experiment, token_to_block_pairs,
    write_timing_csv, ArtifactConfig, Artifacts, CorpusConfig, ExperimentGrid, DEEPSETS_FILE,
};
use tokenaudit::inflation::{inflate_dataset, InflationConfig, InflationContext};
use tokenaudit::matching::{train_matching_head, HeadKind};
use tokenaudit::params::{AuditParams, VerifierKind};
use tokenaudit::protocol::{write_transcript, AuditHeads, Auditor, ProviderSession};
use tokenaudit::record::{read_corpus, write_corpus, InflationKind, RecordLine, ServiceRecord};
use tokenaudit::text::{RuleTokenizer, Vocabulary};
use tokenaudit::verifier::{train_deepsets, Verifier};
use tokenaudit::{AuditError, Result};

#[derive(Parser)]
#[command(
    name = "tokenaudit",
    version,
    about = "Commit to hidden reasoning tokens and audit billed counts"
)]
struct Cli {
    /// Seed for whatever the subcommand randomizes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML or JSON file with `corpus`, `inflation`, `training`, `grid` and
    /// `embedding` sections; missing sections keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benign corpus and its vocabulary.
    GenCorpus {
        #[arg(long)]
        records: Option<usize>,
        /// Lengths matched to the reference block counts.
        #[arg(long)]
        matched: bool,
    },
    /// Inflate every record of a corpus.
    Inflate {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        kind: Option<String>,
        /// Comma-separated inflation rates.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
    },
    /// Train both matching heads.
    TrainMh {
        #[command(flatten)]
        data: Data,
    },
    /// Train the DeepSets verifier with already trained heads.
    TrainVerifier {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        artifacts: PathBuf,
    },
    /// Print the commitment for one record.
    Commit {
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        session: Session,
    },
    /// Audit one record and write its transcript.
    Audit {
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        session: Session,
        #[arg(long)]
        artifacts: PathBuf,
        #[arg(long, default_value = "learned")]
        verifier: String,
        /// Overrides the verifier's default τ.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Run the configured experiment grid over a benign corpus.
    Eval {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        artifacts: PathBuf,
    },
    /// Time Merkle construction against token count and dimension.
    BenchMerkle {
        #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000,8000")]
        tokens: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "384")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
}

#[derive(Args)]
struct Data {
    /// JSON-lines corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Vocabulary written by gen-corpus.
    #[arg(long)]
    vocab: PathBuf,
}

#[derive(Args)]
struct Session {
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 256)]
    block_size: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
struct EmbeddingConfig {
    seed: u64,
    dim: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig { seed: 42, dim: 384 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct Config {
    corpus: CorpusConfig,
    inflation: InflationConfig,
    training: ArtifactConfig,
    grid: ExperimentGrid,
    embedding: EmbeddingConfig,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_str(&text)?)
    } else {
        toml::from_str(&text).map_err(|e| AuditError::Config(format!("{}: {e}", path.display())))
    }
}

fn parse_enum<T: for<'de> Deserialize<'de>>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_lowercase()))
        .map_err(|_| AuditError::Config(format!("unknown {what} `{s}`")))
}

struct Loaded {
    tokenizer: RuleTokenizer,
    records: Vec<ServiceRecord>,
}

fn load_data(data: &Data) -> Result<Loaded> {
    let vocab: Vocabulary = serde_json::from_reader(BufReader::new(File::open(&data.vocab)?))?;
    let tokenizer = RuleTokenizer::new(Arc::new(vocab));
    let lines = read_corpus(BufReader::new(File::open(&data.corpus)?))?;
    let records = lines.iter().map(|l| l.to_record(&tokenizer).0).collect();
    Ok(Loaded { tokenizer, records })
}

fn provider(cfg: &Config) -> Arc<dyn EmbeddingProvider> {
    Arc::new(SyntheticProvider::new(cfg.embedding.seed, cfg.embedding.dim))
}

fn context(cfg: &Config, loaded: &Loaded) -> Result<InflationContext> {
    InflationContext::new(provider(cfg), loaded.tokenizer.vocabulary())?.with_prompt_retrieval(&loaded.records)
}

fn pick(records: &[ServiceRecord], index: usize) -> Result<ServiceRecord> {
    records
        .get(index)
        .cloned()
        .ok_or_else(|| AuditError::Config(format!("record {index} is outside a corpus of {}", records.len())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), value)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.corpus.seed = seed;
        cfg.inflation.seed = seed;
        cfg.training.plan.seed = seed;
        cfg.training.head.seed = seed;
        cfg.training.deepsets.seed = seed;
        cfg.grid.seed = seed;
    }
    let out = cli.out.as_path();
    std::fs::create_dir_all(out)?;
    match cli.command {
        Command::GenCorpus { records, matched } => {
            let mut cc = if matched {
                CorpusConfig {
                    seed: cfg.corpus.seed,
                    ..CorpusConfig::matched()
                }
            } else {
                cfg.corpus.clone()
            };
            if let Some(n) = records {
                cc.records = n;
            }
            let corpus = generate_corpus(&cc)?;
            let tokenizer = RuleTokenizer::new(corpus.vocab().clone());
            let lines: Vec<RecordLine> = corpus
                .records
                .iter()
                .map(|r| RecordLine::from_record(r, &tokenizer, None))
                .collect();
            write_corpus(BufWriter::new(File::create(out.join("corpus.jsonl"))?), &lines)?;
            corpus.write_vocab(&out.join("vocab.json"))?;
            println!("{} records, vocabulary of {}", lines.len(), corpus.vocab().len());
        }
        Command::Inflate { data, kind, ratios } => {
            let loaded = load_data(&data)?;
            let mut ic = cfg.inflation.clone();
            if let Some(k) = kind {
                ic.kind = parse_enum::<InflationKind>("inflation kind", &k)?;
            }
            if let Some(r) = ratios {
                ic.ratios = r;
            }
            let inflated = inflate_dataset(&loaded.records, &context(&cfg, &loaded)?, &ic)?;
            let lines: Vec<RecordLine> = inflated
                .iter()
                .map(|r| RecordLine::from_record(&r.record, &loaded.tokenizer, Some(&r.meta())))
                .collect();
            write_corpus(BufWriter::new(File::create(out.join("inflated.jsonl"))?), &lines)?;
            println!("{} inflated records ({})", lines.len(), ic.kind);
        }
        Command::TrainMh { data } => {
            let loaded = load_data(&data)?;
            let ctx = context(&cfg, &loaded)?;
            let plan = &cfg.training.plan;
            let tb = train_matching_head(
                HeadKind::TokenToBlock,
                &token_to_block_pairs(&loaded.records, &ctx, plan)?,
                &cfg.training.head,
            )?;
            let ba = train_matching_head(
                HeadKind::BlockToAnswer,
                &block_to_answer_pairs(&loaded.records, &ctx, plan)?,
                &cfg.training.head,
            )?;
            let artifacts = Artifacts {
                heads: AuditHeads::new(Arc::new(tb), Arc::new(ba))?,
                deepsets: None,
            };
            artifacts.save(out)?;
            println!("matching heads written to {}", out.display());
        }
        Command::TrainVerifier { data, artifacts } => {
            let loaded = load_data(&data)?;
            let heads = Artifacts::load(&artifacts)?.heads;
            let sets = deepsets_sets(&loaded.records, &context(&cfg, &loaded)?, &heads, &cfg.training.plan)?;
            let model = train_deepsets(&sets, &cfg.training.deepsets)?;
            model.save(&out.join(DEEPSETS_FILE))?;
            println!("verifier trained on {} score sets", sets.len());
        }
        Command::Commit { data, session } => {
            let loaded = load_data(&data)?;
            let record = pick(&loaded.records, session.index)?;
            let s = ProviderSession::new(record, session.block_size, provider(&cfg), "provider")?;
            let commitment = s.commit();
            write_json(&out.join("commit.json"), &commitment)?;
            println!("{}", serde_json::to_string(&commitment)?);
        }
        Command::Audit {
            data,
            session,
            artifacts,
            verifier,
            threshold,
        } => {
            let loaded = load_data(&data)?;
            let artifacts = Artifacts::load(&artifacts)?;
            let kind: VerifierKind = parse_enum("verifier", &verifier)?;
            let v = match kind {
                VerifierKind::Rule => Verifier::rule(),
                VerifierKind::Learned => Verifier::learned(
                    artifacts
                        .deepsets
                        .clone()
                        .ok_or_else(|| AuditError::Config("the learned verifier needs deepsets.json".into()))?,
                ),
            };
            let mut params = AuditParams::new(session.block_size, kind);
            if let Some(t) = threshold {
                params = params.with_threshold(t);
            }
            let p = provider(&cfg);
            let s = ProviderSession::new(
                pick(&loaded.records, session.index)?,
                session.block_size,
                p.clone(),
                "provider",
            )?;
            let auditor = Auditor::new(artifacts.heads, v, params, p)?.with_transcript(true);
            let outcome = auditor.run(&s.visible(), &s, cfg.grid.seed)?;
            write_transcript(
                BufWriter::new(File::create(out.join("transcript.jsonl"))?),
                &outcome.transcript,
            )?;
            write_json(&out.join("verdict.json"), &outcome.verdict)?;
            println!("{}", serde_json::to_string(&outcome.verdict.to_message())?);
        }
        Command::Eval { data, artifacts } => {
            let loaded = load_data(&data)?;
            let artifacts = Artifacts::load(&artifacts)?;
            let report = run_experiment(&loaded.records, &context(&cfg, &loaded)?, &cfg.grid, &artifacts)?;
            report.save(&out.join("report.json"), &out.join("report.csv"))?;
            for row in report.rows() {
                let rate = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
                println!(
                    "{:<9} {:<6} IR {:<4} β {:<5} {:?} τ {:.2}  DSR {}  AER {}",
                    row.class,
                    row.kind,
                    row.ir.map_or("-".to_string(), |v| v.to_string()),
                    row.block_size,
                    row.verifier,
                    row.threshold,
                    rate(row.dsr),
                    rate(row.aer)
                );
            }
            println!("{} audits in {:.1}s", report.runtime.audits, report.runtime.total_secs);
        }
        Command::BenchMerkle { tokens, dims, repeats } => {
            let rows = bench_merkle(&tokens, &dims, repeats, cfg.grid.seed)?;
            write_timing_csv(BufWriter::new(File::create(out.join("merkle_timing.csv"))?), &rows)?;
            for r in &rows {
                println!(
                    "N {:>7}  d {:>4}  median {:.3} ms",
                    r.tokens,
                    r.dim,
                    r.median_secs * 1e3
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
