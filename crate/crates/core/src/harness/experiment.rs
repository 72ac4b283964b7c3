use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::training::Artifacts;
use crate::embedding::EmbeddingProvider;
use crate::error::{invalid, AuditError, Result};
use crate::inflation::{inflate_record_ratios, InflationConfig, InflationContext};
use crate::params::{AuditParams, Evidence, VerifierKind, DEFAULT_INITIAL_RATIO};
use crate::protocol::{AuditVerdict, Auditor, ProviderSession, ScoreMemo};
use crate::record::{InflationKind, ServiceRecord};
use crate::verifier::Verifier;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifierSetting {
    pub kind: VerifierKind,
    pub threshold: f64,
}

impl VerifierSetting {
    pub fn rule(threshold: f64) -> Self {
        VerifierSetting {
            kind: VerifierKind::Rule,
            threshold,
        }
    }

    pub fn learned(threshold: f64) -> Self {
        VerifierSetting {
            kind: VerifierKind::Learned,
            threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentGrid {
    pub kinds: Vec<InflationKind>,
    pub ratios: Vec<f64>,
    pub block_sizes: Vec<usize>,
    pub verifiers: Vec<VerifierSetting>,
    pub initial_ratio: f64,
    pub evidence: Evidence,
    /// Audit the untouched records too.
    pub benign: bool,
    pub seed: u64,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        ExperimentGrid {
            kinds: InflationKind::ALL_INJECTING.to_vec(),
            ratios: vec![0.1, 0.3, 0.5, 1.0, 2.0, 3.0],
            block_sizes: vec![256],
            verifiers: vec![
                VerifierSetting::rule(VerifierKind::Rule.default_threshold()),
                VerifierSetting::learned(VerifierKind::Learned.default_threshold()),
            ],
            initial_ratio: DEFAULT_INITIAL_RATIO,
            evidence: Evidence::PerRound,
            benign: true,
            seed: 42,
        }
    }
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.block_sizes.is_empty() || self.verifiers.is_empty() {
            return Err(invalid("the grid needs at least one block size and one verifier"));
        }
        if !self.kinds.is_empty() && self.ratios.is_empty() {
            return Err(invalid("inflation kinds need at least one ratio"));
        }
        if self.kinds.contains(&InflationKind::Mixed) {
            return Err(invalid("mixed inflation is configured through the inflation module"));
        }
        Ok(())
    }
}

/// Aggregate over the audits of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub records: usize,
    /// Flagged for inflated cells, accepted for benign ones.
    pub correct: usize,
    pub dsr: Option<f64>,
    /// Mean `audited blocks / α`.
    pub aer: Option<f64>,
    pub mean_rounds: f64,
    pub mean_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaliciousCell {
    pub kind: InflationKind,
    pub ir: f64,
    pub block_size: usize,
    pub verifier: VerifierKind,
    pub threshold: f64,
    #[serde(flatten)]
    pub stats: CellStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenignCell {
    pub block_size: usize,
    pub verifier: VerifierKind,
    pub threshold: f64,
    #[serde(flatten)]
    pub stats: CellStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub total_secs: f64,
    pub sessions: usize,
    pub audits: usize,
}

/// Results are a pure function of corpus, grid, artifacts and seed; only
/// `runtime` varies between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub grid: ExperimentGrid,
    pub malicious: Vec<MaliciousCell>,
    pub benign: Vec<BenignCell>,
    pub runtime: RuntimeStats,
}

#[derive(Default)]
struct Acc {
    records: usize,
    correct: usize,
    exposure: f64,
    exposed: usize,
    rounds: usize,
    alpha: usize,
}

impl Acc {
    fn add(&mut self, v: &AuditVerdict, correct: bool) {
        self.records += 1;
        self.correct += usize::from(correct);
        if v.alpha > 0 {
            self.exposure += v.audited_blocks.len() as f64 / v.alpha as f64;
            self.exposed += 1;
        }
        self.rounds += v.rounds;
        self.alpha += v.alpha;
    }

    fn stats(&self) -> CellStats {
        let n = self.records.max(1) as f64;
        CellStats {
            records: self.records,
            correct: self.correct,
            dsr: (self.records > 0).then(|| self.correct as f64 / self.records as f64),
            aer: (self.exposed > 0).then(|| self.exposure / self.exposed as f64),
            mean_rounds: self.rounds as f64 / n,
            mean_alpha: self.alpha as f64 / n,
        }
    }
}

/// Audit seed of record `index`: shared by every kind, ratio and verifier so
/// that cells differ only in what they vary.
pub fn audit_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (index as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

fn build_auditors(
    grid: &ExperimentGrid,
    block_size: usize,
    artifacts: &Artifacts,
    provider: &Arc<dyn EmbeddingProvider>,
) -> Result<Vec<Auditor>> {
    grid.verifiers
        .iter()
        .map(|s| {
            let verifier =
                match s.kind {
                    VerifierKind::Rule => Verifier::rule(),
                    VerifierKind::Learned => Verifier::learned(artifacts.deepsets.clone().ok_or_else(|| {
                        AuditError::Config("the learned verifier needs a trained DeepSets model".into())
                    })?),
                };
            let params = AuditParams::new(block_size, s.kind)
                .with_threshold(s.threshold)
                .with_initial_ratio(grid.initial_ratio)
                .with_evidence(grid.evidence);
            Auditor::new(artifacts.heads.clone(), verifier, params, provider.clone())
        })
        .collect()
}

/// Inflates, commits and audits every record of `corpus` under every grid
/// cell. Each provider session is built once and audited by every verifier.
pub fn run_experiment(
    corpus: &[ServiceRecord],
    ctx: &InflationContext,
    grid: &ExperimentGrid,
    artifacts: &Artifacts,
) -> Result<ExperimentReport> {
    grid.validate()?;
    let started = Instant::now();
    let provider = &ctx.provider;
    let mut malicious: BTreeMap<(usize, usize, usize, usize), Acc> = BTreeMap::new();
    let mut benign: BTreeMap<(usize, usize), Acc> = BTreeMap::new();
    let (mut sessions, mut audits) = (0, 0);
    for (bi, &beta) in grid.block_sizes.iter().enumerate() {
        let auditors = build_auditors(grid, beta, artifacts, provider)?;
        for (i, record) in corpus.iter().enumerate() {
            if record.reasoning.is_empty() || record.answer.is_empty() {
                continue;
            }
            let seed = audit_seed(grid.seed, i);
            if grid.benign {
                let session = ProviderSession::new(record.clone(), beta, provider.clone(), "experiment")?;
                sessions += 1;
                let view = session.visible();
                let mut memo = ScoreMemo::new();
                for (vi, auditor) in auditors.iter().enumerate() {
                    let v = auditor.run_with_memo(&view, &session, seed, &mut memo)?.verdict;
                    audits += 1;
                    benign.entry((bi, vi)).or_default().add(&v, !v.is_flagged());
                }
            }
            for (ki, &kind) in grid.kinds.iter().enumerate() {
                let cfg = InflationConfig::new(kind)
                    .with_ratios(&grid.ratios)
                    .with_seed(grid.seed);
                for (ri, inflated) in inflate_record_ratios(corpus, i, ctx, &cfg)?.into_iter().enumerate() {
                    let session = ProviderSession::new(inflated.record, beta, provider.clone(), "experiment")?;
                    sessions += 1;
                    let view = session.visible();
                    let mut memo = ScoreMemo::new();
                    for (vi, auditor) in auditors.iter().enumerate() {
                        let v = auditor.run_with_memo(&view, &session, seed, &mut memo)?.verdict;
                        audits += 1;
                        malicious.entry((bi, ki, ri, vi)).or_default().add(&v, v.is_flagged());
                    }
                }
            }
        }
    }
    let malicious = malicious
        .into_iter()
        .map(|((bi, ki, ri, vi), acc)| MaliciousCell {
            kind: grid.kinds[ki],
            ir: grid.ratios[ri],
            block_size: grid.block_sizes[bi],
            verifier: grid.verifiers[vi].kind,
            threshold: grid.verifiers[vi].threshold,
            stats: acc.stats(),
        })
        .collect();
    let benign = benign
        .into_iter()
        .map(|((bi, vi), acc)| BenignCell {
            block_size: grid.block_sizes[bi],
            verifier: grid.verifiers[vi].kind,
            threshold: grid.verifiers[vi].threshold,
            stats: acc.stats(),
        })
        .collect();
    Ok(ExperimentReport {
        grid: grid.clone(),
        malicious,
        benign,
        runtime: RuntimeStats {
            total_secs: started.elapsed().as_secs_f64(),
            sessions,
            audits,
        },
    })
}

/// One row of the flat CSV table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub class: String,
    pub kind: String,
    pub ir: Option<f64>,
    pub block_size: usize,
    pub verifier: VerifierKind,
    pub threshold: f64,
    pub records: usize,
    pub dsr: Option<f64>,
    pub aer: Option<f64>,
    pub mean_rounds: f64,
    pub mean_alpha: f64,
}

impl ExperimentReport {
    pub fn malicious_cell(
        &self,
        kind: InflationKind,
        ir: f64,
        block_size: usize,
        verifier: VerifierKind,
        threshold: f64,
    ) -> Option<&MaliciousCell> {
        self.malicious.iter().find(|c| {
            c.kind == kind
                && c.ir == ir
                && c.block_size == block_size
                && c.verifier == verifier
                && c.threshold == threshold
        })
    }

    pub fn benign_cell(&self, block_size: usize, verifier: VerifierKind, threshold: f64) -> Option<&BenignCell> {
        self.benign
            .iter()
            .find(|c| c.block_size == block_size && c.verifier == verifier && c.threshold == threshold)
    }

    /// Inflated records flagged over inflated records, pooled across kinds,
    /// for one ratio, block size and verifier.
    pub fn pooled_dsr(&self, ir: f64, block_size: usize, verifier: VerifierKind, threshold: f64) -> Option<f64> {
        let (n, hit) = self
            .malicious
            .iter()
            .filter(|c| c.ir == ir && c.block_size == block_size && c.verifier == verifier && c.threshold == threshold)
            .fold((0, 0), |(n, hit), c| (n + c.stats.records, hit + c.stats.correct));
        (n > 0).then(|| hit as f64 / n as f64)
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        let benign = self.benign.iter().map(|c| ReportRow {
            class: "benign".into(),
            kind: "none".into(),
            ir: None,
            block_size: c.block_size,
            verifier: c.verifier,
            threshold: c.threshold,
            records: c.stats.records,
            dsr: c.stats.dsr,
            aer: c.stats.aer,
            mean_rounds: c.stats.mean_rounds,
            mean_alpha: c.stats.mean_alpha,
        });
        let malicious = self.malicious.iter().map(|c| ReportRow {
            class: "malicious".into(),
            kind: c.kind.as_str().into(),
            ir: Some(c.ir),
            block_size: c.block_size,
            verifier: c.verifier,
            threshold: c.threshold,
            records: c.stats.records,
            dsr: c.stats.dsr,
            aer: c.stats.aer,
            mean_rounds: c.stats.mean_rounds,
            mean_alpha: c.stats.mean_alpha,
        });
        benign.chain(malicious).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, json: &Path, csv: &Path) -> Result<()> {
        std::fs::write(json, serde_json::to_vec_pretty(self)?)?;
        self.write_csv(std::fs::File::create(csv)?)
    }
}
