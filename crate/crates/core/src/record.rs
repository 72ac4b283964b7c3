//! Service records, block partitioning, billing arithmetic and the JSON-lines
//! corpus format.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, AuditError, Result};
use crate::text::{TokenId, Tokenizer};

/// Token-count inflation strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InflationKind {
    /// Random vocabulary tokens.
    Naive,
    /// Vocabulary tokens whose embeddings sit close to anchor tokens.
    Ada1,
    /// Tokens copied from the anchor sequence.
    Ada2,
    /// Reasoning segments lifted from other records.
    Ada3,
    /// Retrieved passages similar to the anchor.
    Ada4,
    /// Count misreport without touching the tokens.
    Misreport,
    /// Weighted mixture of several strategies.
    Mixed,
}

impl InflationKind {
    pub const ALL_INJECTING: [InflationKind; 5] = [
        InflationKind::Naive,
        InflationKind::Ada1,
        InflationKind::Ada2,
        InflationKind::Ada3,
        InflationKind::Ada4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InflationKind::Naive => "naive",
            InflationKind::Ada1 => "ada1",
            InflationKind::Ada2 => "ada2",
            InflationKind::Ada3 => "ada3",
            InflationKind::Ada4 => "ada4",
            InflationKind::Misreport => "misreport",
            InflationKind::Mixed => "mixed",
        }
    }
}

impl fmt::Display for InflationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InflationKind {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "naive" => InflationKind::Naive,
            "ada1" => InflationKind::Ada1,
            "ada2" => InflationKind::Ada2,
            "ada3" => InflationKind::Ada3,
            "ada4" => InflationKind::Ada4,
            "misreport" => InflationKind::Misreport,
            "mixed" => InflationKind::Mixed,
            other => return Err(invalid(format!("unknown inflation kind {other:?}"))),
        })
    }
}

/// Ground-truth label of a record. Serialized as `"benign"` or
/// `"inflated:<kind>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Label {
    Benign,
    Inflated(InflationKind),
}

impl Label {
    pub fn is_benign(self) -> bool {
        matches!(self, Label::Benign)
    }
}

impl From<Label> for String {
    fn from(l: Label) -> String {
        match l {
            Label::Benign => "benign".into(),
            Label::Inflated(k) => format!("inflated:{k}"),
        }
    }
}

impl TryFrom<String> for Label {
    type Error = AuditError;

    fn try_from(s: String) -> Result<Self> {
        if s == "benign" {
            return Ok(Label::Benign);
        }
        match s.strip_prefix("inflated:") {
            Some(kind) => Ok(Label::Inflated(kind.parse()?)),
            None if s == "inflated" => Ok(Label::Inflated(InflationKind::Mixed)),
            None => Err(invalid(format!("unknown label {s:?}"))),
        }
    }
}

/// One interaction with an opaque reasoning API: prompt, hidden reasoning,
/// visible answer, and the counts the provider bills for.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceRecord {
    pub prompt: Vec<TokenId>,
    pub reasoning: Vec<TokenId>,
    pub answer: Vec<TokenId>,
    /// Reported reasoning-token count `m`.
    pub reported_reasoning: usize,
    /// Reported answer-token count `n`.
    pub reported_answer: usize,
    pub label: Label,
}

impl ServiceRecord {
    /// A benign record whose reported counts match its tokens.
    pub fn benign(prompt: Vec<TokenId>, reasoning: Vec<TokenId>, answer: Vec<TokenId>) -> Self {
        let (m, n) = (reasoning.len(), answer.len());
        ServiceRecord {
            prompt,
            reasoning,
            answer,
            reported_reasoning: m,
            reported_answer: n,
            label: Label::Benign,
        }
    }

    /// Billed token total `m + n`.
    pub fn billed_total(&self) -> usize {
        self.reported_reasoning + self.reported_answer
    }
}

/// A contiguous run of reasoning tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block<'a> {
    pub index: usize,
    /// Position of the first token within the whole trace.
    pub start: usize,
    pub tokens: &'a [TokenId],
}

impl Block<'_> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn end(&self) -> usize {
        self.start + self.tokens.len()
    }
}

/// Number of blocks needed to hold `count` tokens at `block_size` per block.
pub fn block_count(count: usize, block_size: usize) -> usize {
    count.div_ceil(block_size)
}

/// Splits a trace into `ceil(|R| / β)` blocks of `β` tokens; the last block
/// holds the remainder.
pub fn partition_trace(reasoning: &[TokenId], block_size: usize) -> Result<Vec<Block<'_>>> {
    if block_size == 0 {
        return Err(invalid("block size must be at least 1"));
    }
    Ok(reasoning
        .chunks(block_size)
        .enumerate()
        .map(|(index, tokens)| Block {
            index,
            start: index * block_size,
            tokens,
        })
        .collect())
}

/// Inflation rate: injected tokens over original reasoning tokens.
pub fn inflation_rate(original_count: usize, injected_count: usize) -> Result<f64> {
    if original_count == 0 {
        return Err(AuditError::Undefined(
            "inflation rate needs at least one original token".into(),
        ));
    }
    Ok(injected_count as f64 / original_count as f64)
}

/// Injection metadata carried by inflated corpora. Never shown to auditors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflationMeta {
    pub kind: InflationKind,
    pub ir: f64,
    pub injected_positions: Vec<usize>,
}

/// One line of a JSON-lines corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLine {
    pub prompt: String,
    pub reasoning: String,
    pub answer: String,
    pub m: usize,
    pub n: usize,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<InflationKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ir: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected_positions: Option<Vec<usize>>,
}

impl RecordLine {
    pub fn from_record(record: &ServiceRecord, tokenizer: &dyn Tokenizer, meta: Option<&InflationMeta>) -> Self {
        RecordLine {
            prompt: tokenizer.decode(&record.prompt),
            reasoning: tokenizer.decode(&record.reasoning),
            answer: tokenizer.decode(&record.answer),
            m: record.reported_reasoning,
            n: record.reported_answer,
            label: record.label,
            kind: meta.map(|m| m.kind),
            ir: meta.map(|m| m.ir),
            injected_positions: meta.map(|m| m.injected_positions.clone()),
        }
    }

    pub fn to_record(&self, tokenizer: &dyn Tokenizer) -> (ServiceRecord, Option<InflationMeta>) {
        let record = ServiceRecord {
            prompt: tokenizer.encode(&self.prompt),
            reasoning: tokenizer.encode(&self.reasoning),
            answer: tokenizer.encode(&self.answer),
            reported_reasoning: self.m,
            reported_answer: self.n,
            label: self.label,
        };
        let meta = self.kind.map(|kind| InflationMeta {
            kind,
            ir: self.ir.unwrap_or(0.0),
            injected_positions: self.injected_positions.clone().unwrap_or_default(),
        });
        (record, meta)
    }
}

/// Reads a JSON-lines corpus. Blank lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<RecordLine>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(mut writer: W, lines: &[RecordLine]) -> Result<()> {
    for line in lines {
        serde_json::to_writer(&mut writer, line)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
