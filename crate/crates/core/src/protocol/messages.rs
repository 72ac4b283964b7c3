use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::Result;
use crate::merkle::{MerkleCommitment, MerklePath, NodeHash, PathStep, Position};

/// Auditor → provider: open these leaves of this block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Challenge {
    pub audit_id: u64,
    pub block_index: usize,
    /// Global leaf indices in `[0, m)`.
    pub token_indices: Vec<usize>,
}

/// One step of a path as it travels: hex hash plus a side tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireStep {
    pub hash: String,
    pub pos: String,
}

/// Provider → auditor: the block embedding plus one fingerprint and path per
/// requested index, in request order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub audit_id: u64,
    pub block_index: usize,
    pub block_embedding: Embedding,
    /// Base64 of each fingerprint's little-endian bytes.
    pub fingerprints: Vec<String>,
    pub paths: Vec<Vec<WireStep>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Refusal {
    pub audit_id: u64,
    pub block_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProviderReply {
    Response(Response),
    Refusal(Refusal),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditDecision {
    AuditSuccessful,
    FlaggedForInflation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// A path did not fold to the committed root or did not match its index.
    MerkleMismatch,
    /// Every block was audited and the verifier never accepted.
    SemanticRejectExhausted,
    /// The provider declined to open a challenged leaf.
    Refusal,
    /// The response was malformed or disagreed with itself.
    InconsistentResponse,
    /// Nothing was committed (`m = 0`).
    EmptyCommitment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditCost {
    pub merkle_proofs: usize,
    pub semantic_judgments: usize,
}

/// `(k·ℓ, 2·ℓ)`: one proof per sampled token, two judgments per block.
pub fn audit_cost(rounds: usize, per_block_sample: usize) -> AuditCost {
    AuditCost {
        merkle_proofs: per_block_sample * rounds,
        semantic_judgments: 2 * rounds,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictMessage {
    pub audit_id: u64,
    pub decision: AuditDecision,
    pub l: usize,
    pub cost: AuditCost,
    pub reason: Option<FailureReason>,
}

/// Everything that crosses between provider and auditor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Commit(MerkleCommitment),
    Challenge(Challenge),
    Response(Response),
    Refusal(Refusal),
    Verdict(VerdictMessage),
}

impl From<ProviderReply> for WireMessage {
    fn from(reply: ProviderReply) -> Self {
        match reply {
            ProviderReply::Response(r) => WireMessage::Response(r),
            ProviderReply::Refusal(r) => WireMessage::Refusal(r),
        }
    }
}

pub fn encode_fingerprint(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn decode_fingerprint(text: &str) -> Option<Vec<u8>> {
    STANDARD.decode(text).ok()
}

pub fn path_to_wire(path: &MerklePath) -> Vec<WireStep> {
    path.steps
        .iter()
        .map(|s| WireStep {
            hash: s.sibling.to_hex(),
            pos: s.position.as_str().to_string(),
        })
        .collect()
}

/// `None` when a hash is not 32 hex bytes or a tag is neither side.
pub fn path_from_wire(steps: &[WireStep]) -> Option<MerklePath> {
    steps
        .iter()
        .map(|s| {
            Some(PathStep {
                sibling: NodeHash::from_hex(&s.hash).ok()?,
                position: Position::parse(&s.pos)?,
            })
        })
        .collect::<Option<Vec<_>>>()
        .map(|steps| MerklePath { steps })
}

pub fn write_transcript<W: Write>(mut writer: W, messages: &[WireMessage]) -> Result<()> {
    for m in messages {
        serde_json::to_writer(&mut writer, m)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_transcript<R: BufRead>(reader: R) -> Result<Vec<WireMessage>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merkle::hash_bytes;

    #[test]
    fn cost_examples() {
        assert_eq!(
            audit_cost(3, 25),
            AuditCost {
                merkle_proofs: 75,
                semantic_judgments: 6
            }
        );
        assert_eq!(crate::params::default_per_block_sample(256), 25);
    }

    #[test]
    fn wire_shapes() {
        let c = WireMessage::Challenge(Challenge {
            audit_id: 7,
            block_index: 2,
            token_indices: vec![513, 600],
        });
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(
            json,
            r#"{"type":"challenge","audit_id":7,"block_index":2,"token_indices":[513,600]}"#
        );
        let commit = WireMessage::Commit(MerkleCommitment {
            root: hash_bytes(b""),
            claimed_count: 10,
            provider_id: "p".into(),
        });
        let json = serde_json::to_string(&commit).unwrap();
        assert!(json.contains(r#""type":"commit""#) && json.contains(r#""m":10"#));
        let mut buf = Vec::new();
        write_transcript(&mut buf, &[c.clone(), commit.clone()]).unwrap();
        assert_eq!(read_transcript(&buf[..]).unwrap(), vec![c, commit]);
    }

    #[test]
    fn path_wire_round_trip_and_rejects_bad_tags() {
        let path = MerklePath {
            steps: vec![PathStep {
                sibling: hash_bytes(b"x"),
                position: Position::Left,
            }],
        };
        let wire = path_to_wire(&path);
        assert_eq!(wire[0].pos, "left");
        assert_eq!(path_from_wire(&wire).unwrap(), path);
        let mut bad = wire.clone();
        bad[0].pos = "up".into();
        assert!(path_from_wire(&bad).is_none());
        bad[0].pos = "left".into();
        bad[0].hash.pop();
        assert!(path_from_wire(&bad).is_none());
        assert_eq!(
            decode_fingerprint(&encode_fingerprint(&[1, 2, 3])).unwrap(),
            vec![1, 2, 3]
        );
        assert!(decode_fingerprint("***").is_none());
    }
}
