//! Token fingerprints and the SHA-256 Merkle tree that commits to them.
//!
//! A fingerprint is the block embedding followed by the token embedding,
//! each serialized as little-endian `f32`. Leaves are `H(fingerprint)` and
//! interior nodes are `H(left ‖ right)`. Leaf preimages are `8·d` bytes and
//! interior preimages are 64 bytes, so the two never collide for `d > 8`.
//!
//! The leaf layer is padded to the next power of two by repeating the last
//! leaf hash; an empty tree has root `H("")`.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::Embedding;
use crate::error::{invalid, Result};

/// A 32-byte SHA-256 digest, rendered as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeHash(pub [u8; 32]);

impl NodeHash {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|e| invalid(format!("bad hash hex: {e}")))?;
        Ok(NodeHash(out))
    }
}

impl fmt::Debug for NodeHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeHash({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for NodeHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for NodeHash {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for NodeHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        NodeHash::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

pub fn hash_bytes(data: &[u8]) -> NodeHash {
    NodeHash(Sha256::digest(data).into())
}

pub fn hash_pair(left: &NodeHash, right: &NodeHash) -> NodeHash {
    let mut h = Sha256::new();
    h.update(left.0);
    h.update(right.0);
    NodeHash(h.finalize().into())
}

/// Root of a tree with no leaves.
pub fn empty_root() -> NodeHash {
    hash_bytes(b"")
}

/// Block embedding ‖ token embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenFingerprint {
    pub block: Embedding,
    pub token: Embedding,
}

/// Forms a fingerprint, block half first.
pub fn make_fingerprint(block: &Embedding, token: &Embedding) -> Result<TokenFingerprint> {
    if block.dim() != token.dim() {
        return Err(invalid(format!(
            "fingerprint halves differ in dimension: {} vs {}",
            block.dim(),
            token.dim()
        )));
    }
    Ok(TokenFingerprint {
        block: block.clone(),
        token: token.clone(),
    })
}

impl TokenFingerprint {
    pub fn dim(&self) -> usize {
        self.block.dim()
    }

    /// `2·d·4` bytes: block values then token values, little-endian `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.dim() * 8);
        self.block.write_le_bytes(&mut out);
        self.token.write_le_bytes(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.is_empty() || !bytes.len().is_multiple_of(8) {
            return Err(invalid(format!(
                "fingerprint length {} is not a positive multiple of 8",
                bytes.len()
            )));
        }
        let half = bytes.len() / 2;
        Ok(TokenFingerprint {
            block: Embedding::from_le_bytes(&bytes[..half])?,
            token: Embedding::from_le_bytes(&bytes[half..])?,
        })
    }

    pub fn leaf_hash(&self) -> NodeHash {
        hash_bytes(&self.to_bytes())
    }
}

/// Hashes the leaves of one block, reusing the SHA-256 state after the
/// shared block half.
#[derive(Clone)]
pub struct BlockLeafHasher {
    prefix: Sha256,
    dim: usize,
    buf: Vec<u8>,
}

impl BlockLeafHasher {
    pub fn new(block: &Embedding) -> Self {
        let mut prefix = Sha256::new();
        prefix.update(block.to_le_bytes());
        BlockLeafHasher {
            prefix,
            dim: block.dim(),
            buf: Vec::with_capacity(block.dim() * 4),
        }
    }

    pub fn leaf(&mut self, token: &Embedding) -> Result<NodeHash> {
        if token.dim() != self.dim {
            return Err(invalid("token embedding dimension differs from block"));
        }
        self.buf.clear();
        token.write_le_bytes(&mut self.buf);
        let mut h = self.prefix.clone();
        h.update(&self.buf);
        Ok(NodeHash(h.finalize().into()))
    }
}

/// Which side of the path node a sibling hash sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Left,
    Right,
}

impl Position {
    pub fn as_str(self) -> &'static str {
        match self {
            Position::Left => "left",
            Position::Right => "right",
        }
    }

    pub fn parse(tag: &str) -> Option<Position> {
        match tag {
            "left" => Some(Position::Left),
            "right" => Some(Position::Right),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub sibling: NodeHash,
    pub position: Position,
}

/// Sibling hashes from a leaf up to the root.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MerklePath {
    pub steps: Vec<PathStep>,
}

impl MerklePath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Folds the path over a leaf hash.
    pub fn root_from_leaf(&self, leaf: NodeHash) -> NodeHash {
        self.steps.iter().fold(leaf, |acc, step| match step.position {
            Position::Left => hash_pair(&step.sibling, &acc),
            Position::Right => hash_pair(&acc, &step.sibling),
        })
    }

    /// True when the path has the depth of a tree holding `claimed_count`
    /// leaves and its positions spell out `leaf_index` bit by bit.
    pub fn matches_index(&self, leaf_index: usize, claimed_count: usize) -> bool {
        if leaf_index >= claimed_count.max(1) {
            return false;
        }
        if self.steps.len() != depth_for(claimed_count) {
            return false;
        }
        self.steps.iter().enumerate().all(|(level, step)| {
            let is_right_child = (leaf_index >> level) & 1 == 1;
            step.position
                == if is_right_child {
                    Position::Left
                } else {
                    Position::Right
                }
        })
    }
}

/// Smallest power of two ≥ `max(n, 1)`.
pub fn padded_count(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// `log2(padded_count(n))`.
pub fn depth_for(n: usize) -> usize {
    padded_count(n).trailing_zeros() as usize
}

/// A complete binary hash tree, stored level by level from the leaves up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleTree {
    levels: Vec<Vec<NodeHash>>,
    leaf_count: usize,
}

impl MerkleTree {
    /// Builds a tree over already-hashed leaves.
    pub fn from_leaf_hashes(mut leaves: Vec<NodeHash>) -> Self {
        let leaf_count = leaves.len();
        if leaf_count == 0 {
            return MerkleTree {
                levels: vec![vec![empty_root()]],
                leaf_count,
            };
        }
        let last = leaves[leaf_count - 1];
        leaves.resize(padded_count(leaf_count), last);
        let mut levels = vec![leaves];
        while levels.last().map_or(0, Vec::len) > 1 {
            let next = levels
                .last()
                .unwrap()
                .chunks_exact(2)
                .map(|pair| hash_pair(&pair[0], &pair[1]))
                .collect();
            levels.push(next);
        }
        MerkleTree { levels, leaf_count }
    }

    pub fn root(&self) -> NodeHash {
        self.levels.last().unwrap()[0]
    }

    /// Number of real (unpadded) leaves.
    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn padded_count(&self) -> usize {
        self.levels[0].len()
    }

    pub fn levels(&self) -> &[Vec<NodeHash>] {
        &self.levels
    }

    pub fn leaf(&self, index: usize) -> Option<NodeHash> {
        (index < self.leaf_count).then(|| self.levels[0][index])
    }

    /// Inclusion path for a real leaf; padding leaves are not provable.
    pub fn prove(&self, leaf_index: usize) -> Result<MerklePath> {
        if leaf_index >= self.leaf_count {
            return Err(invalid(format!(
                "leaf index {leaf_index} out of range for {} leaves",
                self.leaf_count
            )));
        }
        let mut idx = leaf_index;
        let mut steps = Vec::with_capacity(self.levels.len() - 1);
        for level in &self.levels[..self.levels.len() - 1] {
            let step = if idx.is_multiple_of(2) {
                PathStep {
                    sibling: level[idx + 1],
                    position: Position::Right,
                }
            } else {
                PathStep {
                    sibling: level[idx - 1],
                    position: Position::Left,
                }
            };
            steps.push(step);
            idx /= 2;
        }
        Ok(MerklePath { steps })
    }
}

/// Hashes each fingerprint and builds the tree.
pub fn build_tree(fingerprints: &[TokenFingerprint]) -> MerkleTree {
    MerkleTree::from_leaf_hashes(fingerprints.iter().map(TokenFingerprint::leaf_hash).collect())
}

/// Recomputes the root from a fingerprint and its path.
pub fn verify_proof(root: &NodeHash, fingerprint: &TokenFingerprint, path: &MerklePath) -> bool {
    path.root_from_leaf(fingerprint.leaf_hash()) == *root
}

/// Verifies a proof whose positions arrive as raw tags; unknown tags fail.
pub fn verify_tagged_proof(root: &NodeHash, fingerprint_bytes: &[u8], steps: &[(NodeHash, &str)]) -> bool {
    let mut acc = hash_bytes(fingerprint_bytes);
    for (sibling, tag) in steps {
        acc = match Position::parse(tag) {
            Some(Position::Left) => hash_pair(sibling, &acc),
            Some(Position::Right) => hash_pair(&acc, sibling),
            None => return false,
        };
    }
    acc == *root
}

/// The provider's pledge: a root over every billed token plus the count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleCommitment {
    pub root: NodeHash,
    #[serde(rename = "m")]
    pub claimed_count: usize,
    pub provider_id: String,
}
