//! Verifiable auditing of hidden reasoning tokens.
//!
//! A provider that bills for reasoning the user never sees commits to it with
//! a Merkle tree over token fingerprints (block embedding ‖ token embedding).
//! An auditor then challenges random blocks: every sampled token must come
//! with a valid inclusion path, and two matching heads score whether the
//! sampled tokens belong to their block and whether the block relates to the
//! visible answer. A verifier turns each round's scores into accept/reject;
//! rejection pulls in one more block until the audit accepts or runs out.
//!
//! Module map:
//!
//! - [`text`], [`record`], [`params`]: tokens, service records, partitioning
//!   and audit hyperparameters.
//! - [`embedding`]: the provider contract and the synthetic embedder.
//! - [`merkle`]: fingerprints, tree construction, inclusion proofs.
//! - [`matching`]: the two matching heads and their training.
//! - [`verifier`]: rule-based and DeepSets round decisions.
//! - [`inflation`]: adversary simulation.
//! - [`protocol`]: provider and auditor sides of the audit.
//! - [`harness`]: metrics, corpus generation, experiments, benchmarks.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod embedding;
pub mod error;
pub mod harness;
pub mod inflation;
pub mod matching;
pub mod merkle;
pub mod nn;
pub mod params;
pub mod protocol;
pub mod record;
pub mod text;
pub mod verifier;
pub mod weights;

pub use error::{AuditError, Result};
