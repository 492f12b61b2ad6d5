//! Self-sovereign identity on a permissioned, hash-chained ledger.
//!
//! The crate is layered bottom-up:
//!
//! - [`crypto`] and [`canonical`]: SHA-256, Ed25519 signatures, sealed-box
//!   encryption and canonical JSON.
//! - [`ledger`]: transactions, Merkle roots, blocks, chain validation.
//! - [`state`]: the replicated state machine (DID registry, schemas,
//!   credential definitions, revocation registries, consent proofs).
//! - [`consensus`]: RBFT-style ordering over a deterministic simulated
//!   network.
//! - [`wallet`]: pairwise DIDs, encrypted key storage and challenge-response
//!   authentication.
//! - [`credential`]: issuance, presentation, verification, revocation and
//!   consent receipts.
//! - [`scenario`]: scripted end-to-end replays of the medical, employment
//!   and loan use cases.

pub mod auth;
mod b64;
pub mod canonical;
pub mod consensus;
pub mod consent;
pub mod credential;
pub mod crypto;
pub mod flow;
pub mod ledger;
pub mod scenario;
pub mod state;
pub mod wallet;

pub use canonical::{canonicalize, to_canonical, CanonicalBytes};
pub use crypto::{Digest, Signature, VerificationKey};
pub use ledger::{Block, Chain, LedgerTransaction, TxnType};
pub use state::{DidDocument, NodeState};
