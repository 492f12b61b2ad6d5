//! Hash-chained ledger: typed transactions, Merkle roots, blocks and chain
//! validation. Blocks carry no proof-of-work; ordering comes from the
//! consensus layer.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::canonical::{canonical_digest, to_canonical, CanonicalError};
use crate::crypto::{self, sha256, sha256_pair, Digest, Signature, SigningKeyPair, VerificationKey};

/// File extension used for persisted ledgers.
pub const LEDGER_EXTENSION: &str = ".ledger.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("merkle tree needs at least one leaf")]
    EmptyLeaves,
    #[error("blocks must contain at least one transaction")]
    EmptyBlock,
    #[error("leaf index {index} out of range for {len} leaves")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("block {height} does not extend the chain head")]
    NotExtendingHead { height: u64 },
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TxnType {
    DidReg,
    Schema,
    CredDef,
    RevocEntry,
    ConsentProof,
}

impl fmt::Display for TxnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TxnType::DidReg => "DID_REG",
            TxnType::Schema => "SCHEMA",
            TxnType::CredDef => "CRED_DEF",
            TxnType::RevocEntry => "REVOC_ENTRY",
            TxnType::ConsentProof => "CONSENT_PROOF",
        })
    }
}

/// A signed, typed public record.
///
/// `author_signature` covers the canonical `(txn_type, payload, author_did,
/// timestamp)` body; `txn_id` hashes that body together with the signature
/// so that every stored byte feeds the block's Merkle root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerTransaction {
    pub txn_type: TxnType,
    pub payload: Value,
    pub author_did: String,
    pub timestamp: u64,
    pub author_signature: Signature,
    pub txn_id: Digest,
}

impl LedgerTransaction {
    pub fn new(
        txn_type: TxnType,
        payload: Value,
        author_did: impl Into<String>,
        timestamp: u64,
        key: &SigningKeyPair,
    ) -> Result<Self, CanonicalError> {
        let author_did = author_did.into();
        let body = signing_body(txn_type, &payload, &author_did, timestamp)?;
        let author_signature = key.sign(&body);
        let mut txn = Self {
            txn_type,
            payload,
            author_did,
            timestamp,
            author_signature,
            txn_id: Digest::ZERO,
        };
        txn.txn_id = txn.compute_id()?;
        Ok(txn)
    }

    pub fn signing_bytes(&self) -> Result<Vec<u8>, CanonicalError> {
        signing_body(self.txn_type, &self.payload, &self.author_did, self.timestamp)
    }

    pub fn compute_id(&self) -> Result<Digest, CanonicalError> {
        canonical_digest(&json!({
            "txn_type": self.txn_type,
            "payload": self.payload,
            "author_did": self.author_did,
            "timestamp": self.timestamp,
            "author_signature": self.author_signature,
        }))
    }

    /// True when the stored `txn_id` matches the fields.
    pub fn id_is_consistent(&self) -> bool {
        self.compute_id().map(|id| id == self.txn_id).unwrap_or(false)
    }

    pub fn verify_signature(&self, key: &VerificationKey) -> bool {
        match self.signing_bytes() {
            Ok(body) => crypto::verify(key, &body, &self.author_signature),
            Err(_) => false,
        }
    }
}

fn signing_body(
    txn_type: TxnType,
    payload: &Value,
    author_did: &str,
    timestamp: u64,
) -> Result<Vec<u8>, CanonicalError> {
    Ok(to_canonical(&json!({
        "txn_type": txn_type,
        "payload": payload,
        "author_did": author_did,
        "timestamp": timestamp,
    }))?
    .into_bytes())
}

/// Binary Merkle root; an odd node at any level is paired with itself.
pub fn merkle_root(leaves: &[Digest]) -> Result<Digest, LedgerError> {
    if leaves.is_empty() {
        return Err(LedgerError::EmptyLeaves);
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = next_level(&level);
    }
    Ok(level[0])
}

fn next_level(level: &[Digest]) -> Vec<Digest> {
    level
        .chunks(2)
        .map(|pair| sha256_pair(&pair[0], pair.get(1).unwrap_or(&pair[0])))
        .collect()
}

/// Which side of the running hash a proof sibling sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofStep {
    pub sibling: Digest,
    pub side: Side,
}

pub fn merkle_proof(leaves: &[Digest], index: usize) -> Result<Vec<ProofStep>, LedgerError> {
    if leaves.is_empty() {
        return Err(LedgerError::EmptyLeaves);
    }
    if index >= leaves.len() {
        return Err(LedgerError::IndexOutOfRange {
            index,
            len: leaves.len(),
        });
    }
    let mut proof = Vec::new();
    let mut level = leaves.to_vec();
    let mut idx = index;
    while level.len() > 1 {
        let step = if idx.is_multiple_of(2) {
            ProofStep {
                sibling: *level.get(idx + 1).unwrap_or(&level[idx]),
                side: Side::Right,
            }
        } else {
            ProofStep {
                sibling: level[idx - 1],
                side: Side::Left,
            }
        };
        proof.push(step);
        level = next_level(&level);
        idx /= 2;
    }
    Ok(proof)
}

pub fn verify_inclusion(txn_id: &Digest, proof: &[ProofStep], root: &Digest) -> bool {
    let folded = proof.iter().fold(*txn_id, |acc, step| match step.side {
        Side::Left => sha256_pair(&step.sibling, &acc),
        Side::Right => sha256_pair(&acc, &step.sibling),
    });
    folded == *root
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub merkle_root: Digest,
    pub timestamp: u64,
    pub txns: Vec<LedgerTransaction>,
    pub block_hash: Digest,
}

impl Block {
    pub fn genesis() -> Self {
        let mut b = Block {
            height: 0,
            prev_hash: Digest::ZERO,
            merkle_root: Digest::ZERO,
            timestamp: 0,
            txns: Vec::new(),
            block_hash: Digest::ZERO,
        };
        b.block_hash = b.header_hash();
        b
    }

    pub fn header_hash(&self) -> Digest {
        header_hash(self.height, &self.prev_hash, &self.merkle_root, self.timestamp)
    }

    pub fn txn_ids(&self) -> Vec<Digest> {
        self.txns.iter().map(|t| t.txn_id).collect()
    }

    /// Inclusion proof for the transaction at `index`.
    pub fn inclusion_proof(&self, index: usize) -> Result<Vec<ProofStep>, LedgerError> {
        merkle_proof(&self.txn_ids(), index)
    }
}

fn header_hash(height: u64, prev_hash: &Digest, merkle_root: &Digest, timestamp: u64) -> Digest {
    let header = json!({
        "height": height,
        "prev_hash": prev_hash,
        "merkle_root": merkle_root,
        "timestamp": timestamp,
    });
    canonical_digest(&header).expect("header has no floats")
}

pub fn build_block(prev: &Block, txns: Vec<LedgerTransaction>, timestamp: u64) -> Result<Block, LedgerError> {
    if txns.is_empty() {
        return Err(LedgerError::EmptyBlock);
    }
    let ids: Vec<Digest> = txns.iter().map(|t| t.txn_id).collect();
    let merkle_root = merkle_root(&ids)?;
    let height = prev.height + 1;
    let prev_hash = prev.block_hash;
    Ok(Block {
        height,
        prev_hash,
        merkle_root,
        timestamp,
        txns,
        block_hash: header_hash(height, &prev_hash, &merkle_root, timestamp),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    BadMerkle,
    BadHash,
    BadLink,
    BadHeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainValidity {
    Valid,
    Invalid { height: u64, reason: InvalidReason },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chain {
    pub blocks: Vec<Block>,
}

impl Default for Chain {
    fn default() -> Self {
        Self::new()
    }
}

impl Chain {
    /// A chain holding only the genesis block.
    pub fn new() -> Self {
        Chain {
            blocks: vec![Block::genesis()],
        }
    }

    pub fn head(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn height(&self) -> u64 {
        self.head().height
    }

    pub fn txn_count(&self) -> usize {
        self.blocks.iter().map(|b| b.txns.len()).sum()
    }

    pub fn append(&mut self, block: Block) -> Result<(), LedgerError> {
        let head = self.head();
        if block.height != head.height + 1 || block.prev_hash != head.block_hash {
            return Err(LedgerError::NotExtendingHead {
                height: block.height,
            });
        }
        self.blocks.push(block);
        Ok(())
    }

    pub fn append_txns(&mut self, txns: Vec<LedgerTransaction>, timestamp: u64) -> Result<&Block, LedgerError> {
        let block = build_block(self.head(), txns, timestamp)?;
        self.blocks.push(block);
        Ok(self.head())
    }

    pub fn transactions(&self) -> impl Iterator<Item = &LedgerTransaction> {
        self.blocks.iter().flat_map(|b| b.txns.iter())
    }

    /// One canonical-JSON block per line, in height order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for block in &self.blocks {
            out.push_str(to_canonical(block).expect("blocks are canonicalizable").as_str());
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, LedgerError> {
        let mut blocks = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let block: Block = serde_json::from_str(line).map_err(|e| LedgerError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            blocks.push(block);
        }
        if blocks.is_empty() {
            return Err(LedgerError::Parse {
                line: 0,
                message: "ledger has no blocks".into(),
            });
        }
        Ok(Chain { blocks })
    }

    /// `sha256` of the JSON-lines serialization.
    pub fn digest(&self) -> Digest {
        sha256(self.to_jsonl().as_bytes())
    }
}

/// Reports the lowest offending height, checking height, Merkle root,
/// header hash and back-link in that order.
pub fn validate_chain(chain: &Chain) -> ChainValidity {
    for (i, block) in chain.blocks.iter().enumerate() {
        let invalid = |reason| ChainValidity::Invalid {
            height: i as u64,
            reason,
        };
        if block.height != i as u64 {
            return invalid(InvalidReason::BadHeight);
        }
        if !merkle_ok(block, i == 0) {
            return invalid(InvalidReason::BadMerkle);
        }
        if block.header_hash() != block.block_hash {
            return invalid(InvalidReason::BadHash);
        }
        let expected_prev = if i == 0 {
            Digest::ZERO
        } else {
            chain.blocks[i - 1].block_hash
        };
        if block.prev_hash != expected_prev {
            return invalid(InvalidReason::BadLink);
        }
    }
    ChainValidity::Valid
}

fn merkle_ok(block: &Block, genesis: bool) -> bool {
    if genesis {
        return block.txns.is_empty() && block.merkle_root == Digest::ZERO;
    }
    if !block.txns.iter().all(LedgerTransaction::id_is_consistent) {
        return false;
    }
    matches!(merkle_root(&block.txn_ids()), Ok(root) if root == block.merkle_root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_signing_keypair;
    use proptest::prelude::*;

    fn leaf(s: &str) -> Digest {
        sha256(s.as_bytes())
    }

    fn txn(n: u64) -> LedgerTransaction {
        let key = generate_signing_keypair(&[n as u8; 32]).unwrap();
        LedgerTransaction::new(TxnType::Schema, json!({"n": n}), "did:sample:test", n, &key).unwrap()
    }

    fn chain_of(len: u64) -> Chain {
        let mut c = Chain::new();
        for h in 1..len {
            c.append_txns(vec![txn(h), txn(h + 100)], 1000 + h).unwrap();
        }
        c
    }

    #[test]
    fn merkle_vectors() {
        let (h1, h2, h3) = (leaf("a"), leaf("b"), leaf("c"));
        assert_eq!(merkle_root(&[h1]).unwrap(), h1);
        assert_eq!(merkle_root(&[]).unwrap_err(), LedgerError::EmptyLeaves);
        // Oracle: concatenate raw digests and hash with the reference sha256.
        let cat = |a: &Digest, b: &Digest| {
            let mut v = a.0.to_vec();
            v.extend_from_slice(&b.0);
            sha256(&v)
        };
        assert_eq!(merkle_root(&[h1, h2]).unwrap(), cat(&h1, &h2));
        assert_eq!(
            merkle_root(&[h1, h2, h3]).unwrap(),
            cat(&cat(&h1, &h2), &cat(&h3, &h3))
        );
    }

    // Frozen from: python3 -c "import hashlib;h=lambda b:hashlib.sha256(b).digest();
    // a,b=h(b'a'),h(b'b');print(h(a+b).hex())"
    #[test]
    fn merkle_pair_frozen_value() {
        assert_eq!(
            merkle_root(&[leaf("a"), leaf("b")]).unwrap().to_hex(),
            "e5a01fee14e0ed5c48714f22180f25ad8365b53f9779f79dc4a3d7e93963f94a"
        );
    }

    #[test]
    fn build_block_structure() {
        let g = Block::genesis();
        let b = build_block(&g, vec![txn(1)], 5).unwrap();
        assert_eq!(b.height, 1);
        assert_eq!(b.prev_hash, g.block_hash);
        assert_eq!(build_block(&g, vec![txn(1)], 5).unwrap().block_hash, b.block_hash);
        assert_eq!(build_block(&g, vec![], 5).unwrap_err(), LedgerError::EmptyBlock);

        let mut tampered = b.clone();
        tampered.txns[0].payload = json!({"n": 2});
        let recomputed = tampered.txns[0].compute_id().unwrap();
        assert_ne!(merkle_root(&[recomputed]).unwrap(), b.merkle_root);
    }

    #[test]
    fn validate_chain_cases() {
        let chain = chain_of(5);
        assert_eq!(validate_chain(&chain), ChainValidity::Valid);

        let mut flipped = chain.clone();
        flipped.blocks[2].txns[0].author_did.replace_range(0..1, "e");
        assert_eq!(
            validate_chain(&flipped),
            ChainValidity::Invalid {
                height: 2,
                reason: InvalidReason::BadMerkle
            }
        );

        // A self-consistent replacement of block 2 still breaks block 3's link.
        let mut replaced = chain.clone();
        replaced.blocks[2] = build_block(&replaced.blocks[1], vec![txn(77)], 9).unwrap();
        assert_eq!(
            validate_chain(&replaced),
            ChainValidity::Invalid {
                height: 3,
                reason: InvalidReason::BadLink
            }
        );

        let mut bad_height = chain.clone();
        bad_height.blocks[4].height = 9;
        assert_eq!(
            validate_chain(&bad_height),
            ChainValidity::Invalid {
                height: 4,
                reason: InvalidReason::BadHeight
            }
        );

        let mut bad_hash = chain.clone();
        bad_hash.blocks[1].timestamp += 1;
        assert_eq!(
            validate_chain(&bad_hash),
            ChainValidity::Invalid {
                height: 1,
                reason: InvalidReason::BadHash
            }
        );
    }

    #[test]
    fn inclusion_proofs() {
        let leaves: Vec<Digest> = (0..4).map(|i| leaf(&i.to_string())).collect();
        let root = merkle_root(&leaves).unwrap();
        for i in 0..4 {
            let proof = merkle_proof(&leaves, i).unwrap();
            assert!(verify_inclusion(&leaves[i], &proof, &root));
            assert!(!verify_inclusion(&leaves[i], &proof, &leaf("other")));
        }
        assert!(verify_inclusion(&leaves[0], &[], &leaves[0]));
        assert!(merkle_proof(&leaves, 4).is_err());
    }

    #[test]
    fn jsonl_round_trip_is_byte_identical() {
        let chain = chain_of(4);
        let text = chain.to_jsonl();
        let parsed = Chain::from_jsonl(&text).unwrap();
        assert_eq!(parsed, chain);
        assert_eq!(parsed.to_jsonl(), text);
        assert_eq!(text.lines().count(), 4);
        assert!(Chain::from_jsonl("").is_err());
        assert!(Chain::from_jsonl("{not json").is_err());
    }

    #[test]
    fn append_rejects_foreign_block() {
        let mut chain = chain_of(3);
        let stray = build_block(&Block::genesis(), vec![txn(5)], 1).unwrap();
        assert!(chain.append(stray).is_err());
    }

    proptest! {
        #[test]
        fn inclusion_round_trip(n in 1usize..40, pick in any::<usize>()) {
            let leaves: Vec<Digest> = (0..n).map(|i| leaf(&format!("l{i}"))).collect();
            let root = merkle_root(&leaves).unwrap();
            let i = pick % n;
            prop_assert!(verify_inclusion(&leaves[i], &merkle_proof(&leaves, i).unwrap(), &root));
        }

        #[test]
        fn permuting_leaves_changes_root(n in 2usize..20, a in any::<usize>(), b in any::<usize>()) {
            let leaves: Vec<Digest> = (0..n).map(|i| leaf(&format!("p{i}"))).collect();
            let (i, j) = (a % n, b % n);
            prop_assume!(i != j);
            let mut swapped = leaves.clone();
            swapped.swap(i, j);
            prop_assert_ne!(merkle_root(&leaves).unwrap(), merkle_root(&swapped).unwrap());
        }
    }
}
