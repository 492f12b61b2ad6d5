use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::crypto::{sha256, verify, Digest, Signature, SigningKeyPair, VerificationKey};
use crate::ledger::LedgerTransaction;

use super::{InstanceId, NodeId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub timestamp_ms: u64,
    pub body: BatchBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "content", rename_all = "snake_case")]
pub enum BatchBody {
    Requests(Vec<LedgerTransaction>),
    /// Moves execution to the other instance. Ordered through the backup.
    Switch(SwitchProposal),
}

impl Batch {
    pub fn digest(&self) -> Digest {
        let mut h = Sha256::new();
        h.update(self.timestamp_ms.to_be_bytes());
        match &self.body {
            BatchBody::Requests(txns) => {
                h.update(b"requests");
                h.update((txns.len() as u64).to_be_bytes());
                for t in txns {
                    h.update(t.txn_id.0);
                }
            }
            BatchBody::Switch(p) => {
                h.update(b"switch");
                h.update(p.epoch.to_be_bytes());
                for v in &p.votes {
                    h.update(v.body_digest().0);
                    h.update(v.signature.0);
                }
            }
        }
        Digest(h.finalize().into())
    }

    pub fn requests(&self) -> &[LedgerTransaction] {
        match &self.body {
            BatchBody::Requests(t) => t,
            BatchBody::Switch(_) => &[],
        }
    }

    /// Structural checks: size bound, no duplicate ids, ids match contents.
    pub fn well_formed(&self, batch_max: usize) -> bool {
        match &self.body {
            BatchBody::Requests(txns) => {
                let mut ids: Vec<_> = txns.iter().map(|t| t.txn_id).collect();
                ids.sort();
                ids.dedup();
                !txns.is_empty()
                    && txns.len() <= batch_max
                    && ids.len() == txns.len()
                    && txns.iter().all(|t| t.id_is_consistent())
            }
            BatchBody::Switch(p) => !p.votes.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchProposal {
    pub epoch: u64,
    pub votes: Vec<InstanceChangeVote>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum VoteReason {
    Degraded {
        master_latency_ms: u64,
        backup_latency_ms: u64,
        master_throughput_milli: u64,
        backup_throughput_milli: u64,
    },
    Stalled,
    Joined,
}

/// A 2f+1 prepare certificate for one master sequence number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedProof {
    pub seq: u64,
    pub batch: Batch,
    pub prepares: Vec<(NodeId, Signature)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceChangeVote {
    pub epoch: u64,
    pub voter: NodeId,
    pub reason: VoteReason,
    pub prepared: Vec<PreparedProof>,
    pub signature: Signature,
}

impl InstanceChangeVote {
    pub fn body_digest(&self) -> Digest {
        let mut h = Sha256::new();
        h.update(b"instance-change");
        h.update(self.epoch.to_be_bytes());
        h.update((self.voter as u64).to_be_bytes());
        h.update(serde_json::to_vec(&self.reason).expect("reason serializes"));
        for p in &self.prepared {
            h.update(p.seq.to_be_bytes());
            h.update(p.batch.digest().0);
            for (node, sig) in &p.prepares {
                h.update((*node as u64).to_be_bytes());
                h.update(sig.0);
            }
        }
        Digest(h.finalize().into())
    }

    pub fn sign(mut self, key: &SigningKeyPair) -> Self {
        self.signature = key.sign(&self.body_digest().0);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Prepare,
    Commit,
}

/// Bytes signed by a PREPARE or COMMIT for one slot.
pub fn phase_bytes(phase: Phase, epoch: u64, instance: InstanceId, seq: u64, digest: &Digest) -> Digest {
    let tag: &[u8] = match phase {
        Phase::Prepare => b"prepare",
        Phase::Commit => b"commit",
    };
    let mut buf = tag.to_vec();
    buf.extend_from_slice(&epoch.to_be_bytes());
    buf.extend_from_slice(&(instance as u64).to_be_bytes());
    buf.extend_from_slice(&seq.to_be_bytes());
    buf.extend_from_slice(&digest.0);
    sha256(&buf)
}

/// Counts distinct signers in `sigs` whose signature over the slot verifies.
pub fn valid_signers(
    keys: &[VerificationKey],
    phase: Phase,
    epoch: u64,
    instance: InstanceId,
    seq: u64,
    digest: &Digest,
    sigs: &[(NodeId, Signature)],
) -> usize {
    let msg = phase_bytes(phase, epoch, instance, seq, digest);
    let mut seen = std::collections::BTreeSet::new();
    for (node, sig) in sigs {
        if *node < keys.len() && !seen.contains(node) && verify(&keys[*node], &msg.0, sig) {
            seen.insert(*node);
        }
    }
    seen.len()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Request {
        txn: LedgerTransaction,
    },
    PrePrepare {
        epoch: u64,
        instance: InstanceId,
        seq: u64,
        batch: Batch,
    },
    /// Carries the batch so replicas that saw a different or no pre-prepare
    /// still learn the content.
    Prepare {
        epoch: u64,
        instance: InstanceId,
        seq: u64,
        digest: Digest,
        batch: Batch,
        signature: Signature,
    },
    Commit {
        epoch: u64,
        instance: InstanceId,
        seq: u64,
        digest: Digest,
        signature: Signature,
    },
    Vote(InstanceChangeVote),
    Fetch {
        epoch: u64,
        instance: InstanceId,
        from_seq: u64,
    },
    CommitProof {
        epoch: u64,
        instance: InstanceId,
        seq: u64,
        batch: Batch,
        commits: Vec<(NodeId, Signature)>,
    },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Request { .. } => "request",
            Message::PrePrepare { .. } => "pre_prepare",
            Message::Prepare { .. } => "prepare",
            Message::Commit { .. } => "commit",
            Message::Vote(_) => "instance_change_vote",
            Message::Fetch { .. } => "fetch",
            Message::CommitProof { .. } => "commit_proof",
        }
    }

    /// Epoch for messages that only make sense within one epoch.
    pub fn epoch(&self) -> Option<u64> {
        match self {
            Message::PrePrepare { epoch, .. }
            | Message::Prepare { epoch, .. }
            | Message::Commit { epoch, .. }
            | Message::CommitProof { epoch, .. } => Some(*epoch),
            Message::Vote(v) => Some(v.epoch),
            Message::Request { .. } | Message::Fetch { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_signing_keypair;

    #[test]
    fn digest_binds_order_and_time() {
        let a = Batch {
            timestamp_ms: 5,
            body: BatchBody::Requests(vec![]),
        };
        let mut b = a.clone();
        b.timestamp_ms = 6;
        assert_ne!(a.digest(), b.digest());
        assert!(!a.well_formed(10));
    }

    #[test]
    fn signer_counting() {
        let keys: Vec<_> = (0..4u8).map(|i| generate_signing_keypair(&[i; 32]).unwrap()).collect();
        let pubs: Vec<_> = keys.iter().map(|k| k.public()).collect();
        let d = Digest([9; 32]);
        let msg = phase_bytes(Phase::Prepare, 0, 0, 1, &d);
        let mut sigs: Vec<_> = (0..3).map(|i| (i, keys[i].sign(&msg.0))).collect();
        assert_eq!(valid_signers(&pubs, Phase::Prepare, 0, 0, 1, &d, &sigs), 3);
        assert_eq!(valid_signers(&pubs, Phase::Commit, 0, 0, 1, &d, &sigs), 0);
        sigs.push(sigs[0]);
        sigs[1].0 = 3;
        assert_eq!(valid_signers(&pubs, Phase::Prepare, 0, 0, 1, &d, &sigs), 2);
    }
}
