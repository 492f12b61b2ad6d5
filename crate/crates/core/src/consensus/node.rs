use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use serde_json::{json, Value};

use crate::crypto::{sha256, verify, Digest, Signature, SigningKeyPair, VerificationKey};
use crate::ledger::{Chain, LedgerTransaction, TxnType};
use crate::state::{DidDocument, NodeState, Rejection};

use super::config::ConsensusConfig;
use super::message::{
    phase_bytes, valid_signers, Batch, BatchBody, InstanceChangeVote, Message, Phase, PreparedProof,
    SwitchProposal, VoteReason,
};
use super::monitor::{BatchSample, MonitorDecision, PerfMonitor};
use super::{InstanceId, NodeId};

/// Upper bound on commit proofs sent in one fetch reply.
const FETCH_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmitError {
    #[error("request signature does not verify")]
    RejectedInvalidSignature,
    #[error("malformed request: {0}")]
    MalformedRequest(String),
}

/// Admission check run before a request enters any pool. DID_REG requests
/// are self-certifying; other authors are checked when already registered
/// and re-checked at execution otherwise.
pub fn precheck(txn: &LedgerTransaction, state: &NodeState) -> Result<(), SubmitError> {
    let key = match txn.txn_type {
        TxnType::DidReg => {
            let doc: DidDocument = txn
                .payload
                .get("document")
                .cloned()
                .and_then(|d| serde_json::from_value(d).ok())
                .ok_or_else(|| SubmitError::MalformedRequest("DID_REG without a document".into()))?;
            Some(doc.verification_key)
        }
        _ => state.resolve_did(&txn.author_did).map(|d| d.verification_key),
    };
    if let Some(key) = key {
        if !txn.verify_signature(&key) {
            return Err(SubmitError::RejectedInvalidSignature);
        }
    }
    if !txn.id_is_consistent() {
        return Err(SubmitError::MalformedRequest("txn_id does not match contents".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum Output {
    /// `to: None` means every other replica.
    Send { to: Option<NodeId>, msg: Rc<Message> },
    Event { event_type: &'static str, detail: Value },
    Committed { epoch: u64, instance: InstanceId, seq: u64, digest: Digest },
    Executed { txn_id: Digest, rejection: Option<Rejection> },
    Violation(String),
}

pub struct NodeSetup {
    pub id: NodeId,
    pub config: ConsensusConfig,
    pub keys: Rc<Vec<VerificationKey>>,
    pub key: SigningKeyPair,
    pub equivocate: bool,
    pub start_time_s: u64,
}

#[derive(Debug, Default)]
struct Slot {
    created: u64,
    last_resent: u64,
    preprepared: Option<Digest>,
    content: BTreeMap<Digest, Batch>,
    prepares: BTreeMap<Digest, BTreeMap<NodeId, Signature>>,
    commits: BTreeMap<Digest, BTreeMap<NodeId, Signature>>,
    sent_prepare: bool,
    sent_commit: bool,
    prepared: Option<Digest>,
    committed: Option<Digest>,
}

#[derive(Debug)]
struct Instance {
    primary: NodeId,
    next_seq: u64,
    pool: BTreeSet<(u64, Digest)>,
    proposed: BTreeSet<Digest>,
    slots: BTreeMap<u64, Slot>,
    next_process: u64,
    request_batches: u64,
    stuck_since: Option<u64>,
    last_fetch: Option<u64>,
}

impl Instance {
    fn new(primary: NodeId) -> Self {
        Self {
            primary,
            next_seq: 1,
            pool: BTreeSet::new(),
            proposed: BTreeSet::new(),
            slots: BTreeMap::new(),
            next_process: 1,
            request_batches: 0,
            stuck_since: None,
            last_fetch: None,
        }
    }
}

pub fn master_of(epoch: u64) -> InstanceId {
    (epoch % 2) as InstanceId
}

/// One replica running both protocol instances.
pub struct Node {
    id: NodeId,
    cfg: ConsensusConfig,
    keys: Rc<Vec<VerificationKey>>,
    key: SigningKeyPair,
    equivocate: bool,
    start_time_s: u64,
    epoch: u64,
    epoch_start: u64,
    inst: [Instance; 2],
    archive: BTreeMap<u64, [Instance; 2]>,
    voted: bool,
    last_vote_sent: u64,
    switch_proposed: bool,
    votes: BTreeMap<NodeId, InstanceChangeVote>,
    verified_votes: BTreeSet<Digest>,
    future: BTreeMap<u64, Vec<(NodeId, Rc<Message>)>>,
    txns: BTreeMap<Digest, LedgerTransaction>,
    seen_at: BTreeMap<Digest, u64>,
    decided: BTreeSet<Digest>,
    backup_committed: BTreeMap<Digest, u64>,
    monitor: PerfMonitor,
    chain: Chain,
    state: NodeState,
    now: u64,
    out: Vec<Output>,
}

impl Node {
    pub fn new(setup: NodeSetup) -> Self {
        let n = setup.config.n;
        Self {
            id: setup.id,
            monitor: PerfMonitor::new(setup.config.window),
            cfg: setup.config,
            keys: setup.keys,
            key: setup.key,
            equivocate: setup.equivocate,
            start_time_s: setup.start_time_s,
            epoch: 0,
            epoch_start: 0,
            inst: fresh_instances(0, n),
            archive: BTreeMap::new(),
            voted: false,
            last_vote_sent: 0,
            switch_proposed: false,
            votes: BTreeMap::new(),
            verified_votes: BTreeSet::new(),
            future: BTreeMap::new(),
            txns: BTreeMap::new(),
            seen_at: BTreeMap::new(),
            decided: BTreeSet::new(),
            backup_committed: BTreeMap::new(),
            chain: Chain::new(),
            state: NodeState::new(),
            now: 0,
            out: Vec::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn state(&self) -> &NodeState {
        &self.state
    }

    /// Requests seen but not yet executed.
    pub fn pending(&self) -> usize {
        self.txns.len()
    }

    pub fn is_decided(&self, txn_id: &Digest) -> bool {
        self.decided.contains(txn_id)
    }

    pub fn master_batches(&self) -> u64 {
        self.inst[self.master()].request_batches
    }

    fn master(&self) -> InstanceId {
        master_of(self.epoch)
    }

    fn backup(&self) -> InstanceId {
        1 - self.master()
    }

    fn quorum(&self) -> usize {
        self.cfg.quorum()
    }

    fn take(&mut self) -> Vec<Output> {
        std::mem::take(&mut self.out)
    }

    fn event(&mut self, event_type: &'static str, detail: Value) {
        self.out.push(Output::Event { event_type, detail });
    }

    fn send(&mut self, to: Option<NodeId>, msg: Message) {
        self.out.push(Output::Send { to, msg: Rc::new(msg) });
    }

    fn slot(&mut self, i: InstanceId, s: u64) -> &mut Slot {
        let now = self.now;
        self.inst[i].slots.entry(s).or_insert_with(|| Slot {
            created: now,
            last_resent: now,
            ..Slot::default()
        })
    }

    /// A request submitted directly by a client. With `relay` the replica
    /// forwards it to its peers.
    pub fn on_client(&mut self, now: u64, txn: LedgerTransaction, relay: bool) -> Vec<Output> {
        self.now = now;
        match precheck(&txn, &self.state) {
            Err(e) => self.event(
                "request_rejected",
                json!({"txn_id": txn.txn_id.to_hex(), "reason": e.to_string()}),
            ),
            Ok(()) => {
                if self.admit(&txn) && relay {
                    self.send(None, Message::Request { txn });
                }
                self.try_propose();
            }
        }
        self.take()
    }

    pub fn on_message(&mut self, now: u64, from: NodeId, msg: &Rc<Message>) -> Vec<Output> {
        self.now = now;
        match msg.epoch() {
            Some(e) if e > self.epoch => self.future.entry(e).or_default().push((from, msg.clone())),
            Some(e) if e < self.epoch => {}
            _ => self.dispatch(from, msg),
        }
        self.take()
    }

    pub fn on_tick(&mut self, now: u64) -> Vec<Output> {
        self.now = now;
        self.try_propose();
        self.detect_stall();
        self.fetch_gaps();
        self.retransmit();
        self.take()
    }

    fn dispatch(&mut self, from: NodeId, msg: &Message) {
        if from >= self.cfg.n {
            return;
        }
        match msg {
            Message::Request { txn } => {
                if precheck(txn, &self.state).is_ok() {
                    self.admit(txn);
                    self.try_propose();
                }
            }
            Message::PrePrepare { instance, seq, batch, .. } => {
                self.on_preprepare(from, *instance, *seq, batch)
            }
            Message::Prepare {
                instance,
                seq,
                digest,
                batch,
                signature,
                ..
            } => self.on_prepare(from, *instance, *seq, *digest, batch, *signature),
            Message::Commit {
                instance,
                seq,
                digest,
                signature,
                ..
            } => {
                if *instance < 2 {
                    self.slot(*instance, *seq)
                        .commits
                        .entry(*digest)
                        .or_default()
                        .insert(from, *signature);
                    self.advance(*instance, *seq);
                }
            }
            Message::Vote(v) => self.on_vote(from, v),
            Message::Fetch {
                epoch,
                instance,
                from_seq,
            } => self.on_fetch(from, *epoch, *instance, *from_seq),
            Message::CommitProof {
                instance,
                seq,
                batch,
                commits,
                ..
            } => self.on_commit_proof(*instance, *seq, batch, commits),
        }
    }

    fn admit(&mut self, txn: &LedgerTransaction) -> bool {
        let id = txn.txn_id;
        if self.decided.contains(&id) || self.txns.contains_key(&id) {
            return false;
        }
        let t = *self.seen_at.entry(id).or_insert(self.now);
        self.txns.insert(id, txn.clone());
        for inst in &mut self.inst {
            if !inst.proposed.contains(&id) {
                inst.pool.insert((t, id));
            }
        }
        true
    }

    fn forget(&mut self, id: &Digest) {
        if let Some(&t) = self.seen_at.get(id) {
            for inst in &mut self.inst {
                inst.pool.remove(&(t, *id));
            }
        }
        self.txns.remove(id);
        self.backup_committed.remove(id);
    }

    fn try_propose(&mut self) {
        for i in 0..2 {
            if self.inst[i].primary != self.id || (i == self.master() && self.voted) {
                continue;
            }
            loop {
                let inst = &self.inst[i];
                let Some(&(oldest, _)) = inst.pool.first() else { break };
                let full = inst.pool.len() >= self.cfg.batch_max;
                if !full && self.now.saturating_sub(oldest) < self.cfg.batch_timeout_ms {
                    break;
                }
                let txns = inst
                    .pool
                    .iter()
                    .take(self.cfg.batch_max)
                    .map(|(_, id)| self.txns[id].clone())
                    .collect();
                self.propose(i, BatchBody::Requests(txns));
            }
        }
    }

    fn propose(&mut self, i: InstanceId, body: BatchBody) {
        let e = self.epoch;
        let seq = self.inst[i].next_seq;
        self.inst[i].next_seq += 1;
        let batch = Batch {
            timestamp_ms: self.now,
            body,
        };
        for t in batch.requests() {
            let key = (self.seen_at[&t.txn_id], t.txn_id);
            self.inst[i].pool.remove(&key);
            self.inst[i].proposed.insert(t.txn_id);
        }
        let d = batch.digest();
        self.event(
            "batch_proposed",
            json!({"epoch": e, "instance": i, "seq": seq, "digest": d.to_hex(), "requests": batch.requests().len()}),
        );
        if self.equivocate && !batch.requests().is_empty() {
            self.equivocate_propose(i, seq, batch);
            return;
        }
        self.send(
            None,
            Message::PrePrepare {
                epoch: e,
                instance: i,
                seq,
                batch: batch.clone(),
            },
        );
        let slot = self.slot(i, seq);
        slot.content.insert(d, batch);
        slot.preprepared = Some(d);
        self.send_prepare(i, seq, d);
        self.advance(i, seq);
    }

    /// Byzantine primary: batch A to one part of the peers, a reordered
    /// batch B to the rest, with matching signed prepares.
    fn equivocate_propose(&mut self, i: InstanceId, seq: u64, a: Batch) {
        let e = self.epoch;
        let mut b = a.clone();
        if let BatchBody::Requests(txns) = &mut b.body {
            txns.reverse();
        }
        b.timestamp_ms += 1;
        let mut peers: Vec<NodeId> = (0..self.cfg.n).filter(|&p| p != self.id).collect();
        let len = peers.len();
        peers.rotate_left(seq as usize % len);
        let (g1, g2) = peers.split_at(len / 2);
        let (g1, g2) = (g1.to_vec(), g2.to_vec());
        self.event(
            "equivocation",
            json!({"epoch": e, "instance": i, "seq": seq, "a": a.digest().to_hex(), "b": b.digest().to_hex()}),
        );
        for (group, batch) in [(g1, &a), (g2, &b)] {
            let d = batch.digest();
            let sig = self.key.sign(&phase_bytes(Phase::Prepare, e, i, seq, &d).0);
            let me = self.id;
            let slot = self.slot(i, seq);
            slot.content.insert(d, batch.clone());
            slot.prepares.entry(d).or_default().insert(me, sig);
            for to in group {
                self.send(
                    Some(to),
                    Message::PrePrepare {
                        epoch: e,
                        instance: i,
                        seq,
                        batch: batch.clone(),
                    },
                );
                self.send(
                    Some(to),
                    Message::Prepare {
                        epoch: e,
                        instance: i,
                        seq,
                        digest: d,
                        batch: batch.clone(),
                        signature: sig,
                    },
                );
            }
        }
        let slot = self.slot(i, seq);
        slot.preprepared = Some(a.digest());
        slot.sent_prepare = true;
    }

    fn frozen(&self, i: InstanceId) -> bool {
        i == self.master() && self.voted
    }

    fn batch_acceptable(&mut self, i: InstanceId, batch: &Batch) -> bool {
        if !batch.well_formed(self.cfg.batch_max) {
            return false;
        }
        match &batch.body {
            BatchBody::Requests(_) => true,
            BatchBody::Switch(p) => i == self.backup() && self.switch_valid(p),
        }
    }

    fn on_preprepare(&mut self, from: NodeId, i: InstanceId, s: u64, batch: &Batch) {
        if i > 1 || from != self.inst[i].primary || s < self.inst[i].next_process {
            return;
        }
        if !self.batch_acceptable(i, batch) {
            self.event("invalid_batch", json!({"epoch": self.epoch, "instance": i, "seq": s}));
            return;
        }
        for t in batch.requests() {
            self.admit(t);
        }
        let d = batch.digest();
        let frozen = self.frozen(i);
        let slot = self.slot(i, s);
        slot.content.entry(d).or_insert_with(|| batch.clone());
        if slot.preprepared.is_some() {
            return;
        }
        slot.preprepared = Some(d);
        if !frozen && !slot.sent_prepare {
            self.send_prepare(i, s, d);
        }
        self.advance(i, s);
    }

    fn on_prepare(&mut self, from: NodeId, i: InstanceId, s: u64, d: Digest, batch: &Batch, sig: Signature) {
        if i > 1 || batch.digest() != d || !batch.well_formed(self.cfg.batch_max) {
            return;
        }
        let slot = self.slot(i, s);
        slot.content.entry(d).or_insert_with(|| batch.clone());
        slot.prepares.entry(d).or_default().insert(from, sig);
        self.advance(i, s);
    }

    fn send_prepare(&mut self, i: InstanceId, s: u64, d: Digest) {
        let e = self.epoch;
        let sig = self.key.sign(&phase_bytes(Phase::Prepare, e, i, s, &d).0);
        let id = self.id;
        let slot = self.slot(i, s);
        slot.sent_prepare = true;
        slot.prepares.entry(d).or_default().insert(id, sig);
        let batch = slot.content[&d].clone();
        self.send(
            None,
            Message::Prepare {
                epoch: e,
                instance: i,
                seq: s,
                digest: d,
                batch,
                signature: sig,
            },
        );
    }

    fn send_commit(&mut self, i: InstanceId, s: u64, d: Digest) {
        let e = self.epoch;
        let sig = self.key.sign(&phase_bytes(Phase::Commit, e, i, s, &d).0);
        let id = self.id;
        let slot = self.slot(i, s);
        slot.sent_commit = true;
        slot.commits.entry(d).or_default().insert(id, sig);
        self.send(
            None,
            Message::Commit {
                epoch: e,
                instance: i,
                seq: s,
                digest: d,
                signature: sig,
            },
        );
    }

    fn advance(&mut self, i: InstanceId, s: u64) {
        let e = self.epoch;
        self.check_prepared(i, s);
        if self.epoch == e {
            self.check_committed(i, s);
        }
    }

    fn check_prepared(&mut self, i: InstanceId, s: u64) {
        let q = self.quorum();
        let frozen = self.frozen(i);
        let slot = self.slot(i, s);
        if slot.prepared.is_some() {
            return;
        }
        let found = slot
            .prepares
            .iter()
            .find(|(d, v)| v.len() >= q && slot.content.contains_key(d))
            .map(|(d, _)| *d);
        if let Some(d) = found {
            slot.prepared = Some(d);
            if !slot.sent_commit && !frozen {
                self.send_commit(i, s, d);
            }
        }
    }

    fn check_committed(&mut self, i: InstanceId, s: u64) {
        let q = self.quorum();
        let slot = self.slot(i, s);
        if slot.committed.is_some() {
            return;
        }
        let found = slot
            .commits
            .iter()
            .find(|(d, v)| v.len() >= q && slot.content.contains_key(d))
            .map(|(d, _)| *d);
        if let Some(d) = found {
            slot.committed = Some(d);
            self.out.push(Output::Committed {
                epoch: self.epoch,
                instance: i,
                seq: s,
                digest: d,
            });
            self.on_committed(i, s, d);
        }
    }

    fn on_committed(&mut self, i: InstanceId, s: u64, d: Digest) {
        let batch = self.inst[i].slots[&s].content[&d].clone();
        if let BatchBody::Requests(txns) = &batch.body {
            let now = self.now;
            let mut earliest = now;
            let mut latency = 0;
            for t in txns {
                let seen = self.seen_at.get(&t.txn_id).copied().unwrap_or(now).max(self.epoch_start);
                earliest = earliest.min(seen);
                latency += now.saturating_sub(seen);
                if i == self.backup() && !self.decided.contains(&t.txn_id) {
                    self.backup_committed.entry(t.txn_id).or_insert(now);
                }
            }
            self.inst[i].request_batches += 1;
            self.monitor.record(
                i,
                BatchSample {
                    commit_ms: now,
                    earliest_seen_ms: earliest,
                    requests: txns.len() as u64,
                    latency_sum_ms: latency,
                },
            );
            self.event(
                "batch_committed",
                json!({"epoch": self.epoch, "instance": i, "seq": s, "digest": d.to_hex(), "requests": txns.len()}),
            );
            let m = self.master();
            if !self.voted {
                if let MonitorDecision::SwitchTo(_) = self.monitor.evaluate(m, self.cfg.delta) {
                    let ms = self.monitor.stats(m).expect("evaluated with full window");
                    let bs = self.monitor.stats(1 - m).expect("evaluated with full window");
                    self.cast_vote(VoteReason::Degraded {
                        master_latency_ms: ms.mean_latency_ms,
                        backup_latency_ms: bs.mean_latency_ms,
                        master_throughput_milli: ms.throughput_milli,
                        backup_throughput_milli: bs.throughput_milli,
                    });
                }
            }
        }
        self.process_in_order(i);
    }

    fn process_in_order(&mut self, i: InstanceId) {
        let e = self.epoch;
        while self.epoch == e {
            let inst = &mut self.inst[i];
            let p = inst.next_process;
            let Some(slot) = inst.slots.get(&p) else { return };
            let Some(d) = slot.committed else { return };
            let batch = slot.content[&d].clone();
            inst.next_process += 1;
            inst.stuck_since = None;
            if i == self.master() {
                self.execute(i, p, &batch);
            } else if let BatchBody::Switch(proposal) = &batch.body {
                self.apply_switch(proposal);
            }
        }
    }

    fn execute(&mut self, i: InstanceId, seq: u64, batch: &Batch) {
        let mut accepted = Vec::new();
        for txn in batch.requests() {
            if self.decided.contains(&txn.txn_id) {
                continue;
            }
            let result = self.state.apply(txn);
            self.decided.insert(txn.txn_id);
            self.forget(&txn.txn_id);
            match &result {
                Ok(()) => accepted.push(txn.clone()),
                Err(r) => self.event(
                    "request_rejected",
                    json!({"txn_id": txn.txn_id.to_hex(), "reason": r.to_string()}),
                ),
            }
            self.out.push(Output::Executed {
                txn_id: txn.txn_id,
                rejection: result.err(),
            });
        }
        if accepted.is_empty() {
            return;
        }
        let ids: Vec<String> = accepted.iter().map(|t| t.txn_id.to_hex()).collect();
        let ts = (self.start_time_s + batch.timestamp_ms / 1000).max(self.chain.head().timestamp);
        let height = self
            .chain
            .append_txns(accepted, ts)
            .expect("non-empty batch builds a block")
            .height;
        self.event(
            "ledger_append",
            json!({
                "instance": i,
                "master_instance": self.master(),
                "epoch": self.epoch,
                "seq": seq,
                "height": height,
                "txns": ids,
            }),
        );
    }

    fn violation(&mut self, what: String) {
        self.event("safety_violation", json!({"detail": what}));
        self.out.push(Output::Violation(what));
    }

    fn apply_switch(&mut self, proposal: &SwitchProposal) {
        if proposal.epoch != self.epoch || !self.switch_valid(proposal) {
            self.event("invalid_switch", json!({"epoch": self.epoch}));
            return;
        }
        let m = self.master();
        let mut carry: BTreeMap<u64, &Batch> = BTreeMap::new();
        for v in &proposal.votes {
            for p in &v.prepared {
                carry.entry(p.seq).or_insert(&p.batch);
            }
        }
        let cut = carry.keys().next_back().copied().unwrap_or(0);
        let from = self.inst[m].next_process;
        let locally: Vec<(u64, Digest)> = self.inst[m]
            .slots
            .iter()
            .filter_map(|(&s, slot)| slot.committed.map(|d| (s, d)))
            .collect();
        for (s, d) in locally {
            match carry.get(&s) {
                Some(b) if b.digest() != d => self.violation(format!("slot {s} carried with a different batch")),
                None => self.violation(format!("committed slot {s} missing from switch")),
                _ => {}
            }
        }
        for s in from..=cut {
            if let Some(b) = carry.get(&s) {
                self.execute(m, s, b);
            }
        }
        if cut >= from {
            self.inst[m].next_process = cut + 1;
        }
        let next = self.epoch + 1;
        self.event(
            "instance_change",
            json!({
                "from_epoch": self.epoch,
                "to_epoch": next,
                "cut": cut,
                "master_batches": self.inst[m].request_batches,
                "new_master_instance": master_of(next),
                "new_primary": (next as usize) % self.cfg.n,
            }),
        );
        self.enter_epoch(next);
    }

    fn enter_epoch(&mut self, e: u64) {
        let old = std::mem::replace(&mut self.inst, fresh_instances(e, self.cfg.n));
        self.archive.insert(self.epoch, old);
        while self.archive.len() > 2 {
            self.archive.pop_first();
        }
        self.epoch = e;
        self.epoch_start = self.now;
        self.voted = false;
        self.switch_proposed = false;
        self.votes.clear();
        self.monitor.reset();
        self.backup_committed.clear();
        let pending: BTreeSet<(u64, Digest)> = self.txns.keys().map(|id| (self.seen_at[id], *id)).collect();
        for inst in &mut self.inst {
            inst.pool = pending.clone();
        }
        self.future = self.future.split_off(&e);
        if let Some(msgs) = self.future.remove(&e) {
            for (from, msg) in msgs {
                if msg.epoch() != Some(self.epoch) {
                    break;
                }
                self.dispatch(from, &msg);
            }
        }
        self.try_propose();
    }

    fn vote_cache_key(v: &InstanceChangeVote) -> Digest {
        let mut buf = v.body_digest().0.to_vec();
        buf.extend_from_slice(&v.signature.0);
        sha256(&buf)
    }

    fn vote_valid(&mut self, v: &InstanceChangeVote) -> bool {
        let cache = Self::vote_cache_key(v);
        if self.verified_votes.contains(&cache) {
            return true;
        }
        let q = self.quorum();
        let ok = v.voter < self.cfg.n
            && verify(&self.keys[v.voter], &v.body_digest().0, &v.signature)
            && v.prepared.iter().all(|p| {
                matches!(p.batch.body, BatchBody::Requests(_))
                    && p.batch.well_formed(self.cfg.batch_max)
                    && valid_signers(
                        &self.keys,
                        Phase::Prepare,
                        v.epoch,
                        master_of(v.epoch),
                        p.seq,
                        &p.batch.digest(),
                        &p.prepares,
                    ) >= q
            });
        if ok {
            self.verified_votes.insert(cache);
        }
        ok
    }

    fn switch_valid(&mut self, p: &SwitchProposal) -> bool {
        let voters: BTreeSet<NodeId> = p.votes.iter().map(|v| v.voter).collect();
        p.epoch == self.epoch
            && voters.len() == p.votes.len()
            && p.votes.len() >= self.quorum()
            && p.votes.iter().all(|v| v.epoch == p.epoch)
            && p.votes.iter().all(|v| self.vote_valid(v))
    }

    fn on_vote(&mut self, from: NodeId, v: &InstanceChangeVote) {
        if v.voter != from || self.votes.contains_key(&from) {
            return;
        }
        if !self.vote_valid(v) {
            self.event("invalid_vote", json!({"from": from, "epoch": v.epoch}));
            return;
        }
        self.votes.insert(from, v.clone());
        self.after_vote();
    }

    fn after_vote(&mut self) {
        let others = self.votes.keys().filter(|&&k| k != self.id).count();
        if !self.voted && others > self.cfg.f {
            self.cast_vote(VoteReason::Joined);
            return;
        }
        let b = self.backup();
        if self.inst[b].primary == self.id && !self.switch_proposed && self.votes.len() >= self.quorum() {
            self.switch_proposed = true;
            let votes = self.votes.values().take(self.quorum()).cloned().collect();
            self.propose(
                b,
                BatchBody::Switch(SwitchProposal {
                    epoch: self.epoch,
                    votes,
                }),
            );
        }
    }

    fn cast_vote(&mut self, reason: VoteReason) {
        let m = self.master();
        let prepared = self.inst[m]
            .slots
            .iter()
            .filter_map(|(&seq, slot)| {
                let d = slot.prepared?;
                Some(PreparedProof {
                    seq,
                    batch: slot.content[&d].clone(),
                    prepares: slot.prepares[&d].iter().map(|(&n, &s)| (n, s)).collect(),
                })
            })
            .collect::<Vec<_>>();
        self.event(
            "instance_change_vote",
            json!({"epoch": self.epoch, "reason": reason, "prepared": prepared.len()}),
        );
        let vote = InstanceChangeVote {
            epoch: self.epoch,
            voter: self.id,
            reason,
            prepared,
            signature: Signature([0; 64]),
        }
        .sign(&self.key);
        self.voted = true;
        self.last_vote_sent = self.now;
        self.verified_votes.insert(Self::vote_cache_key(&vote));
        self.votes.insert(self.id, vote.clone());
        self.send(None, Message::Vote(vote));
        self.after_vote();
    }

    fn detect_stall(&mut self) {
        if self.voted {
            return;
        }
        let limit = self.cfg.stall_timeout_ms;
        if self.backup_committed.values().any(|&t| self.now.saturating_sub(t) >= limit) {
            self.cast_vote(VoteReason::Stalled);
        }
    }

    /// Asks peers for commit proofs when the next slot to process is stuck
    /// while later slots (or a later epoch) show progress.
    fn fetch_gaps(&mut self) {
        let weak = self.cfg.f + 1;
        let waiting_on_epoch = !self.future.is_empty();
        for i in 0..2 {
            let inst = &mut self.inst[i];
            let p = inst.next_process;
            let evidence = waiting_on_epoch
                || inst
                    .slots
                    .range(p..)
                    .any(|(_, s)| s.committed.is_some() || s.commits.values().any(|v| v.len() >= weak));
            if !evidence {
                inst.stuck_since = None;
                continue;
            }
            let since = *inst.stuck_since.get_or_insert(self.now);
            let due = inst
                .last_fetch
                .is_none_or(|t| self.now - t >= self.cfg.fetch_timeout_ms);
            if self.now - since >= self.cfg.fetch_timeout_ms && due {
                inst.last_fetch = Some(self.now);
                let epoch = self.epoch;
                self.event("fetch", json!({"epoch": epoch, "instance": i, "from_seq": p}));
                self.send(
                    None,
                    Message::Fetch {
                        epoch,
                        instance: i,
                        from_seq: p,
                    },
                );
            }
        }
    }

    /// Resends this replica's own messages for slots that have waited too
    /// long, and its vote while the switch is pending. Covers lost messages.
    fn retransmit(&mut self) {
        let wait = self.cfg.fetch_timeout_ms;
        let now = self.now;
        let e = self.epoch;
        if self.voted && now - self.last_vote_sent >= wait {
            self.last_vote_sent = now;
            if let Some(v) = self.votes.get(&self.id).cloned() {
                self.send(None, Message::Vote(v));
            }
        }
        let me = self.id;
        let mut resend = Vec::new();
        for i in 0..2 {
            let inst = &mut self.inst[i];
            let primary = inst.primary == me;
            for (&seq, slot) in inst.slots.range_mut(inst.next_process..).take(FETCH_BATCH) {
                if slot.committed.is_some() || now - slot.created < wait || now - slot.last_resent < wait {
                    continue;
                }
                slot.last_resent = now;
                if let (true, Some(d)) = (primary, slot.preprepared) {
                    resend.push(Message::PrePrepare {
                        epoch: e,
                        instance: i,
                        seq,
                        batch: slot.content[&d].clone(),
                    });
                }
                for (d, sigs) in &slot.prepares {
                    if let Some(&signature) = sigs.get(&me) {
                        resend.push(Message::Prepare {
                            epoch: e,
                            instance: i,
                            seq,
                            digest: *d,
                            batch: slot.content[d].clone(),
                            signature,
                        });
                    }
                }
                for (d, sigs) in &slot.commits {
                    if let Some(&signature) = sigs.get(&me) {
                        resend.push(Message::Commit {
                            epoch: e,
                            instance: i,
                            seq,
                            digest: *d,
                            signature,
                        });
                    }
                }
            }
        }
        for m in resend {
            self.send(None, m);
        }
    }

    fn on_fetch(&mut self, from: NodeId, e: u64, i: InstanceId, from_seq: u64) {
        if i > 1 {
            return;
        }
        let inst = if e == self.epoch {
            &self.inst[i]
        } else if let Some(a) = self.archive.get(&e) {
            &a[i]
        } else {
            return;
        };
        let proofs: Vec<Message> = inst
            .slots
            .range(from_seq..)
            .filter_map(|(&seq, slot)| {
                let d = slot.committed?;
                Some(Message::CommitProof {
                    epoch: e,
                    instance: i,
                    seq,
                    batch: slot.content[&d].clone(),
                    commits: slot.commits[&d].iter().map(|(&n, &s)| (n, s)).collect(),
                })
            })
            .take(FETCH_BATCH)
            .collect();
        for m in proofs {
            self.send(Some(from), m);
        }
    }

    fn on_commit_proof(&mut self, i: InstanceId, s: u64, batch: &Batch, commits: &[(NodeId, Signature)]) {
        if i > 1 || s < self.inst[i].next_process {
            return;
        }
        if self.inst[i].slots.get(&s).is_some_and(|x| x.committed.is_some()) {
            return;
        }
        let d = batch.digest();
        if !batch.well_formed(self.cfg.batch_max)
            || valid_signers(&self.keys, Phase::Commit, self.epoch, i, s, &d, commits) < self.quorum()
        {
            return;
        }
        let slot = self.slot(i, s);
        slot.content.entry(d).or_insert_with(|| batch.clone());
        let set = slot.commits.entry(d).or_default();
        for &(n, sig) in commits {
            set.insert(n, sig);
        }
        self.advance(i, s);
    }
}

fn fresh_instances(epoch: u64, n: usize) -> [Instance; 2] {
    let master = master_of(epoch);
    let mut out = [Instance::new(0), Instance::new(0)];
    out[master].primary = (epoch as usize) % n;
    out[1 - master].primary = (epoch as usize + 1) % n;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{generate_signing_keypair, EncryptionKeyPair};
    use crate::state::txn;

    fn did_txn(i: u8) -> (LedgerTransaction, SigningKeyPair) {
        let key = generate_signing_keypair(&[i; 32]).unwrap();
        let doc = DidDocument {
            verification_key: key.public(),
            agreement_key: EncryptionKeyPair::from_seed(&[i; 32]).unwrap().public(),
            endpoint: "sim://t".into(),
            metadata: json!({}),
        };
        (txn::did_reg(&doc, &key, 1).unwrap(), key)
    }

    #[test]
    fn precheck_classifies() {
        let state = NodeState::new();
        let (good, _) = did_txn(1);
        precheck(&good, &state).unwrap();
        let mut forged = good.clone();
        forged.timestamp = 2;
        assert_eq!(precheck(&forged, &state), Err(SubmitError::RejectedInvalidSignature));
        let mut bad_id = good.clone();
        bad_id.txn_id = Digest::ZERO;
        assert!(matches!(precheck(&bad_id, &state), Err(SubmitError::MalformedRequest(_))));
    }

    #[test]
    fn primaries_rotate_with_epochs() {
        let a = fresh_instances(0, 4);
        assert_eq!((a[0].primary, a[1].primary), (0, 1));
        let b = fresh_instances(1, 4);
        // Epoch 1: instance 1 is master, led by the old backup primary.
        assert_eq!((b[1].primary, b[0].primary), (1, 2));
    }
}
