use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::canonical::to_canonical;
use crate::crypto::{generate_signing_keypair, sha256, Digest, SigningKeyPair};
use crate::ledger::LedgerTransaction;
use crate::state::Rejection;

use super::config::{ConfigError, SimConfig};
use super::message::Message;
use super::network::{LinkOutcome, SimNetwork};
use super::node::{precheck, Node, NodeSetup, Output, SubmitError};
use super::workload::WorkloadItem;
use super::{InstanceId, NodeId};

/// Deterministic per-replica signing key.
pub fn node_signing_key(seed: u64, node: NodeId) -> SigningKeyPair {
    let mut material = b"ssi/node".to_vec();
    material.extend_from_slice(&seed.to_be_bytes());
    material.extend_from_slice(&(node as u64).to_be_bytes());
    generate_signing_keypair(&sha256(&material).0).expect("32-byte seed")
}

enum SimEvent {
    Submit(WorkloadItem),
    Client { to: NodeId, txn: LedgerTransaction, relay: bool },
    Deliver { to: NodeId, from: NodeId, msg: Rc<Message> },
    Tick(NodeId),
    Crash(NodeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time_ms: u64,
    /// `None` for events raised by the harness itself.
    pub node: Option<NodeId>,
    pub event_type: String,
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node: NodeId,
    pub honest: bool,
    pub crashed: bool,
    pub epoch: u64,
    pub chain_digest: Digest,
    pub height: u64,
    pub txn_count: u64,
    pub state_digest: Digest,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub samples: u64,
    pub mean_ms: u64,
    pub p50_ms: u64,
    pub p95_ms: u64,
    pub max_ms: u64,
}

impl LatencySummary {
    fn from_samples(mut v: Vec<u64>) -> Self {
        if v.is_empty() {
            return Self::default();
        }
        v.sort_unstable();
        let pick = |p: usize| v[((v.len() - 1) * p) / 100];
        Self {
            samples: v.len() as u64,
            mean_ms: v.iter().sum::<u64>() / v.len() as u64,
            p50_ms: pick(50),
            p95_ms: pick(95),
            max_ms: *v.last().expect("non-empty"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceChangeRecord {
    pub to_epoch: u64,
    pub first_at_ms: u64,
    pub nodes: Vec<NodeId>,
    /// Most master batches any replica committed in the closing epoch.
    pub master_batches: u64,
    pub cut: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub n: usize,
    pub f: usize,
    pub end_time_ms: u64,
    pub submitted: u64,
    pub decided: u64,
    pub rejected_requests: u64,
    pub nodes: Vec<NodeReport>,
    pub commit_latency: LatencySummary,
    pub throughput_milli_tps: u64,
    pub instance_changes: Vec<InstanceChangeRecord>,
    pub instance_change_votes: u64,
    pub messages_sent: u64,
    pub dropped_random: u64,
    pub dropped_partition: u64,
    pub safety_violations: u64,
    /// All live honest replicas ended with the same chain.
    pub honest_chains_agree: bool,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        to_canonical(self).expect("report serializes").as_str().to_owned()
    }

    pub fn live_honest(&self) -> impl Iterator<Item = &NodeReport> {
        self.nodes.iter().filter(|n| n.honest && !n.crashed)
    }
}

pub struct Simulation {
    cfg: SimConfig,
    seed: u64,
    nodes: Vec<Node>,
    crashed: Vec<bool>,
    net: SimNetwork<SimEvent>,
    now: u64,
    /// Queued submissions, client sends and deliveries.
    in_flight: usize,
    events: Vec<EventRecord>,
    submitted: BTreeMap<Digest, u64>,
    first_exec: BTreeMap<Digest, u64>,
    rejections: BTreeMap<Digest, Rejection>,
    rejected_requests: u64,
    committed: BTreeMap<(u64, InstanceId, u64), Digest>,
    violations: u64,
    switches: BTreeMap<u64, InstanceChangeRecord>,
    votes: u64,
}

impl Simulation {
    pub fn new(cfg: SimConfig, seed: u64) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let n = cfg.consensus.n;
        let keys: Vec<_> = (0..n).map(|i| node_signing_key(seed, i)).collect();
        let public = Rc::new(keys.iter().map(|k| k.public()).collect::<Vec<_>>());
        let nodes = keys
            .into_iter()
            .enumerate()
            .map(|(id, key)| {
                Node::new(NodeSetup {
                    id,
                    config: cfg.consensus.clone(),
                    keys: public.clone(),
                    key,
                    equivocate: cfg.equivocates(id),
                    start_time_s: cfg.start_time_s,
                })
            })
            .collect();
        let mut net = SimNetwork::new(&cfg, seed);
        for i in 0..n {
            net.schedule(cfg.consensus.tick_ms, SimEvent::Tick(i));
            if let Some(at) = cfg.crash_time(i) {
                net.schedule(at, SimEvent::Crash(i));
            }
        }
        Ok(Self {
            seed,
            nodes,
            crashed: vec![false; n],
            net,
            now: 0,
            in_flight: 0,
            events: Vec::new(),
            submitted: BTreeMap::new(),
            first_exec: BTreeMap::new(),
            rejections: BTreeMap::new(),
            rejected_requests: 0,
            committed: BTreeMap::new(),
            violations: 0,
            switches: BTreeMap::new(),
            votes: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn is_live(&self, node: NodeId) -> bool {
        !self.crashed[node]
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn events_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| format!("{}\n", to_canonical(e).expect("event serializes").as_str()))
            .collect()
    }

    pub fn rejection(&self, txn_id: &Digest) -> Option<&Rejection> {
        self.rejections.get(txn_id)
    }

    /// First replica that follows the protocol and has not crashed.
    pub fn observer(&self) -> NodeId {
        (0..self.nodes.len())
            .find(|&i| !self.crashed[i] && !self.cfg.equivocates(i))
            .unwrap_or(0)
    }

    /// True once every live, non-equivocating replica has executed `txn_id`.
    pub fn decided_everywhere(&self, txn_id: &Digest) -> bool {
        (0..self.nodes.len())
            .filter(|&i| !self.crashed[i] && !self.cfg.equivocates(i))
            .all(|i| self.nodes[i].is_decided(txn_id))
    }

    pub fn schedule_submit(&mut self, item: WorkloadItem) {
        self.in_flight += 1;
        self.net.schedule(item.time_ms.max(self.now), SimEvent::Submit(item));
    }

    /// Prechecks and sends a request now.
    pub fn submit_now(&mut self, txn: LedgerTransaction, to: Option<NodeId>) -> Result<(), SubmitError> {
        self.submit(WorkloadItem {
            time_ms: self.now,
            to,
            txn,
        })
    }

    fn submit(&mut self, item: WorkloadItem) -> Result<(), SubmitError> {
        let target = item.to.filter(|&t| t < self.nodes.len()).unwrap_or_else(|| self.observer());
        if let Err(e) = precheck(&item.txn, self.nodes[target].state()) {
            self.rejected_requests += 1;
            self.log(
                None,
                "request_rejected",
                json!({"txn_id": item.txn.txn_id.to_hex(), "reason": e.to_string()}),
            );
            return Err(e);
        }
        self.submitted.entry(item.txn.txn_id).or_insert(self.now);
        let targets: Vec<(NodeId, bool)> = match item.to {
            Some(t) => vec![(t, true)],
            None => (0..self.nodes.len()).map(|i| (i, false)).collect(),
        };
        for (to, relay) in targets {
            let at = self.now + self.net.sample_latency().max(1);
            self.in_flight += 1;
            self.net.schedule(
                at,
                SimEvent::Client {
                    to,
                    txn: item.txn.clone(),
                    relay,
                },
            );
        }
        Ok(())
    }

    fn log(&mut self, node: Option<NodeId>, event_type: &str, detail: Value) {
        self.events.push(EventRecord {
            time_ms: self.now,
            node,
            event_type: event_type.to_owned(),
            detail,
        });
    }

    /// Processes one event. False when the queue is empty.
    pub fn step(&mut self) -> bool {
        let Some((t, ev)) = self.net.pop() else { return false };
        self.now = t;
        match ev {
            SimEvent::Submit(item) => {
                self.in_flight -= 1;
                let _ = self.submit(item);
            }
            SimEvent::Client { to, txn, relay } => {
                self.in_flight -= 1;
                if !self.crashed[to] {
                    let out = self.nodes[to].on_client(t, txn, relay);
                    self.absorb(to, out);
                }
            }
            SimEvent::Deliver { to, from, msg } => {
                self.in_flight -= 1;
                if !self.crashed[to] {
                    let out = self.nodes[to].on_message(t, from, &msg);
                    self.absorb(to, out);
                }
            }
            SimEvent::Tick(i) => {
                if !self.crashed[i] {
                    let out = self.nodes[i].on_tick(t);
                    self.absorb(i, out);
                    self.net.schedule(t + self.cfg.consensus.tick_ms, SimEvent::Tick(i));
                }
            }
            SimEvent::Crash(i) => {
                self.crashed[i] = true;
                self.log(Some(i), "crash", json!({}));
            }
        }
        true
    }

    fn absorb(&mut self, node: NodeId, out: Vec<Output>) {
        let honest = !self.cfg.equivocates(node);
        for o in out {
            match o {
                Output::Send { to, msg } => {
                    let targets: Vec<NodeId> = match to {
                        Some(t) => vec![t],
                        None => (0..self.nodes.len()).filter(|&j| j != node).collect(),
                    };
                    for j in targets {
                        if let LinkOutcome::Deliver(at) = self.net.route(node, j, self.now) {
                            self.in_flight += 1;
                            self.net.schedule(
                                at,
                                SimEvent::Deliver {
                                    to: j,
                                    from: node,
                                    msg: msg.clone(),
                                },
                            );
                        }
                    }
                }
                Output::Event { event_type, detail } => {
                    match event_type {
                        "instance_change_vote" => self.votes += 1,
                        "instance_change" => self.record_switch(node, &detail),
                        _ => {}
                    }
                    self.log(Some(node), event_type, detail);
                }
                Output::Committed {
                    epoch,
                    instance,
                    seq,
                    digest,
                } => {
                    if honest {
                        let prev = *self.committed.entry((epoch, instance, seq)).or_insert(digest);
                        if prev != digest {
                            self.violations += 1;
                            self.log(
                                Some(node),
                                "safety_violation",
                                json!({"epoch": epoch, "instance": instance, "seq": seq}),
                            );
                        }
                    }
                }
                Output::Executed { txn_id, rejection } => {
                    if honest {
                        self.first_exec.entry(txn_id).or_insert(self.now);
                        if let Some(r) = rejection {
                            self.rejections.entry(txn_id).or_insert(r);
                        }
                    }
                }
                Output::Violation(_) => {
                    if honest {
                        self.violations += 1;
                    }
                }
            }
        }
    }

    fn record_switch(&mut self, node: NodeId, detail: &Value) {
        let field = |k: &str| detail.get(k).and_then(Value::as_u64).unwrap_or(0);
        let rec = self.switches.entry(field("to_epoch")).or_insert(InstanceChangeRecord {
            to_epoch: field("to_epoch"),
            first_at_ms: self.now,
            nodes: Vec::new(),
            master_batches: 0,
            cut: field("cut"),
        });
        rec.nodes.push(node);
        rec.master_batches = rec.master_batches.max(field("master_batches"));
    }

    fn quiescent(&self) -> bool {
        self.in_flight == 0 && (0..self.nodes.len()).all(|i| self.crashed[i] || self.nodes[i].pending() == 0)
    }

    /// Runs until `duration_ms` or until nothing is left to do.
    pub fn run(&mut self) {
        let end = self.cfg.duration_ms;
        while !self.quiescent() && self.net.peek_time().is_some_and(|t| t <= end) {
            self.step();
        }
    }

    /// Runs until `done` holds or simulated time passes `deadline_ms`.
    pub fn run_until(&mut self, deadline_ms: u64, done: impl Fn(&Self) -> bool) -> bool {
        loop {
            if done(self) {
                return true;
            }
            if !self.net.peek_time().is_some_and(|t| t <= deadline_ms) {
                return false;
            }
            self.step();
        }
    }

    /// Pairs of honest replicas whose chains are not prefixes of each other.
    fn fork_count(&self) -> u64 {
        let chains: Vec<_> = (0..self.nodes.len())
            .filter(|&i| !self.cfg.equivocates(i))
            .map(|i| &self.nodes[i].chain().blocks)
            .collect();
        let mut forks = 0;
        for (a, x) in chains.iter().enumerate() {
            for y in &chains[a + 1..] {
                if x.iter().zip(y.iter()).any(|(p, q)| p.block_hash != q.block_hash) {
                    forks += 1;
                }
            }
        }
        forks
    }

    pub fn report(&self) -> SimReport {
        let nodes: Vec<NodeReport> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| NodeReport {
                node: i,
                honest: !self.cfg.equivocates(i),
                crashed: self.crashed[i],
                epoch: n.epoch(),
                chain_digest: n.chain().digest(),
                height: n.chain().height(),
                txn_count: n.chain().txn_count() as u64,
                state_digest: n.state().digest(),
            })
            .collect();
        let live: BTreeSet<Digest> = nodes
            .iter()
            .filter(|r| r.honest && !r.crashed)
            .map(|r| r.chain_digest)
            .collect();
        let latencies: Vec<u64> = self
            .first_exec
            .iter()
            .filter_map(|(id, &t)| self.submitted.get(id).map(|&s| t.saturating_sub(s)))
            .collect();
        let throughput = match (self.submitted.values().min(), self.first_exec.values().max()) {
            (Some(&a), Some(&b)) if b > a => self.first_exec.len() as u64 * 1_000_000 / (b - a),
            _ => 0,
        };
        SimReport {
            seed: self.seed,
            n: self.cfg.consensus.n,
            f: self.cfg.consensus.f,
            end_time_ms: self.now,
            submitted: self.submitted.len() as u64,
            decided: self.first_exec.len() as u64,
            rejected_requests: self.rejected_requests,
            nodes,
            commit_latency: LatencySummary::from_samples(latencies),
            throughput_milli_tps: throughput,
            instance_changes: self.switches.values().cloned().collect(),
            instance_change_votes: self.votes,
            messages_sent: self.net.sent,
            dropped_random: self.net.dropped_random,
            dropped_partition: self.net.dropped_partition,
            safety_violations: self.violations + self.fork_count(),
            honest_chains_agree: live.len() <= 1,
        }
    }
}

/// Builds a simulation, feeds it the workload and runs it to completion.
pub fn run_simulation(cfg: &SimConfig, seed: u64, workload: &[WorkloadItem]) -> Result<Simulation, ConfigError> {
    let mut sim = Simulation::new(cfg.clone(), seed)?;
    for item in workload {
        sim.schedule_submit(item.clone());
    }
    sim.run();
    Ok(sim)
}
