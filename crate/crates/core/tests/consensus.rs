use std::collections::BTreeSet;

use proptest::prelude::*;
use ssi_core::consensus::*;
use ssi_core::flow::{LedgerAccess, PublishError};
use serde_json::json;
use ssi_core::crypto::{generate_signing_keypair, EncryptionKeyPair};
use ssi_core::state::{txn, DidDocument, Rejection};

fn cfg_with(faults: Vec<Fault>) -> SimConfig {
    SimConfig {
        faults,
        duration_ms: 20_000,
        ..SimConfig::default()
    }
}

fn run(cfg: &SimConfig, seed: u64, count: usize) -> Simulation {
    let wl = did_workload(count, 10, seed, cfg.start_time_s);
    run_simulation(cfg, seed, &wl).unwrap()
}

fn live_digests(r: &SimReport) -> BTreeSet<String> {
    r.live_honest().map(|n| n.chain_digest.to_hex()).collect()
}

#[test]
fn happy_path_chains_identical() {
    let sim = run(&SimConfig::default(), 1, 40);
    let r = sim.report();
    assert_eq!(r.decided, 40);
    assert_eq!(r.safety_violations, 0);
    let jsonl: BTreeSet<String> = sim.nodes().iter().map(|n| n.chain().to_jsonl()).collect();
    assert_eq!(jsonl.len(), 1);
    assert!(r.nodes.iter().all(|n| n.txn_count == 40));
    assert!(r.instance_changes.is_empty());
}

#[test]
fn zero_workload_stays_at_genesis() {
    let sim = run(&SimConfig::default(), 3, 0);
    let r = sim.report();
    assert!(r.nodes.iter().all(|n| n.height == 0));
    assert_eq!(r.decided, 0);
    assert_eq!(r.messages_sent, 0);
}

#[test]
fn hundred_requests_within_liveness_bound() {
    let cfg = SimConfig::default();
    let sim = run(&cfg, 5, 100);
    let r = sim.report();
    assert_eq!(r.decided, 100);
    let mean_link = (cfg.network.latency_min_ms + cfg.network.latency_max_ms) / 2;
    assert!(r.commit_latency.max_ms <= 50 * mean_link * cfg.consensus.n as u64);
    assert!(r.throughput_milli_tps > 0);
}

#[test]
fn deterministic_under_seed() {
    let cfg = cfg_with(vec![Fault {
        node: 2,
        kind: FaultKind::Slow { factor: 3.0 },
    }]);
    let a = run(&cfg, 9, 30);
    let b = run(&cfg, 9, 30);
    assert_eq!(a.report().to_json(), b.report().to_json());
    assert_eq!(a.events_jsonl(), b.events_jsonl());
    let c = run(&cfg, 10, 30);
    assert_ne!(a.events_jsonl(), c.events_jsonl());
}

#[test]
fn only_master_appends() {
    let cfg = cfg_with(vec![Fault {
        node: 0,
        kind: FaultKind::Slow { factor: 10.0 },
    }]);
    let sim = run(&cfg, 4, 80);
    let appends: Vec<_> = sim.events().iter().filter(|e| e.event_type == "ledger_append").collect();
    assert!(!appends.is_empty());
    for e in appends {
        assert_eq!(e.detail["instance"], e.detail["master_instance"]);
    }
}

#[test]
fn duplicate_submissions_execute_once() {
    let cfg = SimConfig::default();
    let mut wl = did_workload(10, 10, 2, cfg.start_time_s);
    let mut dup = wl[3].clone();
    dup.time_ms = 7;
    dup.to = Some(2);
    wl.push(dup);
    let sim = run_simulation(&cfg, 2, &wl).unwrap();
    for n in sim.nodes() {
        assert_eq!(n.chain().txn_count(), 10);
        let ids: BTreeSet<_> = n.chain().transactions().map(|t| t.txn_id).collect();
        assert_eq!(ids.len(), 10);
    }
}

#[test]
fn relayed_requests_reach_everyone() {
    let cfg = SimConfig::default();
    let mut wl = did_workload(12, 10, 6, cfg.start_time_s);
    for (i, item) in wl.iter_mut().enumerate() {
        item.to = Some(i % 4);
    }
    let r = run_simulation(&cfg, 6, &wl).unwrap().report();
    assert_eq!(r.decided, 12);
    assert_eq!(live_digests(&r).len(), 1);
}

#[test]
fn master_primary_crash_triggers_change() {
    let cfg = cfg_with(vec![Fault {
        node: 0,
        kind: FaultKind::Crash { at_ms: 100 },
    }]);
    let r = run(&cfg, 1, 40).report();
    assert_eq!(r.decided, 40);
    assert_eq!(r.instance_changes.len(), 1);
    assert_eq!(r.safety_violations, 0);
    assert_eq!(live_digests(&r).len(), 1);
}

#[test]
fn two_crashes_halt_without_forks() {
    let cfg = SimConfig {
        duration_ms: 3_000,
        ..cfg_with(vec![
            Fault {
                node: 1,
                kind: FaultKind::Crash { at_ms: 0 },
            },
            Fault {
                node: 3,
                kind: FaultKind::Crash { at_ms: 0 },
            },
        ])
    };
    let r = run(&cfg, 1, 10).report();
    assert_eq!(r.decided, 0);
    assert!(r.nodes.iter().all(|n| n.height == 0));
    assert_eq!(r.safety_violations, 0);
}

#[test]
fn slow_master_is_replaced_once() {
    let cfg = cfg_with(vec![Fault {
        node: 0,
        kind: FaultKind::Slow { factor: 10.0 },
    }]);
    for seed in 1..=3 {
        let r = run(&cfg, seed, 80).report();
        assert_eq!(r.instance_changes.len(), 1, "seed {seed}");
        let change = &r.instance_changes[0];
        assert!(change.master_batches <= 2 * cfg.consensus.window as u64);
        assert_eq!(change.nodes.len(), 4);
        assert!(r.nodes.iter().all(|n| n.epoch == 1));
        assert_eq!(live_digests(&r).len(), 1);
    }
}

#[test]
fn mildly_slow_master_is_kept() {
    let cfg = cfg_with(vec![Fault {
        node: 0,
        kind: FaultKind::Slow { factor: 1.5 },
    }]);
    for seed in 1..=3 {
        let r = run(&cfg, seed, 80).report();
        assert!(r.instance_changes.is_empty(), "seed {seed}");
        assert_eq!(r.instance_change_votes, 0);
    }
}

#[test]
fn equivocating_primary_is_safe() {
    for node in [0, 1] {
        let cfg = cfg_with(vec![Fault {
            node,
            kind: FaultKind::Equivocate,
        }]);
        let sim = run(&cfg, 8, 40);
        let r = sim.report();
        assert!(sim.events().iter().any(|e| e.event_type == "equivocation"));
        assert_eq!(r.safety_violations, 0);
        assert_eq!(r.decided, 40);
        assert_eq!(live_digests(&r).len(), 1);
    }
}

#[test]
fn lossy_links_recover_through_fetch() {
    let mut cfg = SimConfig::default();
    cfg.network.drop_probability = 0.1;
    let r = run(&cfg, 12, 40).report();
    assert!(r.dropped_random > 0);
    assert_eq!(r.safety_violations, 0);
    assert_eq!(r.decided, 40);
    assert_eq!(live_digests(&r).len(), 1);
}

#[test]
fn partition_heals() {
    let mut cfg = SimConfig::default();
    cfg.network.partitions.push(Partition {
        start_ms: 50,
        end_ms: 400,
        groups: vec![vec![3]],
    });
    let r = run(&cfg, 13, 40).report();
    assert!(r.dropped_partition > 0);
    assert_eq!(r.decided, 40);
    assert_eq!(live_digests(&r).len(), 1);
    assert!(r.nodes.iter().all(|n| n.txn_count == 40));
}

#[test]
fn forged_requests_rejected_before_ordering() {
    let cfg = SimConfig::default();
    let mut wl = did_workload(3, 10, 1, cfg.start_time_s);
    wl[1].txn.timestamp += 1;
    let r = run_simulation(&cfg, 1, &wl).unwrap().report();
    assert_eq!(r.rejected_requests, 1);
    assert_eq!(r.decided, 2);
}

#[test]
fn cluster_publishes_and_surfaces_rejections() {
    let mut cluster = Cluster::new(SimConfig::default(), 1).unwrap();
    let key = generate_signing_keypair(&[4; 32]).unwrap();
    let doc = DidDocument {
        verification_key: key.public(),
        agreement_key: EncryptionKeyPair::from_seed(&[5; 32]).unwrap().public(),
        endpoint: "sim://c".into(),
        metadata: json!({}),
    };
    let first = txn::did_reg(&doc, &key, cluster.now()).unwrap();
    cluster.publish(first.clone()).unwrap();
    assert!(cluster.view().resolve_did(&doc.did()).is_some());
    // Resubmitting the same transaction is a no-op.
    cluster.publish(first).unwrap();
    let again = txn::did_reg(&doc, &key, cluster.now() + 1).unwrap();
    assert_eq!(cluster.publish(again), Err(PublishError::Rejected(Rejection::DuplicateDid)));
    let mut forged = txn::did_reg(&doc, &key, cluster.now() + 2).unwrap();
    forged.payload["document"]["endpoint"] = "sim://evil".into();
    assert_eq!(cluster.publish(forged), Err(PublishError::Rejected(Rejection::BadSignature)));
    assert!(cluster.chains().iter().all(|c| c.txn_count() == 1));
}

#[test]
fn config_errors_surface() {
    let mut cfg = SimConfig::default();
    cfg.consensus.n = 5;
    assert!(Simulation::new(cfg, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn no_conflicting_commits(seed in 0u64..1_000, node in 0usize..4, kind in 0u8..4, drop in 0u8..2) {
        let fault = match kind {
            0 => vec![],
            1 => vec![Fault { node, kind: FaultKind::Crash { at_ms: seed % 300 } }],
            2 => vec![Fault { node, kind: FaultKind::Equivocate }],
            _ => vec![Fault { node, kind: FaultKind::Slow { factor: 10.0 } }],
        };
        let mut cfg = cfg_with(fault);
        cfg.network.drop_probability = f64::from(drop) * 0.05;
        let r = run(&cfg, seed, 30).report();
        prop_assert_eq!(r.safety_violations, 0);
        prop_assert_eq!(live_digests(&r).len(), 1);
        prop_assert_eq!(r.decided, 30);
    }
}
