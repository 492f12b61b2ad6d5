use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::SimConfig;
use super::NodeId;

/// Deterministic event queue plus link model. Events at equal times pop in
/// insertion order.
#[derive(Debug)]
pub struct SimNetwork<E> {
    rng: ChaCha8Rng,
    queue: BTreeMap<(u64, u64), E>,
    counter: u64,
    slow: Vec<f64>,
    cfg: crate::consensus::config::NetworkConfig,
    pub sent: u64,
    pub dropped_random: u64,
    pub dropped_partition: u64,
}

pub enum LinkOutcome {
    Deliver(u64),
    Dropped,
}

impl<E> SimNetwork<E> {
    pub fn new(cfg: &SimConfig, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: BTreeMap::new(),
            counter: 0,
            slow: (0..cfg.consensus.n).map(|i| cfg.slow_factor(i)).collect(),
            cfg: cfg.network.clone(),
            sent: 0,
            dropped_random: 0,
            dropped_partition: 0,
        }
    }

    pub fn schedule(&mut self, at: u64, event: E) {
        self.queue.insert((at, self.counter), event);
        self.counter += 1;
    }

    pub fn pop(&mut self) -> Option<(u64, E)> {
        self.queue.pop_first().map(|((t, _), e)| (t, e))
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.queue.keys().next().map(|(t, _)| *t)
    }

    pub fn sample_latency(&mut self) -> u64 {
        self.rng.gen_range(self.cfg.latency_min_ms..=self.cfg.latency_max_ms)
    }

    /// Decides the fate of one node-to-node message sent at `now`.
    pub fn route(&mut self, from: NodeId, to: NodeId, now: u64) -> LinkOutcome {
        self.sent += 1;
        if self.cfg.partitions.iter().any(|p| p.separates(from, to, now)) {
            self.dropped_partition += 1;
            return LinkOutcome::Dropped;
        }
        if self.cfg.drop_probability > 0.0 && self.rng.gen_bool(self.cfg.drop_probability) {
            self.dropped_random += 1;
            return LinkOutcome::Dropped;
        }
        let base = self.sample_latency();
        let lat = (base as f64 * self.slow[from]).round() as u64;
        LinkOutcome::Deliver(now + lat.max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::config::{Fault, FaultKind, Partition};

    #[test]
    fn fifo_at_equal_times() {
        let mut net: SimNetwork<u32> = SimNetwork::new(&SimConfig::default(), 1);
        net.schedule(5, 1);
        net.schedule(3, 2);
        net.schedule(5, 3);
        let order: Vec<_> = std::iter::from_fn(|| net.pop()).collect();
        assert_eq!(order, [(3, 2), (5, 1), (5, 3)]);
    }

    #[test]
    fn deterministic_and_slowed() {
        let mut cfg = SimConfig::default();
        cfg.faults.push(Fault {
            node: 0,
            kind: FaultKind::Slow { factor: 10.0 },
        });
        let run = |cfg: &SimConfig| {
            let mut net: SimNetwork<()> = SimNetwork::new(cfg, 42);
            (0..50)
                .map(|i| match net.route(i % 4, (i + 1) % 4, 0) {
                    LinkOutcome::Deliver(t) => t,
                    LinkOutcome::Dropped => u64::MAX,
                })
                .collect::<Vec<_>>()
        };
        let a = run(&cfg);
        assert_eq!(a, run(&cfg));
        for (i, t) in a.iter().enumerate() {
            if i % 4 == 0 {
                assert!((50..=150).contains(t));
            } else {
                assert!((5..=15).contains(t));
            }
        }
    }

    #[test]
    fn partitions_and_drops_counted() {
        let mut cfg = SimConfig::default();
        cfg.network.partitions.push(Partition {
            start_ms: 0,
            end_ms: 100,
            groups: vec![vec![0]],
        });
        cfg.network.drop_probability = 0.5;
        let mut net: SimNetwork<()> = SimNetwork::new(&cfg, 7);
        assert!(matches!(net.route(0, 1, 10), LinkOutcome::Dropped));
        assert_eq!(net.dropped_partition, 1);
        for _ in 0..100 {
            net.route(1, 2, 10);
        }
        assert!(net.dropped_random > 20 && net.dropped_random < 80);
    }
}
