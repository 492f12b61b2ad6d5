use std::collections::VecDeque;

use serde::Serialize;

use super::InstanceId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSample {
    pub commit_ms: u64,
    /// Earliest arrival among the batch's requests.
    pub earliest_seen_ms: u64,
    pub requests: u64,
    pub latency_sum_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InstanceStats {
    pub throughput_milli: u64,
    pub mean_latency_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonitorDecision {
    KeepMaster,
    SwitchTo(InstanceId),
}

/// Sliding window of the last `window` request batches per instance.
#[derive(Debug, Clone)]
pub struct PerfMonitor {
    window: usize,
    samples: [VecDeque<BatchSample>; 2],
}

impl PerfMonitor {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            samples: [VecDeque::new(), VecDeque::new()],
        }
    }

    pub fn record(&mut self, instance: InstanceId, sample: BatchSample) {
        let q = &mut self.samples[instance];
        q.push_back(sample);
        while q.len() > self.window {
            q.pop_front();
        }
    }

    pub fn reset(&mut self) {
        self.samples.iter_mut().for_each(VecDeque::clear);
    }

    /// `None` until the instance has a full window. Throughput is requests
    /// per second (x1000) over the span from the window's earliest arrival
    /// to its last commit.
    pub fn stats(&self, instance: InstanceId) -> Option<InstanceStats> {
        let q = &self.samples[instance];
        if q.len() < self.window {
            return None;
        }
        let requests: u64 = q.iter().map(|s| s.requests).sum();
        let latency: u64 = q.iter().map(|s| s.latency_sum_ms).sum();
        let start = q.iter().map(|s| s.earliest_seen_ms).min()?;
        let end = q.iter().map(|s| s.commit_ms).max()?;
        Some(InstanceStats {
            throughput_milli: requests * 1_000_000 / (end - start).max(1),
            mean_latency_ms: latency / requests.max(1),
        })
    }

    /// Switch if either the backup's throughput or the master's latency is
    /// worse by more than `delta`.
    pub fn evaluate(&self, master: InstanceId, delta: f64) -> MonitorDecision {
        let backup = 1 - master;
        let (Some(m), Some(b)) = (self.stats(master), self.stats(backup)) else {
            return MonitorDecision::KeepMaster;
        };
        let tp_ratio = b.throughput_milli as f64 / m.throughput_milli.max(1) as f64;
        let lat_ratio = m.mean_latency_ms as f64 / b.mean_latency_ms.max(1) as f64;
        if tp_ratio > delta || lat_ratio > delta {
            MonitorDecision::SwitchTo(backup)
        } else {
            MonitorDecision::KeepMaster
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feed(m: &mut PerfMonitor, inst: InstanceId, latency: u64, n: u64) {
        for i in 0..n {
            let t = i * 20;
            m.record(
                inst,
                BatchSample {
                    commit_ms: t + latency,
                    earliest_seen_ms: t,
                    requests: 1,
                    latency_sum_ms: latency,
                },
            );
        }
    }

    #[test]
    fn needs_full_windows() {
        let mut m = PerfMonitor::new(10);
        feed(&mut m, 0, 30, 9);
        feed(&mut m, 1, 300, 10);
        assert_eq!(m.evaluate(0, 2.0), MonitorDecision::KeepMaster);
    }

    #[test]
    fn equal_performance_keeps_master() {
        let mut m = PerfMonitor::new(10);
        feed(&mut m, 0, 30, 10);
        feed(&mut m, 1, 30, 10);
        assert_eq!(m.evaluate(0, 2.0), MonitorDecision::KeepMaster);
        assert_eq!(m.stats(0).unwrap().mean_latency_ms, 30);
    }

    #[test]
    fn slow_master_switches() {
        let mut m = PerfMonitor::new(10);
        feed(&mut m, 0, 130, 10);
        feed(&mut m, 1, 40, 10);
        assert_eq!(m.evaluate(0, 2.0), MonitorDecision::SwitchTo(1));
        // A 1.5x slower master stays.
        let mut m = PerfMonitor::new(10);
        feed(&mut m, 1, 60, 10);
        feed(&mut m, 0, 40, 10);
        assert_eq!(m.evaluate(1, 2.0), MonitorDecision::KeepMaster);
    }

    #[test]
    fn window_slides() {
        let mut m = PerfMonitor::new(3);
        feed(&mut m, 0, 500, 3);
        feed(&mut m, 0, 10, 3);
        assert_eq!(m.stats(0).unwrap().mean_latency_ms, 10);
        m.reset();
        assert!(m.stats(0).is_none());
    }
}
