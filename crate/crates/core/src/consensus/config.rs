use serde::{Deserialize, Serialize};

use super::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsensusConfig {
    pub n: usize,
    pub f: usize,
    /// Monitor window in batches.
    pub window: usize,
    /// Degradation ratio that triggers an instance change.
    pub delta: f64,
    pub batch_max: usize,
    pub batch_timeout_ms: u64,
    /// A request the backup has committed but the master has not executed
    /// for this long counts as a master stall.
    pub stall_timeout_ms: u64,
    /// How long a replica waits on a sequence gap before fetching proofs.
    pub fetch_timeout_ms: u64,
    pub tick_ms: u64,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            n: 4,
            f: 1,
            window: 10,
            delta: 2.0,
            batch_max: 10,
            batch_timeout_ms: 20,
            stall_timeout_ms: 500,
            fetch_timeout_ms: 60,
            tick_ms: 5,
        }
    }
}

impl ConsensusConfig {
    pub fn quorum(&self) -> usize {
        2 * self.f + 1
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        if self.f < 1 {
            return err("f must be at least 1".into());
        }
        if self.n != 3 * self.f + 1 {
            return err(format!("n = {} but 3f+1 = {}", self.n, 3 * self.f + 1));
        }
        if !self.delta.is_finite() || self.delta <= 1.0 {
            return err("delta must be a finite ratio above 1".into());
        }
        if self.batch_max < 1 || self.window < 1 {
            return err("batch_max and window must be at least 1".into());
        }
        if self.tick_ms == 0 {
            return err("tick_ms must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub start_ms: u64,
    pub end_ms: u64,
    /// Nodes in different groups cannot reach each other. Unlisted nodes
    /// form one extra group.
    pub groups: Vec<Vec<NodeId>>,
}

impl Partition {
    fn group_of(&self, node: NodeId) -> usize {
        self.groups
            .iter()
            .position(|g| g.contains(&node))
            .unwrap_or(self.groups.len())
    }

    pub fn separates(&self, a: NodeId, b: NodeId, now: u64) -> bool {
        now >= self.start_ms && now < self.end_ms && self.group_of(a) != self.group_of(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub latency_min_ms: u64,
    pub latency_max_ms: u64,
    pub drop_probability: f64,
    pub partitions: Vec<Partition>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            latency_min_ms: 5,
            latency_max_ms: 15,
            drop_probability: 0.0,
            partitions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    Crash {
        #[serde(default)]
        at_ms: u64,
    },
    /// Multiplies the latency of every outbound link.
    Slow { factor: f64 },
    /// As a primary, sends conflicting batches to two halves of its peers.
    Equivocate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub node: NodeId,
    #[serde(flatten)]
    pub kind: FaultKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub consensus: ConsensusConfig,
    pub network: NetworkConfig,
    pub faults: Vec<Fault>,
    pub duration_ms: u64,
    /// Ledger time (seconds) at simulated time zero.
    pub start_time_s: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            consensus: ConsensusConfig::default(),
            network: NetworkConfig::default(),
            faults: Vec::new(),
            duration_ms: 60_000,
            start_time_s: 1_700_000_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.consensus.validate()?;
        let net = &self.network;
        if net.latency_min_ms > net.latency_max_ms {
            return Err(ConfigError("latency_min_ms exceeds latency_max_ms".into()));
        }
        if !(0.0..1.0).contains(&net.drop_probability) {
            return Err(ConfigError("drop_probability must be in [0, 1)".into()));
        }
        for p in &net.partitions {
            if p.groups.iter().flatten().any(|&n| n >= self.consensus.n) {
                return Err(ConfigError("partition names an unknown node".into()));
            }
        }
        for fault in &self.faults {
            if fault.node >= self.consensus.n {
                return Err(ConfigError(format!("fault on unknown node {}", fault.node)));
            }
            if let FaultKind::Slow { factor } = fault.kind {
                if !factor.is_finite() || factor < 1.0 {
                    return Err(ConfigError("slow factor must be at least 1".into()));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn slow_factor(&self, node: NodeId) -> f64 {
        self.faults
            .iter()
            .filter_map(|f| match f.kind {
                FaultKind::Slow { factor } if f.node == node => Some(factor),
                _ => None,
            })
            .fold(1.0, f64::max)
    }

    pub fn crash_time(&self, node: NodeId) -> Option<u64> {
        self.faults
            .iter()
            .filter_map(|f| match f.kind {
                FaultKind::Crash { at_ms } if f.node == node => Some(at_ms),
                _ => None,
            })
            .min()
    }

    pub fn equivocates(&self, node: NodeId) -> bool {
        self.faults
            .iter()
            .any(|f| f.node == node && f.kind == FaultKind::Equivocate)
    }

    /// Nodes that follow the protocol for the whole run. Slow nodes count.
    pub fn is_honest(&self, node: NodeId) -> bool {
        self.crash_time(node).is_none() && !self.equivocates(node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SimConfig::default().validate().unwrap();
        let cfg = SimConfig::from_json("{}").unwrap();
        assert_eq!(cfg.consensus.quorum(), 3);
    }

    #[test]
    fn rejects_bad_sizes() {
        let bad = SimConfig::from_json(r#"{"consensus":{"n":3,"f":1}}"#).unwrap_err();
        assert!(bad.0.contains("3f+1"));
        assert!(SimConfig::from_json(r#"{"consensus":{"delta":1.0}}"#).is_err());
        assert!(SimConfig::from_json(r#"{"consensus":{"batch_max":0}}"#).is_err());
        assert!(SimConfig::from_json(r#"{"faults":[{"node":9,"kind":"equivocate"}]}"#).is_err());
        assert!(SimConfig::from_json(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn fault_parsing() {
        let cfg = SimConfig::from_json(
            r#"{"faults":[{"node":0,"kind":"slow","factor":10.0},{"node":2,"kind":"crash","at_ms":5}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.slow_factor(0), 10.0);
        assert_eq!(cfg.slow_factor(1), 1.0);
        assert_eq!(cfg.crash_time(2), Some(5));
        assert!(cfg.is_honest(0));
        assert!(!cfg.is_honest(2));
    }

    #[test]
    fn partitions() {
        let p = Partition {
            start_ms: 10,
            end_ms: 20,
            groups: vec![vec![0, 1]],
        };
        assert!(p.separates(0, 2, 15));
        assert!(!p.separates(0, 1, 15));
        assert!(!p.separates(2, 3, 15));
        assert!(!p.separates(0, 2, 20));
    }
}
