use crate::flow::{LedgerAccess, PublishError};
use crate::ledger::{Chain, LedgerTransaction};
use crate::state::{NodeState, Rejection};

use super::config::{ConfigError, SimConfig};
use super::node::SubmitError;
use super::sim::Simulation;

/// Simulated time a publish may take before giving up.
const PUBLISH_TIMEOUT_MS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClusterError {
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// An in-process replica group used as a ledger: every publish runs the
/// simulation until all live replicas have executed the transaction.
pub struct Cluster {
    sim: Simulation,
    clock_offset_s: u64,
}

impl Cluster {
    pub fn new(cfg: SimConfig, seed: u64) -> Result<Self, ClusterError> {
        Ok(Self {
            sim: Simulation::new(cfg, seed)?,
            clock_offset_s: 0,
        })
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    /// Moves the ledger clock forward without running the network.
    pub fn advance(&mut self, seconds: u64) {
        self.clock_offset_s += seconds;
    }

    pub fn chains(&self) -> Vec<&Chain> {
        self.sim.nodes().iter().map(|n| n.chain()).collect()
    }

    pub fn states(&self) -> Vec<&NodeState> {
        self.sim.nodes().iter().map(|n| n.state()).collect()
    }
}

impl LedgerAccess for Cluster {
    fn view(&self) -> &NodeState {
        self.sim.nodes()[self.sim.observer()].state()
    }

    fn publish(&mut self, txn: LedgerTransaction) -> Result<(), PublishError> {
        let id = txn.txn_id;
        self.sim.submit_now(txn, None).map_err(|e| match e {
            SubmitError::RejectedInvalidSignature => PublishError::Rejected(Rejection::BadSignature),
            SubmitError::MalformedRequest(m) => PublishError::Rejected(Rejection::MalformedPayload(m)),
        })?;
        let deadline = self.sim.now() + PUBLISH_TIMEOUT_MS;
        if !self.sim.run_until(deadline, |s| s.decided_everywhere(&id)) {
            return Err(PublishError::NotCommitted(format!(
                "not executed by every live replica within {PUBLISH_TIMEOUT_MS} ms"
            )));
        }
        match self.sim.rejection(&id) {
            Some(r) => Err(PublishError::Rejected(r.clone())),
            None => Ok(()),
        }
    }

    fn now(&self) -> u64 {
        self.sim.config().start_time_s + self.sim.now() / 1000 + self.clock_offset_s
    }
}
