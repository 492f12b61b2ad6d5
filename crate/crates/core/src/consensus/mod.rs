//! Redundant BFT ordering over a simulated network.
//!
//! Every replica runs two three-phase instances. The master instance's
//! batches are executed; the backup orders the same requests and serves as
//! the performance baseline. Each replica's monitor compares the two over a
//! sliding window. When the master degrades by more than `delta`, or stalls,
//! replicas vote for an instance change. The backup then orders a switch
//! batch carrying the voters' prepared certificates, and every replica
//! executes the carried master slots before entering the next epoch with
//! the roles swapped.

mod cluster;
pub mod config;
pub mod message;
pub mod monitor;
mod network;
pub mod node;
mod sim;
pub mod workload;

/// Replica index in `0..n`.
pub type NodeId = usize;
/// 0 or 1.
pub type InstanceId = usize;

pub use cluster::{Cluster, ClusterError};
pub use config::{ConfigError, ConsensusConfig, Fault, FaultKind, NetworkConfig, Partition, SimConfig};
pub use monitor::{MonitorDecision, PerfMonitor};
pub use node::{precheck, SubmitError};
pub use sim::{
    node_signing_key, run_simulation, EventRecord, InstanceChangeRecord, LatencySummary, NodeReport, SimReport,
    Simulation,
};
pub use workload::{did_workload, workload_from_json, workload_to_json, WorkloadItem};
