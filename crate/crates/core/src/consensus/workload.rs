use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::canonical::to_canonical;
use crate::crypto::{generate_signing_keypair, sha256, EncryptionKeyPair};
use crate::ledger::LedgerTransaction;
use crate::state::{txn, DidDocument};

use super::NodeId;

/// One client submission. Without `to` the client broadcasts to every
/// replica; with `to` it sends to that replica only, which relays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadItem {
    pub time_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<NodeId>,
    pub txn: LedgerTransaction,
}

/// `count` DID registrations for fresh keys, one every `interval_ms`.
pub fn did_workload(count: usize, interval_ms: u64, seed: u64, start_time_s: u64) -> Vec<WorkloadItem> {
    (0..count)
        .map(|i| {
            let mut material = b"ssi/workload".to_vec();
            material.extend_from_slice(&seed.to_be_bytes());
            material.extend_from_slice(&(i as u64).to_be_bytes());
            let key_seed = sha256(&material);
            let key = generate_signing_keypair(&key_seed.0).expect("32-byte seed");
            let agree = EncryptionKeyPair::from_seed(&sha256(&key_seed.0).0).expect("32-byte seed");
            let doc = DidDocument {
                verification_key: key.public(),
                agreement_key: agree.public(),
                endpoint: format!("sim://load/{i}"),
                metadata: json!({}),
            };
            let time_ms = i as u64 * interval_ms;
            WorkloadItem {
                time_ms,
                to: None,
                txn: txn::did_reg(&doc, &key, start_time_s + time_ms / 1000).expect("DID document serializes"),
            }
        })
        .collect()
}

pub fn workload_to_json(items: &[WorkloadItem]) -> String {
    to_canonical(items).expect("workload serializes").as_str().to_owned()
}

pub fn workload_from_json(text: &str) -> Result<Vec<WorkloadItem>, serde_json::Error> {
    serde_json::from_str(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_round_trip() {
        let a = did_workload(5, 10, 3, 100);
        assert_eq!(a, did_workload(5, 10, 3, 100));
        assert_ne!(a[0].txn.txn_id, did_workload(1, 10, 4, 100)[0].txn.txn_id);
        let text = workload_to_json(&a);
        assert_eq!(workload_from_json(&text).unwrap(), a);
        assert_eq!(a[4].time_ms, 40);
    }
}
