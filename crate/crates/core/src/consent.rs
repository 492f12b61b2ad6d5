//! Consent receipts: what was shared, with whom and why, signed by both
//! sides. Only the receipt's hash goes on the ledger.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::canonical::{canonical_digest, to_canonical};
use crate::crypto::{verify, Digest, Signature};
use crate::ledger::LedgerTransaction;
use crate::state::{txn, AttributeSpec, ConsentProofRecord, NodeState};
use crate::wallet::{Identity, Wallet, WalletError};

pub const RECEIPT_EXTENSION: &str = ".receipt.json";

#[derive(Debug, thiserror::Error)]
pub enum ConsentError {
    #[error("receipt lacks the {0} signature")]
    MissingSignature(&'static str),
    #[error("the {0} signature does not verify")]
    BadSignature(&'static str),
    #[error("{0} is not a party to this receipt")]
    NotParty(String),
    #[error(transparent)]
    Wallet(#[from] WalletError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsentReceipt {
    pub owner_did: String,
    pub verifier_did: String,
    pub shared_attributes: Vec<AttributeSpec>,
    pub purpose: String,
    pub timestamp: u64,
    #[serde(default)]
    pub owner_signature: Option<Signature>,
    #[serde(default)]
    pub verifier_signature: Option<Signature>,
}

impl ConsentReceipt {
    pub fn draft(
        owner_did: &str,
        verifier_did: &str,
        shared_attributes: Vec<AttributeSpec>,
        purpose: &str,
        timestamp: u64,
    ) -> Self {
        Self {
            owner_did: owner_did.to_string(),
            verifier_did: verifier_did.to_string(),
            shared_attributes,
            purpose: purpose.to_string(),
            timestamp,
            owner_signature: None,
            verifier_signature: None,
        }
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        to_canonical(&json!({
            "owner_did": self.owner_did,
            "verifier_did": self.verifier_did,
            "shared_attributes": self.shared_attributes,
            "purpose": self.purpose,
            "timestamp": self.timestamp,
        }))
        .expect("receipt body is canonicalizable")
        .into_bytes()
    }

    /// Signs in whichever role `signer`'s DID holds on this receipt.
    pub fn sign(&mut self, signer: &Identity) -> Result<(), ConsentError> {
        let sig = signer.signing.sign(&self.signing_bytes());
        if signer.did == self.owner_did {
            self.owner_signature = Some(sig);
        } else if signer.did == self.verifier_did {
            self.verifier_signature = Some(sig);
        } else {
            return Err(ConsentError::NotParty(signer.did.clone()));
        }
        Ok(())
    }

    /// Hash of the complete receipt, signatures included.
    pub fn hash(&self) -> Digest {
        canonical_digest(self).expect("receipt is canonicalizable")
    }

    pub fn verify_signatures(&self, ledger: &NodeState) -> Result<(), ConsentError> {
        let body = self.signing_bytes();
        for (role, did, sig) in [
            ("owner", &self.owner_did, &self.owner_signature),
            ("verifier", &self.verifier_did, &self.verifier_signature),
        ] {
            let sig = sig.as_ref().ok_or(ConsentError::MissingSignature(role))?;
            let ok = ledger
                .resolve_did(did)
                .is_some_and(|doc| verify(&doc.verification_key, &body, sig));
            if !ok {
                return Err(ConsentError::BadSignature(role));
            }
        }
        Ok(())
    }

    /// The dispute check: does the ledger hold a proof for exactly this receipt?
    pub fn matches_ledger(&self, ledger: &NodeState) -> bool {
        ledger.consent(&self.hash()).is_some_and(|rec| {
            rec.owner_did == self.owner_did && rec.verifier_did == self.verifier_did && rec.timestamp == self.timestamp
        })
    }

    pub fn to_json(&self) -> String {
        to_canonical(self).expect("receipt is canonicalizable").to_string()
    }
}

/// The CONSENT_PROOF transaction for a fully signed receipt.
pub fn consent_transaction(receipt: &ConsentReceipt, author: &Identity, now: u64) -> Result<LedgerTransaction, ConsentError> {
    if receipt.owner_signature.is_none() {
        return Err(ConsentError::MissingSignature("owner"));
    }
    if receipt.verifier_signature.is_none() {
        return Err(ConsentError::MissingSignature("verifier"));
    }
    if author.did != receipt.owner_did && author.did != receipt.verifier_did {
        return Err(ConsentError::NotParty(author.did.clone()));
    }
    let record = ConsentProofRecord {
        receipt_hash: receipt.hash(),
        owner_did: receipt.owner_did.clone(),
        verifier_did: receipt.verifier_did.clone(),
        timestamp: receipt.timestamp,
    };
    Ok(txn::consent_proof(&record, &author.did, &author.signing, now).expect("record is canonicalizable"))
}

/// Drafts, signs on both sides and wraps in a CONSENT_PROOF authored by the owner.
pub fn record_consent(
    owner: &Wallet,
    owner_relation: &str,
    verifier: &Identity,
    shared: Vec<AttributeSpec>,
    purpose: &str,
    now: u64,
) -> Result<(ConsentReceipt, LedgerTransaction), ConsentError> {
    let owner = owner.identity(owner_relation)?;
    let mut receipt = ConsentReceipt::draft(&owner.did, &verifier.did, shared, purpose, now);
    receipt.sign(&owner)?;
    receipt.sign(verifier)?;
    let txn = consent_transaction(&receipt, &owner, now)?;
    Ok((receipt, txn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::AttributeType;
    use crate::wallet::{create_wallet, KdfParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn parties() -> (Wallet, Identity, NodeState) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut alice = create_wallet("alice", b"a", KdfParams::fast(&mut rng)).unwrap();
        alice.new_pairwise("bank-b", &[1u8; 32]).unwrap();
        let mut bank = create_wallet("bank-b", b"b", KdfParams::fast(&mut rng)).unwrap();
        bank.new_pairwise("public", &[2u8; 32]).unwrap();
        let bank = bank.identity("public").unwrap();
        let mut state = NodeState::new();
        state.apply(&alice.identity("bank-b").unwrap().did_reg(1)).unwrap();
        state.apply(&bank.did_reg(1)).unwrap();
        (alice, bank, state)
    }

    fn shared() -> Vec<AttributeSpec> {
        vec![AttributeSpec::new("credit_score", AttributeType::Integer)]
    }

    #[test]
    fn record_and_dispute() {
        let (alice, bank, mut state) = parties();
        let (receipt, txn) = record_consent(&alice, "bank-b", &bank, shared(), "loan", 10).unwrap();
        receipt.verify_signatures(&state).unwrap();
        assert!(!receipt.matches_ledger(&state));
        state.apply(&txn).unwrap();
        assert!(receipt.matches_ledger(&state));
        let held: ConsentReceipt = serde_json::from_str(&receipt.to_json()).unwrap();
        assert!(held.matches_ledger(&state));
        let mut altered = held.clone();
        altered.purpose = "marketing".into();
        assert!(!altered.matches_ledger(&state));
        // The transaction carries the hash and DIDs only.
        let keys: Vec<_> = txn.payload.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["owner_did", "receipt_hash", "timestamp", "verifier_did"]);
    }

    #[test]
    fn missing_signature() {
        let (alice, bank, _) = parties();
        let owner = alice.identity("bank-b").unwrap();
        let mut receipt = ConsentReceipt::draft(&owner.did, &bank.did, shared(), "loan", 3);
        receipt.sign(&owner).unwrap();
        assert!(matches!(
            consent_transaction(&receipt, &owner, 3),
            Err(ConsentError::MissingSignature("verifier"))
        ));
        let stranger = alice.identity("bank-b").map(|mut i| {
            i.did = "did:sample:stranger".into();
            i
        });
        assert!(matches!(receipt.sign(&stranger.unwrap()), Err(ConsentError::NotParty(_))));
    }

    #[test]
    fn values_cannot_be_smuggled_in() {
        let (alice, bank, _) = parties();
        let (receipt, _) = record_consent(&alice, "bank-b", &bank, shared(), "loan", 10).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&receipt.to_json()).unwrap();
        v["shared_attributes"][0]["value"] = json!(812);
        assert!(serde_json::from_value::<ConsentReceipt>(v.clone()).is_err());
        v["shared_attributes"][0].as_object_mut().unwrap().remove("value");
        v["credit_score"] = json!(812);
        assert!(serde_json::from_value::<ConsentReceipt>(v).is_err());
    }

    #[test]
    fn forged_signature_detected() {
        let (alice, bank, state) = parties();
        let (mut receipt, _) = record_consent(&alice, "bank-b", &bank, shared(), "loan", 10).unwrap();
        receipt.verifier_signature = receipt.owner_signature;
        assert!(matches!(
            receipt.verify_signatures(&state),
            Err(ConsentError::BadSignature("verifier"))
        ));
    }
}
