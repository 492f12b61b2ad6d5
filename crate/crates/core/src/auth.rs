//! Public-key challenge-response authentication.
//!
//! The verifier seals a random 32-byte nonce to the subject's agreement key.
//! The subject proves key possession by decrypting and returning it.
//! Challenges are single-use and expire after their ttl.

use std::collections::{BTreeMap, BTreeSet};

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::canonical::canonical_digest;
use crate::crypto::{encrypt_to, AgreementKey, CryptoError, Digest};

/// Default challenge lifetime in seconds.
pub const DEFAULT_CHALLENGE_TTL: u64 = 120;

pub const NONCE_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("challenge ttl must be positive")]
    ZeroTtl,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// What travels to the subject. The nonce itself never does.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Challenge {
    pub challenge_id: Digest,
    pub verifier_did: String,
    #[serde(with = "crate::b64")]
    pub ciphertext: Vec<u8>,
    pub issued_at: u64,
    pub ttl: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PendingChallenge {
    #[serde(with = "hex_nonce")]
    nonce: [u8; NONCE_LEN],
    issued_at: u64,
    ttl: u64,
}

mod hex_nonce {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(n: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(n))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(s).map_err(serde::de::Error::custom)?;
        v.try_into().map_err(|_| serde::de::Error::custom("nonce must be 32 bytes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthRejection {
    Mismatch,
    Expired,
    Replayed,
    UnknownChallenge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "reason", rename_all = "snake_case")]
pub enum AuthOutcome {
    Authenticated,
    Rejected(AuthRejection),
}

/// Verifier-side bookkeeping: outstanding nonces and consumed challenge ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeVerifier {
    pub verifier_did: String,
    pending: BTreeMap<Digest, PendingChallenge>,
    consumed: BTreeSet<Digest>,
}

impl ChallengeVerifier {
    pub fn new(verifier_did: impl Into<String>) -> Self {
        Self {
            verifier_did: verifier_did.into(),
            ..Self::default()
        }
    }

    pub fn issue_challenge<R: RngCore + CryptoRng>(
        &mut self,
        subject_agreement_key: &AgreementKey,
        ttl: u64,
        now: u64,
        rng: &mut R,
    ) -> Result<Challenge, AuthError> {
        if ttl == 0 {
            return Err(AuthError::ZeroTtl);
        }
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let ciphertext = encrypt_to(subject_agreement_key, &nonce, rng)?;
        let challenge_id = canonical_digest(&json!({
            "verifier_did": self.verifier_did,
            "issued_at": now,
            "ttl": ttl,
            "ciphertext": crate::b64::encode(&ciphertext),
        }))
        .expect("challenge header is canonicalizable");
        self.pending.insert(
            challenge_id,
            PendingChallenge {
                nonce,
                issued_at: now,
                ttl,
            },
        );
        Ok(Challenge {
            challenge_id,
            verifier_did: self.verifier_did.clone(),
            ciphertext,
            issued_at: now,
            ttl,
        })
    }

    /// Consumes the challenge on first use, whatever the outcome.
    pub fn check_response(&mut self, challenge_id: &Digest, response: &[u8], now: u64) -> AuthOutcome {
        if self.consumed.contains(challenge_id) {
            return AuthOutcome::Rejected(AuthRejection::Replayed);
        }
        let Some(pending) = self.pending.remove(challenge_id) else {
            return AuthOutcome::Rejected(AuthRejection::UnknownChallenge);
        };
        self.consumed.insert(*challenge_id);
        if now > pending.issued_at.saturating_add(pending.ttl) {
            return AuthOutcome::Rejected(AuthRejection::Expired);
        }
        if !constant_time_eq(&pending.nonce, response) {
            return AuthOutcome::Rejected(AuthRejection::Mismatch);
        }
        AuthOutcome::Authenticated
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}
