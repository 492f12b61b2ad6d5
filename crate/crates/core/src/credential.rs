//! Verifiable credentials and presentations.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::canonical::{canonical_digest, to_canonical};
use crate::crypto::{verify, Digest, Signature, SigningKeyPair};
use crate::ledger::LedgerTransaction;
use crate::state::{registry_id_for, txn, CredDefRecord, NodeState, RevocEntryPayload, SchemaRecord};
use crate::wallet::{Wallet, WalletError};

pub const CREDENTIAL_EXTENSION: &str = ".cred.json";
pub const PRESENTATION_EXTENSION: &str = ".pres.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "attribute", rename_all = "snake_case")]
pub enum SchemaMismatch {
    Missing(String),
    Extra(String),
    IllTyped(String),
}

impl fmt::Display for SchemaMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaMismatch::Missing(a) => write!(f, "missing attribute {a:?}"),
            SchemaMismatch::Extra(a) => write!(f, "attribute {a:?} not in schema"),
            SchemaMismatch::IllTyped(a) => write!(f, "attribute {a:?} has the wrong type"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CredentialError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(SchemaMismatch),
    #[error("credential definition does not use this schema")]
    WrongSchema,
    #[error("signer is not the credential definition's issuer")]
    NotIssuer,
    #[error("nothing to present")]
    NothingToPresent,
    #[error("wallet does not hold a credential for {0}")]
    NotHolder(String),
    #[error(transparent)]
    Wallet(#[from] WalletError),
}

/// Reasons a credential or presentation fails verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CredentialInvalid {
    UnknownCredDef,
    BadSignature,
    Revoked,
    SchemaMismatch,
    EmptyPresentation,
    WrongAudience,
    BadHolderSignature,
    NotHolder,
}

impl fmt::Display for CredentialInvalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("unit variant");
        f.write_str(v.as_str().expect("string tag"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Invalid(CredentialInvalid),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifiableCredential {
    pub cred_def_id: Digest,
    pub issuer_did: String,
    pub subject_did: String,
    pub attributes: BTreeMap<String, Value>,
    pub issued_at: u64,
    pub credential_hash: Digest,
    pub issuer_signature: Signature,
}

impl VerifiableCredential {
    /// Hash over the body; `None` if the attributes are not canonicalizable.
    pub fn compute_hash(&self) -> Option<Digest> {
        canonical_digest(&json!({
            "cred_def_id": self.cred_def_id,
            "issuer_did": self.issuer_did,
            "subject_did": self.subject_did,
            "attributes": self.attributes,
            "issued_at": self.issued_at,
        }))
        .ok()
    }

    pub fn is_self_attested(&self) -> bool {
        self.issuer_did == self.subject_did
    }

    pub fn to_json(&self) -> String {
        to_canonical(self).expect("credential is canonicalizable").to_string()
    }
}

pub fn check_conformance(schema: &SchemaRecord, attributes: &BTreeMap<String, Value>) -> Result<(), SchemaMismatch> {
    for spec in &schema.body.attributes {
        match attributes.get(&spec.name) {
            None => return Err(SchemaMismatch::Missing(spec.name.clone())),
            Some(v) if !spec.attr_type.accepts(v) => return Err(SchemaMismatch::IllTyped(spec.name.clone())),
            Some(_) => {}
        }
    }
    if let Some(extra) = attributes.keys().find(|k| schema.attribute(k).is_none()) {
        return Err(SchemaMismatch::Extra(extra.clone()));
    }
    Ok(())
}

pub fn issue(
    issuer: &SigningKeyPair,
    cred_def: &CredDefRecord,
    schema: &SchemaRecord,
    subject_did: &str,
    attributes: BTreeMap<String, Value>,
    issued_at: u64,
) -> Result<VerifiableCredential, CredentialError> {
    if cred_def.body.schema_id != schema.schema_id {
        return Err(CredentialError::WrongSchema);
    }
    if issuer.public() != cred_def.body.issuer_verification_key {
        return Err(CredentialError::NotIssuer);
    }
    check_conformance(schema, &attributes).map_err(CredentialError::SchemaMismatch)?;
    let mut cred = VerifiableCredential {
        cred_def_id: cred_def.cred_def_id,
        issuer_did: cred_def.body.issuer_did.clone(),
        subject_did: subject_did.to_string(),
        attributes,
        issued_at,
        credential_hash: Digest::ZERO,
        issuer_signature: Signature([0u8; 64]),
    };
    cred.credential_hash = cred.compute_hash().expect("conformant attributes are canonicalizable");
    cred.issuer_signature = issuer.sign(&cred.credential_hash.0);
    Ok(cred)
}

/// Checks, in order: credential definition, issuer signature, revocation
/// (an entry timestamped at or before `now`), schema conformance.
pub fn verify_credential(cred: &VerifiableCredential, ledger: &NodeState, now: u64) -> Verdict {
    use CredentialInvalid::*;
    let Some(cred_def) = ledger.cred_def(&cred.cred_def_id) else {
        return Verdict::Invalid(UnknownCredDef);
    };
    let Some(schema) = ledger.schema(&cred_def.body.schema_id) else {
        return Verdict::Invalid(UnknownCredDef);
    };
    let signed = cred.issuer_did == cred_def.body.issuer_did
        && cred.compute_hash() == Some(cred.credential_hash)
        && verify(
            &cred_def.body.issuer_verification_key,
            &cred.credential_hash.0,
            &cred.issuer_signature,
        );
    if !signed {
        return Verdict::Invalid(BadSignature);
    }
    let registry = registry_id_for(&cred.cred_def_id);
    if let Ok(Some(t)) = ledger.revoked_at(&registry, &cred.credential_hash) {
        if t <= now {
            return Verdict::Invalid(Revoked);
        }
    }
    if check_conformance(schema, &cred.attributes).is_err() {
        return Verdict::Invalid(SchemaMismatch);
    }
    Verdict::Valid
}

/// Builds the REVOC_ENTRY transaction for `hashes`.
pub fn revoke(
    issuer: &SigningKeyPair,
    cred_def: &CredDefRecord,
    hashes: &[Digest],
    timestamp: u64,
) -> Result<LedgerTransaction, CredentialError> {
    if issuer.public() != cred_def.body.issuer_verification_key {
        return Err(CredentialError::NotIssuer);
    }
    let payload = RevocEntryPayload {
        cred_def_id: cred_def.cred_def_id,
        registry_id: registry_id_for(&cred_def.cred_def_id),
        revoked: hashes.to_vec(),
    };
    Ok(txn::revoc_entry(&payload, &cred_def.body.issuer_did, issuer, timestamp).expect("payload is canonicalizable"))
}

/// Credentials directed at one audience. Each credential is countersigned by
/// its subject DID, so credentials issued to different pairwise DIDs of the
/// same owner can be presented together under one holder DID.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Presentation {
    pub credentials: Vec<VerifiableCredential>,
    pub holder_did: String,
    pub audience_did: String,
    pub presented_at: u64,
    pub subject_proofs: Vec<Signature>,
    pub holder_signature: Signature,
}

impl Presentation {
    pub fn signing_bytes(&self) -> Vec<u8> {
        to_canonical(&json!({
            "credentials": self.credentials,
            "holder_did": self.holder_did,
            "audience_did": self.audience_did,
            "presented_at": self.presented_at,
        }))
        .map(|c| c.into_bytes())
        .unwrap_or_default()
    }

    pub fn to_json(&self) -> String {
        to_canonical(self).expect("presentation is canonicalizable").to_string()
    }
}

pub fn present(
    wallet: &Wallet,
    holder_relation: &str,
    credentials: &[VerifiableCredential],
    audience_did: &str,
    now: u64,
) -> Result<Presentation, CredentialError> {
    if credentials.is_empty() {
        return Err(CredentialError::NothingToPresent);
    }
    let holder = wallet.identity(holder_relation)?;
    let mut subjects = Vec::with_capacity(credentials.len());
    for cred in credentials {
        let relation = wallet
            .relation_for_did(&cred.subject_did)
            .filter(|_| wallet.holds(cred))
            .ok_or_else(|| CredentialError::NotHolder(cred.subject_did.clone()))?;
        subjects.push(wallet.identity(relation)?);
    }
    let mut p = Presentation {
        credentials: credentials.to_vec(),
        holder_did: holder.did.clone(),
        audience_did: audience_did.to_string(),
        presented_at: now,
        subject_proofs: Vec::new(),
        holder_signature: Signature([0u8; 64]),
    };
    let body = p.signing_bytes();
    p.subject_proofs = subjects.iter().map(|s| s.signing.sign(&body)).collect();
    p.holder_signature = holder.signing.sign(&body);
    Ok(p)
}

/// Audience first, then the holder signature, then subject proofs, then each
/// embedded credential.
pub fn verify_presentation(p: &Presentation, ledger: &NodeState, audience_did: &str, now: u64) -> Verdict {
    use CredentialInvalid::*;
    if p.credentials.is_empty() {
        return Verdict::Invalid(EmptyPresentation);
    }
    if p.audience_did != audience_did {
        return Verdict::Invalid(WrongAudience);
    }
    let body = p.signing_bytes();
    let holder_ok = ledger
        .resolve_did(&p.holder_did)
        .is_some_and(|doc| verify(&doc.verification_key, &body, &p.holder_signature));
    if !holder_ok {
        return Verdict::Invalid(BadHolderSignature);
    }
    if p.subject_proofs.len() != p.credentials.len() {
        return Verdict::Invalid(NotHolder);
    }
    for (cred, proof) in p.credentials.iter().zip(&p.subject_proofs) {
        let ok = ledger
            .resolve_did(&cred.subject_did)
            .is_some_and(|doc| verify(&doc.verification_key, &body, proof));
        if !ok {
            return Verdict::Invalid(NotHolder);
        }
    }
    for cred in &p.credentials {
        if let v @ Verdict::Invalid(_) = verify_credential(cred, ledger, now) {
            return v;
        }
    }
    Verdict::Valid
}
