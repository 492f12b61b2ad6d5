//! Replicated state machine fed by committed ledger transactions.
//!
//! Only public records live here: DID documents, schemas, credential
//! definitions, revocation registries and consent proofs. Every payload is
//! run through [`privacy_lint`] before it is applied.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::canonical::{canonical_digest, to_canonical, CanonicalError};
use crate::crypto::{sha256, AgreementKey, Digest, SigningKeyPair, VerificationKey};
use crate::ledger::{LedgerTransaction, TxnType};

pub const DID_PREFIX: &str = "did:sample:";

/// File extension for state dumps.
pub const STATE_EXTENSION: &str = ".state.json";

pub const DEFAULT_DENIED_FIELDS: &[&str] = &[
    "name",
    "surname",
    "birth_date",
    "address",
    "phone",
    "email",
    "national_id",
    "diagnosis",
    "salary",
    "account_number",
];

/// Key under which attribute values would be carried; never allowed on ledger.
pub const ATTRIBUTE_VALUES_KEY: &str = "attributes_values";

/// `did:sample:` followed by base58 of the first 16 bytes of
/// `sha256(verification_key)`.
pub fn did_from_key(key: &VerificationKey) -> String {
    let h = sha256(&key.0);
    format!("{DID_PREFIX}{}", bs58::encode(&h.0[..16]).into_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DidDocument {
    pub verification_key: VerificationKey,
    pub agreement_key: AgreementKey,
    pub endpoint: String,
    #[serde(default = "empty_object")]
    pub metadata: Value,
}

fn empty_object() -> Value {
    json!({})
}

impl DidDocument {
    pub fn did(&self) -> String {
        did_from_key(&self.verification_key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DidRecord {
    pub did: String,
    pub document: DidDocument,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeType {
    String,
    Integer,
    Date,
    Boolean,
}

impl AttributeType {
    /// Whether `value` is a well-formed instance of this type. Dates are
    /// ISO-8601 calendar dates (`YYYY-MM-DD`).
    pub fn accepts(&self, value: &Value) -> bool {
        match self {
            AttributeType::String => value.is_string(),
            AttributeType::Integer => value.is_i64() || value.is_u64(),
            AttributeType::Boolean => value.is_boolean(),
            AttributeType::Date => value
                .as_str()
                .map(|s| chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok())
                .unwrap_or(false),
        }
    }
}

impl std::str::FromStr for AttributeType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "string" => Ok(Self::String),
            "integer" => Ok(Self::Integer),
            "date" => Ok(Self::Date),
            "boolean" => Ok(Self::Boolean),
            other => Err(format!("unknown attribute type {other:?}")),
        }
    }
}

/// An attribute name and its type. Carries no value slot.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    #[serde(rename = "attr_name")]
    pub name: String,
    #[serde(rename = "attr_type")]
    pub attr_type: AttributeType,
}

impl AttributeSpec {
    pub fn new(name: impl Into<String>, attr_type: AttributeType) -> Self {
        Self {
            name: name.into(),
            attr_type,
        }
    }
}

/// The published part of a schema; its canonical digest is the schema id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaBody {
    #[serde(rename = "schema_name")]
    pub name: String,
    pub version: String,
    pub attributes: Vec<AttributeSpec>,
}

impl SchemaBody {
    pub fn id(&self) -> Digest {
        canonical_digest(self).expect("schema body is canonicalizable")
    }

    fn well_formed(&self) -> Result<(), String> {
        if self.attributes.is_empty() {
            return Err("schema has no attributes".into());
        }
        let mut seen = BTreeSet::new();
        for a in &self.attributes {
            if a.name.is_empty() {
                return Err("empty attribute name".into());
            }
            if !seen.insert(a.name.as_str()) {
                return Err(format!("duplicate attribute {:?}", a.name));
            }
        }
        let mut parts = self.version.split('.');
        let ok = matches!(
            (parts.next(), parts.next(), parts.next()),
            (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty()
                && a.bytes().all(|c| c.is_ascii_digit()) && b.bytes().all(|c| c.is_ascii_digit())
        );
        if !ok {
            return Err(format!("version {:?} is not major.minor", self.version));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaRecord {
    pub schema_id: Digest,
    pub body: SchemaBody,
}

impl SchemaRecord {
    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.body.attributes.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CredDefBody {
    pub schema_id: Digest,
    pub issuer_did: String,
    pub issuer_verification_key: VerificationKey,
    pub tag: String,
}

impl CredDefBody {
    pub fn id(&self) -> Digest {
        canonical_digest(self).expect("cred def body is canonicalizable")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredDefRecord {
    pub cred_def_id: Digest,
    pub body: CredDefBody,
}

/// Revocation registry id for a credential definition.
pub fn registry_id_for(cred_def_id: &Digest) -> Digest {
    canonical_digest(&json!({"cred_def_id": cred_def_id, "kind": "revocation_registry"}))
        .expect("registry id input is canonicalizable")
}

/// Append-only set of revoked credential hashes, each with the timestamp of
/// the first entry that revoked it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationRegistryState {
    pub registry_id: Digest,
    pub cred_def_id: Digest,
    pub revoked: BTreeMap<Digest, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevocEntryPayload {
    pub cred_def_id: Digest,
    pub registry_id: Digest,
    pub revoked: Vec<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsentProofRecord {
    pub receipt_hash: Digest,
    pub owner_did: String,
    pub verifier_did: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DidRegPayload {
    did: String,
    document: DidDocument,
}

/// Builders for signed transactions of each type.
pub mod txn {
    use super::*;

    pub fn did_reg(document: &DidDocument, key: &SigningKeyPair, timestamp: u64) -> Result<LedgerTransaction, CanonicalError> {
        let did = document.did();
        let payload = serde_json::to_value(DidRegPayload {
            did: did.clone(),
            document: document.clone(),
        })
        .map_err(|e| CanonicalError::Serialize(e.to_string()))?;
        LedgerTransaction::new(TxnType::DidReg, payload, did, timestamp, key)
    }

    pub fn schema(body: &SchemaBody, author_did: &str, key: &SigningKeyPair, timestamp: u64) -> Result<LedgerTransaction, CanonicalError> {
        LedgerTransaction::new(TxnType::Schema, to_value(body)?, author_did, timestamp, key)
    }

    pub fn cred_def(body: &CredDefBody, key: &SigningKeyPair, timestamp: u64) -> Result<LedgerTransaction, CanonicalError> {
        LedgerTransaction::new(TxnType::CredDef, to_value(body)?, body.issuer_did.clone(), timestamp, key)
    }

    pub fn revoc_entry(
        payload: &RevocEntryPayload,
        author_did: &str,
        key: &SigningKeyPair,
        timestamp: u64,
    ) -> Result<LedgerTransaction, CanonicalError> {
        LedgerTransaction::new(TxnType::RevocEntry, to_value(payload)?, author_did, timestamp, key)
    }

    pub fn consent_proof(
        record: &ConsentProofRecord,
        author_did: &str,
        key: &SigningKeyPair,
        timestamp: u64,
    ) -> Result<LedgerTransaction, CanonicalError> {
        LedgerTransaction::new(TxnType::ConsentProof, to_value(record)?, author_did, timestamp, key)
    }

    fn to_value<T: Serialize>(v: &T) -> Result<Value, CanonicalError> {
        serde_json::to_value(v).map_err(|e| CanonicalError::Serialize(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivacyPolicy {
    pub denied_fields: BTreeSet<String>,
}

impl Default for PrivacyPolicy {
    fn default() -> Self {
        Self {
            denied_fields: DEFAULT_DENIED_FIELDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", content = "field", rename_all = "snake_case")]
pub enum LintResult {
    Pass,
    Fail(String),
}

/// Flags any object key on the deny-list, or any `attributes_values` map,
/// anywhere in `payload`.
pub fn privacy_lint(payload: &Value, policy: &PrivacyPolicy) -> LintResult {
    match payload {
        Value::Object(map) => {
            for (k, v) in map {
                if k == ATTRIBUTE_VALUES_KEY || policy.denied_fields.contains(k) {
                    return LintResult::Fail(k.clone());
                }
                if let LintResult::Fail(f) = privacy_lint(v, policy) {
                    return LintResult::Fail(f);
                }
            }
            LintResult::Pass
        }
        Value::Array(items) => items
            .iter()
            .map(|v| privacy_lint(v, policy))
            .find(|r| matches!(r, LintResult::Fail(_)))
            .unwrap_or(LintResult::Pass),
        _ => LintResult::Pass,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum Rejection {
    #[error("DID already registered")]
    DuplicateDid,
    #[error("unknown schema")]
    UnknownSchema,
    #[error("unknown DID")]
    UnknownDid,
    #[error("unknown credential definition")]
    UnknownCredDef,
    #[error("author is not the credential definition's issuer")]
    UnauthorizedIssuer,
    #[error("payload field {0:?} is private")]
    PrivacyViolation(String),
    #[error("author signature does not verify")]
    BadSignature,
    #[error("record already present")]
    DuplicateRecord,
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StateError {
    #[error("unknown revocation registry {0}")]
    UnknownRegistry(Digest),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeState {
    dids: BTreeMap<String, DidDocument>,
    schemas: BTreeMap<Digest, SchemaRecord>,
    cred_defs: BTreeMap<Digest, CredDefRecord>,
    registries: BTreeMap<Digest, RevocationRegistryState>,
    consents: BTreeMap<Digest, ConsentProofRecord>,
    applied: u64,
    #[serde(skip)]
    policy: PrivacyPolicy,
}

impl NodeState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_policy(policy: PrivacyPolicy) -> Self {
        Self {
            policy,
            ..Self::default()
        }
    }

    pub fn policy(&self) -> &PrivacyPolicy {
        &self.policy
    }

    /// Number of transactions applied so far.
    pub fn applied(&self) -> u64 {
        self.applied
    }

    /// Applies a committed transaction. A rejected transaction leaves the
    /// state untouched.
    pub fn apply(&mut self, txn: &LedgerTransaction) -> Result<(), Rejection> {
        if !txn.id_is_consistent() {
            return Err(Rejection::MalformedPayload("txn_id does not match contents".into()));
        }
        if let LintResult::Fail(field) = privacy_lint(&txn.payload, &self.policy) {
            return Err(Rejection::PrivacyViolation(field));
        }
        match txn.txn_type {
            TxnType::DidReg => self.apply_did_reg(txn)?,
            TxnType::Schema => self.apply_schema(txn)?,
            TxnType::CredDef => self.apply_cred_def(txn)?,
            TxnType::RevocEntry => self.apply_revocation(txn)?,
            TxnType::ConsentProof => self.apply_consent(txn)?,
        }
        self.applied += 1;
        Ok(())
    }

    fn author_key(&self, txn: &LedgerTransaction) -> Result<VerificationKey, Rejection> {
        let doc = self.dids.get(&txn.author_did).ok_or(Rejection::UnknownDid)?;
        if !txn.verify_signature(&doc.verification_key) {
            return Err(Rejection::BadSignature);
        }
        Ok(doc.verification_key)
    }

    fn apply_did_reg(&mut self, txn: &LedgerTransaction) -> Result<(), Rejection> {
        let p: DidRegPayload = parse(&txn.payload)?;
        if p.did != p.document.did() || txn.author_did != p.did {
            return Err(Rejection::MalformedPayload("DID is not derived from its verification key".into()));
        }
        if !txn.verify_signature(&p.document.verification_key) {
            return Err(Rejection::BadSignature);
        }
        if self.dids.contains_key(&p.did) {
            return Err(Rejection::DuplicateDid);
        }
        self.dids.insert(p.did, p.document);
        Ok(())
    }

    fn apply_schema(&mut self, txn: &LedgerTransaction) -> Result<(), Rejection> {
        let body: SchemaBody = parse(&txn.payload)?;
        body.well_formed().map_err(Rejection::MalformedPayload)?;
        self.author_key(txn)?;
        let schema_id = body.id();
        if self.schemas.contains_key(&schema_id) {
            return Err(Rejection::DuplicateRecord);
        }
        self.schemas.insert(schema_id, SchemaRecord { schema_id, body });
        Ok(())
    }

    fn apply_cred_def(&mut self, txn: &LedgerTransaction) -> Result<(), Rejection> {
        let body: CredDefBody = parse(&txn.payload)?;
        if !self.schemas.contains_key(&body.schema_id) {
            return Err(Rejection::UnknownSchema);
        }
        let issuer = self.dids.get(&body.issuer_did).ok_or(Rejection::UnknownDid)?;
        if txn.author_did != body.issuer_did || issuer.verification_key != body.issuer_verification_key {
            return Err(Rejection::UnauthorizedIssuer);
        }
        self.author_key(txn)?;
        let cred_def_id = body.id();
        if self.cred_defs.contains_key(&cred_def_id) {
            return Err(Rejection::DuplicateRecord);
        }
        let registry_id = registry_id_for(&cred_def_id);
        self.cred_defs.insert(cred_def_id, CredDefRecord { cred_def_id, body });
        self.registries.insert(
            registry_id,
            RevocationRegistryState {
                registry_id,
                cred_def_id,
                revoked: BTreeMap::new(),
            },
        );
        Ok(())
    }

    fn apply_revocation(&mut self, txn: &LedgerTransaction) -> Result<(), Rejection> {
        let p: RevocEntryPayload = parse(&txn.payload)?;
        let cred_def = self.cred_defs.get(&p.cred_def_id).ok_or(Rejection::UnknownCredDef)?;
        if p.registry_id != registry_id_for(&p.cred_def_id) {
            return Err(Rejection::MalformedPayload("registry does not belong to credential definition".into()));
        }
        if txn.author_did != cred_def.body.issuer_did {
            return Err(Rejection::UnauthorizedIssuer);
        }
        self.author_key(txn)?;
        let registry = self
            .registries
            .get_mut(&p.registry_id)
            .expect("registry created with its credential definition");
        for h in p.revoked {
            registry.revoked.entry(h).or_insert(txn.timestamp);
        }
        Ok(())
    }

    fn apply_consent(&mut self, txn: &LedgerTransaction) -> Result<(), Rejection> {
        let rec: ConsentProofRecord = parse(&txn.payload)?;
        if !self.dids.contains_key(&rec.owner_did) || !self.dids.contains_key(&rec.verifier_did) {
            return Err(Rejection::UnknownDid);
        }
        if txn.author_did != rec.owner_did && txn.author_did != rec.verifier_did {
            return Err(Rejection::MalformedPayload("consent proof authored by a third party".into()));
        }
        self.author_key(txn)?;
        if self.consents.contains_key(&rec.receipt_hash) {
            return Err(Rejection::DuplicateRecord);
        }
        self.consents.insert(rec.receipt_hash, rec);
        Ok(())
    }

    pub fn resolve_did(&self, did: &str) -> Option<&DidDocument> {
        self.dids.get(did)
    }

    pub fn dids(&self) -> impl Iterator<Item = (&String, &DidDocument)> {
        self.dids.iter()
    }

    pub fn schema(&self, id: &Digest) -> Option<&SchemaRecord> {
        self.schemas.get(id)
    }

    pub fn cred_def(&self, id: &Digest) -> Option<&CredDefRecord> {
        self.cred_defs.get(id)
    }

    pub fn cred_defs(&self) -> impl Iterator<Item = &CredDefRecord> {
        self.cred_defs.values()
    }

    pub fn registry(&self, registry_id: &Digest) -> Option<&RevocationRegistryState> {
        self.registries.get(registry_id)
    }

    pub fn is_revoked(&self, registry_id: &Digest, credential_hash: &Digest) -> Result<bool, StateError> {
        self.revoked_at(registry_id, credential_hash).map(|t| t.is_some())
    }

    /// Timestamp of the entry that revoked `credential_hash`, if any.
    pub fn revoked_at(&self, registry_id: &Digest, credential_hash: &Digest) -> Result<Option<u64>, StateError> {
        let reg = self
            .registries
            .get(registry_id)
            .ok_or(StateError::UnknownRegistry(*registry_id))?;
        Ok(reg.revoked.get(credential_hash).copied())
    }

    pub fn consent(&self, receipt_hash: &Digest) -> Option<&ConsentProofRecord> {
        self.consents.get(receipt_hash)
    }

    pub fn consents(&self) -> impl Iterator<Item = &ConsentProofRecord> {
        self.consents.values()
    }

    /// Canonical JSON dump, the `.state.json` format.
    pub fn to_canonical_json(&self) -> String {
        to_canonical(self).expect("state is canonicalizable").as_str().to_owned()
    }

    pub fn digest(&self) -> Digest {
        sha256(self.to_canonical_json().as_bytes())
    }
}

fn parse<T: serde::de::DeserializeOwned>(payload: &Value) -> Result<T, Rejection> {
    serde_json::from_value(payload.clone()).map_err(|e| Rejection::MalformedPayload(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{generate_signing_keypair, EncryptionKeyPair};
    use proptest::prelude::*;

    struct Actor {
        key: SigningKeyPair,
        doc: DidDocument,
    }

    impl Actor {
        fn new(n: u8) -> Self {
            let key = generate_signing_keypair(&[n; 32]).unwrap();
            let agree = EncryptionKeyPair::from_seed(&[n.wrapping_add(100); 32]).unwrap();
            let doc = DidDocument {
                verification_key: key.public(),
                agreement_key: agree.public(),
                endpoint: format!("sim://actor{n}"),
                metadata: json!({"org": "Hospital A"}),
            };
            Actor { key, doc }
        }

        fn did(&self) -> String {
            self.doc.did()
        }

        fn register(&self, ts: u64) -> LedgerTransaction {
            txn::did_reg(&self.doc, &self.key, ts).unwrap()
        }
    }

    fn diploma() -> SchemaBody {
        SchemaBody {
            name: "diploma".into(),
            version: "1.0".into(),
            attributes: vec![
                AttributeSpec::new("name", AttributeType::String),
                AttributeSpec::new("degree", AttributeType::String),
                AttributeSpec::new("year", AttributeType::Integer),
            ],
        }
    }

    /// State with an issuer, a schema and a cred def. Returns (state, issuer, cred_def_id).
    fn issuer_state() -> (NodeState, Actor, Digest) {
        let mut s = NodeState::new();
        let issuer = Actor::new(1);
        s.apply(&issuer.register(1)).unwrap();
        let schema = diploma();
        s.apply(&txn::schema(&schema, &issuer.did(), &issuer.key, 2).unwrap()).unwrap();
        let body = CredDefBody {
            schema_id: schema.id(),
            issuer_did: issuer.did(),
            issuer_verification_key: issuer.key.public(),
            tag: "default".into(),
        };
        s.apply(&txn::cred_def(&body, &issuer.key, 3).unwrap()).unwrap();
        (s, issuer, body.id())
    }

    #[test]
    fn did_format() {
        let a = Actor::new(1);
        let did = a.did();
        assert!(did.starts_with("did:sample:"));
        let suffix = bs58::decode(&did[DID_PREFIX.len()..]).into_vec().unwrap();
        assert_eq!(suffix, sha256(&a.key.public().0).0[..16].to_vec());
    }

    #[test]
    fn did_registration_and_duplicates() {
        let mut s = NodeState::new();
        let a = Actor::new(1);
        s.apply(&a.register(1)).unwrap();
        assert_eq!(s.resolve_did(&a.did()), Some(&a.doc));
        assert_eq!(s.apply(&a.register(2)), Err(Rejection::DuplicateDid));
        assert_eq!(s.resolve_did("did:sample:nobody"), None);
    }

    #[test]
    fn did_reg_must_be_self_certifying() {
        let mut s = NodeState::new();
        let a = Actor::new(1);
        let b = Actor::new(2);
        // Signed by b's key but registering a's document.
        let forged = txn::did_reg(&a.doc, &b.key, 1).unwrap();
        assert_eq!(s.apply(&forged), Err(Rejection::BadSignature));
        assert_eq!(s.digest(), NodeState::new().digest());
    }

    #[test]
    fn revocation_requires_issuer() {
        let (mut s, issuer, cd) = issuer_state();
        let other = Actor::new(9);
        s.apply(&other.register(4)).unwrap();
        let entry = RevocEntryPayload {
            cred_def_id: cd,
            registry_id: registry_id_for(&cd),
            revoked: vec![sha256(b"cred")],
        };
        let before = s.digest();
        let forged = txn::revoc_entry(&entry, &other.did(), &other.key, 5).unwrap();
        assert_eq!(s.apply(&forged), Err(Rejection::UnauthorizedIssuer));
        assert_eq!(s.digest(), before);

        let reg = registry_id_for(&cd);
        assert_eq!(s.is_revoked(&reg, &sha256(b"cred")), Ok(false));
        s.apply(&txn::revoc_entry(&entry, &issuer.did(), &issuer.key, 6).unwrap()).unwrap();
        assert_eq!(s.is_revoked(&reg, &sha256(b"cred")), Ok(true));
        assert_eq!(s.is_revoked(&reg, &sha256(b"other")), Ok(false));
        assert_eq!(s.revoked_at(&reg, &sha256(b"cred")), Ok(Some(6)));
        // Idempotent: a second entry keeps the first timestamp.
        s.apply(&txn::revoc_entry(&entry, &issuer.did(), &issuer.key, 7).unwrap()).unwrap();
        assert_eq!(s.revoked_at(&reg, &sha256(b"cred")), Ok(Some(6)));
        assert_eq!(
            s.is_revoked(&sha256(b"nope"), &sha256(b"cred")),
            Err(StateError::UnknownRegistry(sha256(b"nope")))
        );
    }

    #[test]
    fn cred_def_needs_schema_and_did() {
        let mut s = NodeState::new();
        let issuer = Actor::new(1);
        let body = CredDefBody {
            schema_id: diploma().id(),
            issuer_did: issuer.did(),
            issuer_verification_key: issuer.key.public(),
            tag: "t".into(),
        };
        assert_eq!(
            s.apply(&txn::cred_def(&body, &issuer.key, 1).unwrap()),
            Err(Rejection::UnknownSchema)
        );
        let author = Actor::new(3);
        s.apply(&author.register(1)).unwrap();
        s.apply(&txn::schema(&diploma(), &author.did(), &author.key, 2).unwrap()).unwrap();
        assert_eq!(
            s.apply(&txn::cred_def(&body, &issuer.key, 3).unwrap()),
            Err(Rejection::UnknownDid)
        );
    }

    #[test]
    fn schema_validation() {
        let mut s = NodeState::new();
        let a = Actor::new(1);
        s.apply(&a.register(1)).unwrap();
        let mut dup = diploma();
        dup.attributes.push(AttributeSpec::new("year", AttributeType::Date));
        assert!(matches!(
            s.apply(&txn::schema(&dup, &a.did(), &a.key, 2).unwrap()),
            Err(Rejection::MalformedPayload(_))
        ));
        let mut bad_version = diploma();
        bad_version.version = "1".into();
        assert!(matches!(
            s.apply(&txn::schema(&bad_version, &a.did(), &a.key, 2).unwrap()),
            Err(Rejection::MalformedPayload(_))
        ));
        let stranger = Actor::new(2);
        assert_eq!(
            s.apply(&txn::schema(&diploma(), &stranger.did(), &stranger.key, 2).unwrap()),
            Err(Rejection::UnknownDid)
        );
    }

    #[test]
    fn privacy_lint_cases() {
        let p = PrivacyPolicy::default();
        assert_eq!(privacy_lint(&json!({"org": "Hospital A"}), &p), LintResult::Pass);
        assert_eq!(
            privacy_lint(&json!({"phone": "+90 555 000 0000"}), &p),
            LintResult::Fail("phone".into())
        );
        let consent_with_names = json!({
            "receipt_hash": sha256(b"r"),
            "owner_did": "did:sample:a",
            "verifier_did": "did:sample:b",
            "timestamp": 1,
            "shared_attributes": [{"attr_name": "credit_score", "attr_type": "integer"}]
        });
        assert_eq!(privacy_lint(&consent_with_names, &p), LintResult::Pass);
        assert_eq!(
            privacy_lint(&json!({"x": [{"attributes_values": {"a": 1}}]}), &p),
            LintResult::Fail("attributes_values".into())
        );
        assert_eq!(
            privacy_lint(&json!({"deep": {"email": "x"}}), &p),
            LintResult::Fail("email".into())
        );
    }

    #[test]
    fn privacy_violation_rejected_on_apply() {
        let mut s = NodeState::new();
        let mut a = Actor::new(1);
        a.doc.metadata = json!({"salary": "1000"});
        assert_eq!(
            s.apply(&a.register(1)),
            Err(Rejection::PrivacyViolation("salary".into()))
        );
        let custom = PrivacyPolicy {
            denied_fields: ["org".to_string()].into(),
        };
        let mut s = NodeState::with_policy(custom);
        assert_eq!(
            s.apply(&Actor::new(2).register(1)),
            Err(Rejection::PrivacyViolation("org".into()))
        );
    }

    #[test]
    fn consent_proof_requires_known_parties() {
        let mut s = NodeState::new();
        let owner = Actor::new(1);
        let verifier = Actor::new(2);
        s.apply(&owner.register(1)).unwrap();
        let rec = ConsentProofRecord {
            receipt_hash: sha256(b"receipt"),
            owner_did: owner.did(),
            verifier_did: verifier.did(),
            timestamp: 5,
        };
        assert_eq!(
            s.apply(&txn::consent_proof(&rec, &owner.did(), &owner.key, 5).unwrap()),
            Err(Rejection::UnknownDid)
        );
        s.apply(&verifier.register(2)).unwrap();
        s.apply(&txn::consent_proof(&rec, &owner.did(), &owner.key, 5).unwrap()).unwrap();
        assert_eq!(s.consent(&sha256(b"receipt")), Some(&rec));
    }

    #[test]
    fn attribute_types() {
        assert!(AttributeType::Date.accepts(&json!("2020-02-29")));
        assert!(!AttributeType::Date.accepts(&json!("2021-02-29")));
        assert!(!AttributeType::Integer.accepts(&json!("7")));
        assert!(AttributeType::Boolean.accepts(&json!(false)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        // Random interleavings of valid and invalid revocations: rejected txns
        // never change the digest and revoked hashes stay revoked.
        #[test]
        fn apply_total_and_revocation_monotone(ops in proptest::collection::vec((any::<bool>(), 0u8..6), 1..20)) {
            let (mut s, issuer, cd) = issuer_state();
            let outsider = Actor::new(42);
            s.apply(&outsider.register(4)).unwrap();
            let reg = registry_id_for(&cd);
            let mut revoked = BTreeSet::new();
            for (i, (by_issuer, h)) in ops.into_iter().enumerate() {
                let hash = sha256(&[h]);
                let entry = RevocEntryPayload { cred_def_id: cd, registry_id: reg, revoked: vec![hash] };
                let who = if by_issuer { &issuer } else { &outsider };
                let t = txn::revoc_entry(&entry, &who.did(), &who.key, 10 + i as u64).unwrap();
                let before = s.digest();
                match s.apply(&t) {
                    Ok(()) => { revoked.insert(hash); }
                    Err(_) => prop_assert_eq!(s.digest(), before),
                }
                for r in &revoked {
                    prop_assert!(s.is_revoked(&reg, r).unwrap());
                }
            }
        }
    }
}
