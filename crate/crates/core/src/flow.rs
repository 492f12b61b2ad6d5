//! Ledger access for agents, and the composed third-party data-sharing flow.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{CryptoRng, RngCore};
use serde::Serialize;
use serde_json::Value;

use crate::auth::{AuthOutcome, AuthRejection, ChallengeVerifier, DEFAULT_CHALLENGE_TTL};
use crate::consent::{consent_transaction, ConsentReceipt};
use crate::credential::{issue, present, verify_presentation, CredentialInvalid, Presentation, VerifiableCredential, Verdict};
use crate::crypto::Digest;
use crate::ledger::{validate_chain, Chain, ChainValidity, LedgerError, LedgerTransaction};
use crate::state::{NodeState, Rejection};
use crate::wallet::{StoreRejection, Wallet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PublishError {
    #[error("rejected: {0}")]
    Rejected(Rejection),
    #[error("not committed: {0}")]
    NotCommitted(String),
}

/// A read view of replicated state plus a way to get transactions committed.
pub trait LedgerAccess {
    fn view(&self) -> &NodeState;
    /// Returns once the transaction is committed, or why it was not.
    fn publish(&mut self, txn: LedgerTransaction) -> Result<(), PublishError>;
    /// Current time in seconds.
    fn now(&self) -> u64;
}

/// Single-replica ledger: one block per published transaction.
#[derive(Debug, Clone, Default)]
pub struct LocalLedger {
    pub chain: Chain,
    pub state: NodeState,
    pub clock: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum LocalLedgerError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("invalid chain at height {height}: {reason:?}")]
    InvalidChain { height: u64, reason: crate::ledger::InvalidReason },
    #[error("committed transaction {txn_id} does not apply: {rejection}")]
    Replay { txn_id: Digest, rejection: Rejection },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LocalLedger {
    pub fn new(clock: u64) -> Self {
        Self {
            clock,
            ..Self::default()
        }
    }

    /// Rebuilds state by replaying a validated chain.
    pub fn from_chain(chain: Chain) -> Result<Self, LocalLedgerError> {
        if let ChainValidity::Invalid { height, reason } = validate_chain(&chain) {
            return Err(LocalLedgerError::InvalidChain { height, reason });
        }
        let mut state = NodeState::new();
        for t in chain.transactions() {
            state.apply(t).map_err(|rejection| LocalLedgerError::Replay {
                txn_id: t.txn_id,
                rejection,
            })?;
        }
        let clock = chain.head().timestamp;
        Ok(Self { chain, state, clock })
    }

    pub fn load(path: &Path) -> Result<Self, LocalLedgerError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_chain(Chain::from_jsonl(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), LocalLedgerError> {
        std::fs::write(path, self.chain.to_jsonl())?;
        Ok(())
    }

    pub fn advance(&mut self, seconds: u64) {
        self.clock += seconds;
    }
}

impl LedgerAccess for LocalLedger {
    fn view(&self) -> &NodeState {
        &self.state
    }

    fn publish(&mut self, txn: LedgerTransaction) -> Result<(), PublishError> {
        self.state.apply(&txn).map_err(PublishError::Rejected)?;
        let ts = self.clock.max(self.chain.head().timestamp);
        self.chain
            .append_txns(vec![txn], ts)
            .map_err(|e| PublishError::NotCommitted(e.to_string()))?;
        Ok(())
    }

    fn now(&self) -> u64 {
        self.clock
    }
}

/// An institution acting through one relation of its wallet.
#[derive(Clone, Copy)]
pub struct Party<'a> {
    pub wallet: &'a Wallet,
    pub relation: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsentDecision {
    Grant,
    Decline,
    /// Consent is given but its proof is never published. Test hook.
    Unrecorded,
}

pub struct FlowRequest<'a> {
    pub requester: Party<'a>,
    pub provider: Party<'a>,
    /// Owner's relation with the requester; the presentation's holder DID.
    pub owner_requester_relation: &'a str,
    /// Owner's relation with the provider; the credential's subject DID.
    pub owner_provider_relation: &'a str,
    pub cred_def_id: Digest,
    /// What the provider knows about the owner, keyed by schema attribute.
    pub records: BTreeMap<String, Value>,
    pub requested: Vec<String>,
    pub purpose: String,
    pub consent: ConsentDecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowStep {
    RequesterAuth,
    ProviderAuth,
    Issue,
    Store,
    Consent,
    Present,
    Verify,
    RecordConsent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FlowFailure {
    Auth(AuthRejection),
    UnknownDid(String),
    Wallet(String),
    Credential(String),
    Store(StoreRejection),
    Declined,
    Verification(CredentialInvalid),
    Publish(PublishError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{step:?} failed: {failure:?}")]
pub struct FlowError {
    pub step: FlowStep,
    pub failure: FlowFailure,
}

fn fail<T>(step: FlowStep, failure: FlowFailure) -> Result<T, FlowError> {
    Err(FlowError { step, failure })
}

#[derive(Debug, Clone)]
pub struct FlowOutcome {
    pub credential: VerifiableCredential,
    pub presentation: Presentation,
    pub receipt: ConsentReceipt,
    pub consent_recorded: bool,
}

/// Called after the owner stores the issued credential and before it is
/// presented. Lets tests change the ledger mid-flow.
pub type AfterStore<'h> = &'h mut dyn FnMut(&VerifiableCredential, &mut dyn LedgerAccess);

/// Requester authenticates the owner, the owner authenticates with the
/// provider, the provider issues, the owner stores, consents, and presents,
/// the requester verifies, and finally the consent proof is published.
pub fn third_party_flow<R: RngCore + CryptoRng>(
    req: &FlowRequest<'_>,
    owner: &mut Wallet,
    ledger: &mut dyn LedgerAccess,
    rng: &mut R,
    after_store: Option<AfterStore<'_>>,
) -> Result<FlowOutcome, FlowError> {
    use FlowFailure as F;
    use FlowStep as S;
    let wallet_err = |step| move |e: crate::wallet::WalletError| FlowError {
        step,
        failure: F::Wallet(e.to_string()),
    };

    let requester = req.requester.wallet.identity(req.requester.relation).map_err(wallet_err(S::RequesterAuth))?;
    let provider = req.provider.wallet.identity(req.provider.relation).map_err(wallet_err(S::ProviderAuth))?;

    for (step, verifier_did, relation) in [
        (S::RequesterAuth, &requester.did, req.owner_requester_relation),
        (S::ProviderAuth, &provider.did, req.owner_provider_relation),
    ] {
        let subject_did = owner.relation(relation).map_err(wallet_err(step))?.did.clone();
        let Some(doc) = ledger.view().resolve_did(&subject_did) else {
            return fail(step, F::UnknownDid(subject_did));
        };
        let key = doc.agreement_key;
        let mut verifier = ChallengeVerifier::new(verifier_did.clone());
        let now = ledger.now();
        let challenge = verifier
            .issue_challenge(&key, DEFAULT_CHALLENGE_TTL, now, rng)
            .map_err(|e| FlowError { step, failure: F::Wallet(e.to_string()) })?;
        let response = owner.respond_challenge(relation, &challenge.ciphertext).map_err(wallet_err(step))?;
        if let AuthOutcome::Rejected(r) = verifier.check_response(&challenge.challenge_id, &response, ledger.now()) {
            return fail(step, F::Auth(r));
        }
    }

    let view = ledger.view();
    let Some(cred_def) = view.cred_def(&req.cred_def_id).cloned() else {
        return fail(S::Issue, F::Credential("unknown credential definition".into()));
    };
    let Some(schema) = view.schema(&cred_def.body.schema_id).cloned() else {
        return fail(S::Issue, F::Credential("unknown schema".into()));
    };
    let subject_did = owner.relation(req.owner_provider_relation).map_err(wallet_err(S::Issue))?.did.clone();
    let credential = issue(
        &provider.signing,
        &cred_def,
        &schema,
        &subject_did,
        req.records.clone(),
        ledger.now(),
    )
    .map_err(|e| FlowError { step: S::Issue, failure: F::Credential(e.to_string()) })?;

    if let Err(r) = owner.store_credential(credential.clone(), ledger.view(), ledger.now()) {
        return fail(S::Store, F::Store(r));
    }
    if let Some(hook) = after_store {
        hook(&credential, ledger);
    }

    let mut shared = Vec::with_capacity(req.requested.len());
    for name in &req.requested {
        match schema.attribute(name) {
            Some(spec) => shared.push(spec.clone()),
            None => return fail(S::Consent, F::Credential(format!("attribute {name:?} is not offered"))),
        }
    }
    if req.consent == ConsentDecision::Decline {
        return fail(S::Consent, F::Declined);
    }
    let owner_id = owner.identity(req.owner_requester_relation).map_err(wallet_err(S::Consent))?;
    let mut receipt = ConsentReceipt::draft(&owner_id.did, &requester.did, shared, &req.purpose, ledger.now());
    receipt
        .sign(&owner_id)
        .and_then(|_| receipt.sign(&requester))
        .map_err(|e| FlowError { step: S::Consent, failure: F::Wallet(e.to_string()) })?;

    let presentation = present(
        owner,
        req.owner_requester_relation,
        std::slice::from_ref(&credential),
        &requester.did,
        ledger.now(),
    )
    .map_err(|e| FlowError { step: S::Present, failure: F::Credential(e.to_string()) })?;

    if let Verdict::Invalid(reason) = verify_presentation(&presentation, ledger.view(), &requester.did, ledger.now()) {
        return fail(S::Verify, F::Verification(reason));
    }
    if presentation.credentials[0].cred_def_id != req.cred_def_id
        || req.requested.iter().any(|a| !presentation.credentials[0].attributes.contains_key(a))
    {
        return fail(S::Verify, F::Verification(CredentialInvalid::SchemaMismatch));
    }

    let consent_recorded = req.consent == ConsentDecision::Grant;
    if consent_recorded {
        let txn = consent_transaction(&receipt, &owner_id, ledger.now())
            .map_err(|e| FlowError { step: S::RecordConsent, failure: F::Wallet(e.to_string()) })?;
        ledger.publish(txn).map_err(|e| FlowError { step: S::RecordConsent, failure: F::Publish(e) })?;
    }
    Ok(FlowOutcome {
        credential,
        presentation,
        receipt,
        consent_recorded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credential::revoke;
    use crate::state::{txn, AttributeSpec, AttributeType, CredDefBody, SchemaBody};
    use crate::wallet::{create_wallet, KdfParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use serde_json::json;

    struct World {
        bank_a: Wallet,
        bank_b: Wallet,
        alice: Wallet,
        cred_def_id: Digest,
        rng: ChaCha8Rng,
    }

    fn world() -> (World, LocalLedger) {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ledger = LocalLedger::new(1_000);
        let mut bank_a = create_wallet("bank-a", b"a", KdfParams::fast(&mut rng)).unwrap();
        let mut bank_b = create_wallet("bank-b", b"b", KdfParams::fast(&mut rng)).unwrap();
        let mut alice = create_wallet("alice", b"c", KdfParams::fast(&mut rng)).unwrap();
        bank_a.new_pairwise("public", &[1u8; 32]).unwrap();
        bank_b.new_pairwise("public", &[2u8; 32]).unwrap();
        alice.new_pairwise("bank-a", &[3u8; 32]).unwrap();
        alice.new_pairwise("bank-b", &[3u8; 32]).unwrap();
        let a = bank_a.identity("public").unwrap();
        for id in [
            a.clone(),
            bank_b.identity("public").unwrap(),
            alice.identity("bank-a").unwrap(),
            alice.identity("bank-b").unwrap(),
        ] {
            ledger.publish(id.did_reg(1_000)).unwrap();
        }
        let schema = SchemaBody {
            name: "credit".into(),
            version: "1.0".into(),
            attributes: vec![AttributeSpec::new("credit_score", AttributeType::Integer)],
        };
        ledger.publish(txn::schema(&schema, &a.did, &a.signing, 1_000).unwrap()).unwrap();
        let cd = CredDefBody {
            schema_id: schema.id(),
            issuer_did: a.did.clone(),
            issuer_verification_key: a.signing.public(),
            tag: "v1".into(),
        };
        ledger.publish(txn::cred_def(&cd, &a.signing, 1_000).unwrap()).unwrap();
        let w = World {
            bank_a,
            bank_b,
            alice,
            cred_def_id: cd.id(),
            rng,
        };
        (w, ledger)
    }

    fn request<'a>(w: &'a World, consent: ConsentDecision) -> FlowRequest<'a> {
        FlowRequest {
            requester: Party {
                wallet: &w.bank_b,
                relation: "public",
            },
            provider: Party {
                wallet: &w.bank_a,
                relation: "public",
            },
            owner_requester_relation: "bank-b",
            owner_provider_relation: "bank-a",
            cred_def_id: w.cred_def_id,
            records: BTreeMap::from([("credit_score".to_string(), json!(731_977))]),
            requested: vec!["credit_score".into()],
            purpose: "loan application".into(),
            consent,
        }
    }

    #[test]
    fn loan_flow_records_consent() {
        let (w, mut ledger) = world();
        let mut alice = w.alice.clone();
        let mut rng = w.rng.clone();
        let before = ledger.chain.txn_count();
        let out = third_party_flow(&request(&w, ConsentDecision::Grant), &mut alice, &mut ledger, &mut rng, None).unwrap();
        assert!(out.consent_recorded);
        assert!(out.receipt.matches_ledger(&ledger.state));
        assert_eq!(ledger.chain.txn_count(), before + 1);
        assert!(!ledger.chain.to_jsonl().contains("731977"));
        assert_eq!(alice.credentials.len(), 1);
    }

    #[test]
    fn declined_consent_leaves_ledger_untouched() {
        let (w, mut ledger) = world();
        let mut alice = w.alice.clone();
        let mut rng = w.rng.clone();
        let digest = ledger.chain.digest();
        let err = third_party_flow(&request(&w, ConsentDecision::Decline), &mut alice, &mut ledger, &mut rng, None)
            .unwrap_err();
        assert_eq!(err.step, FlowStep::Consent);
        assert_eq!(err.failure, FlowFailure::Declined);
        assert_eq!(ledger.chain.digest(), digest);
    }

    #[test]
    fn revoked_mid_flow() {
        let (w, mut ledger) = world();
        let mut alice = w.alice.clone();
        let mut rng = w.rng.clone();
        let issuer = w.bank_a.identity("public").unwrap();
        let mut hook = |cred: &VerifiableCredential, ledger: &mut dyn LedgerAccess| {
            let cd = ledger.view().cred_def(&cred.cred_def_id).unwrap().clone();
            let t = revoke(&issuer.signing, &cd, &[cred.credential_hash], ledger.now()).unwrap();
            ledger.publish(t).unwrap();
        };
        let err = third_party_flow(
            &request(&w, ConsentDecision::Grant),
            &mut alice,
            &mut ledger,
            &mut rng,
            Some(&mut hook),
        )
        .unwrap_err();
        assert_eq!(err.step, FlowStep::Verify);
        assert_eq!(err.failure, FlowFailure::Verification(CredentialInvalid::Revoked));
    }

    #[test]
    fn unregistered_owner_fails_authentication() {
        let (w, mut ledger) = world();
        let mut alice = w.alice.clone();
        alice.new_pairwise("unregistered", &[9u8; 32]).unwrap();
        let mut rng = w.rng.clone();
        let mut req = request(&w, ConsentDecision::Grant);
        req.owner_requester_relation = "unregistered";
        let err = third_party_flow(&req, &mut alice, &mut ledger, &mut rng, None).unwrap_err();
        assert_eq!(err.step, FlowStep::RequesterAuth);
        assert!(matches!(err.failure, FlowFailure::UnknownDid(_)));
    }

    #[test]
    fn local_ledger_round_trip() {
        let (_, ledger) = world();
        let dir = std::env::temp_dir().join(format!("ssi-flow-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.ledger.jsonl");
        ledger.save(&path).unwrap();
        let back = LocalLedger::load(&path).unwrap();
        assert_eq!(back.state.digest(), ledger.state.digest());
        assert_eq!(back.chain.digest(), ledger.chain.digest());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
