//! The identity owner's wallet.
//!
//! One pairwise DID per relation. Private keys are sealed per relation under
//! a key derived from an Argon2id key-encryption key, so the file holds no
//! plaintext key material and one relation's key never opens another's blob.

use std::collections::BTreeMap;
use std::path::Path;

use argon2::{Algorithm, Argon2, Params, Version};
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest as _, Sha256};
use zeroize::Zeroizing;

use crate::canonical::to_canonical;
use crate::crypto::{decrypt_from, generate_signing_keypair, CryptoError, EncryptionKeyPair, SigningKeyPair};
use crate::credential::{verify_credential, CredentialInvalid, VerifiableCredential, Verdict};
use crate::ledger::LedgerTransaction;
use crate::state::{txn, DidDocument, NodeState};

pub const WALLET_EXTENSION: &str = ".wallet.json";
pub const WALLET_FORMAT: &str = "ssi-wallet/1";

const CHECK_PLAINTEXT: &[u8] = b"ssi-wallet-check";
const NONCE_LEN: usize = 12;

#[derive(Debug, thiserror::Error)]
pub enum WalletError {
    #[error("unlock secret must not be empty")]
    WeakSecret,
    #[error("wrong unlock secret")]
    UnlockFailed,
    #[error("wallet is locked")]
    WalletLocked,
    #[error("relation {0:?} already exists")]
    RelationExists(String),
    #[error("no relation named {0:?}")]
    UnknownRelation(String),
    #[error("decryption failed")]
    DecryptFailed,
    #[error("invalid kdf parameters: {0}")]
    BadKdf(String),
    #[error("corrupt wallet file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<CryptoError> for WalletError {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::DecryptFailed => WalletError::DecryptFailed,
            other => WalletError::Corrupt(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreRejection {
    #[error("wallet is locked")]
    WalletLocked,
    #[error("issuer signature does not verify")]
    BadSignature,
    #[error("credential is revoked")]
    Revoked,
    #[error("issuer or credential definition not on the ledger")]
    UnknownIssuer,
    #[error("attributes do not match the schema")]
    SchemaMismatch,
}

/// Argon2id parameters stored next to the salt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdfParams {
    #[serde(with = "crate::b64")]
    pub salt: Vec<u8>,
    pub memory_kib: u32,
    pub iterations: u32,
    pub parallelism: u32,
}

impl KdfParams {
    /// Defaults for interactive use.
    pub fn interactive<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self::with_cost(rng, 19 * 1024, 2)
    }

    /// Cheap parameters for tests and simulations.
    pub fn fast<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self::with_cost(rng, 64, 1)
    }

    pub fn with_cost<R: RngCore + CryptoRng>(rng: &mut R, memory_kib: u32, iterations: u32) -> Self {
        let mut salt = vec![0u8; 16];
        rng.fill_bytes(&mut salt);
        Self {
            salt,
            memory_kib,
            iterations,
            parallelism: 1,
        }
    }

    fn derive(&self, secret: &[u8]) -> Result<Zeroizing<[u8; 32]>, WalletError> {
        let params = Params::new(self.memory_kib, self.iterations, self.parallelism, Some(32))
            .map_err(|e| WalletError::BadKdf(e.to_string()))?;
        let mut out = Zeroizing::new([0u8; 32]);
        Argon2::new(Algorithm::Argon2id, Version::V0x13, params)
            .hash_password_into(secret, &self.salt, out.as_mut())
            .map_err(|e| WalletError::BadKdf(e.to_string()))?;
        Ok(out)
    }
}

/// Public half of a relation plus its sealed private keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairwiseIdentity {
    pub did: String,
    pub document: DidDocument,
    #[serde(default)]
    pub peer_did: Option<String>,
    #[serde(with = "crate::b64")]
    sealed_keys: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredCredential {
    pub credential: VerifiableCredential,
    pub received_at: u64,
}

/// Decrypted keys for one relation.
#[derive(Debug, Clone)]
pub struct Identity {
    pub did: String,
    pub document: DidDocument,
    pub signing: SigningKeyPair,
    pub agreement: EncryptionKeyPair,
}

impl Identity {
    pub fn did_reg(&self, timestamp: u64) -> LedgerTransaction {
        txn::did_reg(&self.document, &self.signing, timestamp).expect("DID documents are canonicalizable")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wallet {
    pub format: String,
    pub owner_label: String,
    pub kdf_params: KdfParams,
    #[serde(with = "crate::b64")]
    key_check: Vec<u8>,
    pub relations: BTreeMap<String, PairwiseIdentity>,
    pub credentials: Vec<StoredCredential>,
    #[serde(skip)]
    kek: Option<Zeroizing<[u8; 32]>>,
}

pub fn create_wallet(owner_label: &str, unlock_secret: &[u8], kdf_params: KdfParams) -> Result<Wallet, WalletError> {
    if unlock_secret.is_empty() {
        return Err(WalletError::WeakSecret);
    }
    let kek = kdf_params.derive(unlock_secret)?;
    let key_check = seal(&subkey(&kek, b"ssi/check"), &[0u8; NONCE_LEN], CHECK_PLAINTEXT, b"")?;
    Ok(Wallet {
        format: WALLET_FORMAT.to_string(),
        owner_label: owner_label.to_string(),
        kdf_params,
        key_check,
        relations: BTreeMap::new(),
        credentials: Vec::new(),
        kek: Some(kek),
    })
}

impl Wallet {
    pub fn unlock(&mut self, unlock_secret: &[u8]) -> Result<(), WalletError> {
        let kek = self.kdf_params.derive(unlock_secret)?;
        match open(&subkey(&kek, b"ssi/check"), &self.key_check, b"") {
            Ok(pt) if pt.as_slice() == CHECK_PLAINTEXT => {
                self.kek = Some(kek);
                Ok(())
            }
            _ => Err(WalletError::UnlockFailed),
        }
    }

    pub fn lock(&mut self) {
        self.kek = None;
    }

    pub fn is_unlocked(&self) -> bool {
        self.kek.is_some()
    }

    fn kek(&self) -> Result<&[u8; 32], WalletError> {
        self.kek.as_deref().ok_or(WalletError::WalletLocked)
    }

    /// Creates the keys for `relation`. The seed is mixed with the relation
    /// name, so one seed never yields the same DID twice.
    pub fn new_pairwise(&mut self, relation: &str, seed: &[u8]) -> Result<(String, DidDocument), WalletError> {
        let kek = *self.kek()?;
        if self.relations.contains_key(relation) {
            return Err(WalletError::RelationExists(relation.to_string()));
        }
        let sign_seed = mix(b"ssi/sign", relation, seed);
        let agree_seed = mix(b"ssi/agree", relation, seed);
        let signing = generate_signing_keypair(sign_seed.as_ref())?;
        let agreement = EncryptionKeyPair::from_seed(agree_seed.as_ref())?;
        let document = DidDocument {
            verification_key: signing.public(),
            agreement_key: agreement.public(),
            endpoint: format!("sim://{}/{}", self.owner_label, relation),
            metadata: json!({}),
        };
        let did = document.did();

        let mut plaintext = Zeroizing::new([0u8; 64]);
        plaintext[..32].copy_from_slice(sign_seed.as_ref());
        plaintext[32..].copy_from_slice(agreement.secret_bytes().as_ref());
        let nonce_src = mix(b"ssi/nonce", relation, seed);
        let nonce: [u8; NONCE_LEN] = nonce_src[..NONCE_LEN].try_into().expect("12 bytes");
        let sealed_keys = seal(&relation_key(&kek, relation), &nonce, plaintext.as_ref(), did.as_bytes())?;

        self.relations.insert(
            relation.to_string(),
            PairwiseIdentity {
                did: did.clone(),
                document: document.clone(),
                peer_did: None,
                sealed_keys,
            },
        );
        Ok((did, document))
    }

    pub fn set_peer(&mut self, relation: &str, peer_did: &str) -> Result<(), WalletError> {
        let rel = self
            .relations
            .get_mut(relation)
            .ok_or_else(|| WalletError::UnknownRelation(relation.to_string()))?;
        rel.peer_did = Some(peer_did.to_string());
        Ok(())
    }

    pub fn relation(&self, relation: &str) -> Result<&PairwiseIdentity, WalletError> {
        self.relations
            .get(relation)
            .ok_or_else(|| WalletError::UnknownRelation(relation.to_string()))
    }

    pub fn relation_for_did(&self, did: &str) -> Option<&str> {
        self.relations
            .iter()
            .find(|(_, p)| p.did == did)
            .map(|(name, _)| name.as_str())
    }

    pub fn identity(&self, relation: &str) -> Result<Identity, WalletError> {
        let kek = self.kek()?;
        let rel = self.relation(relation)?;
        let plaintext = Zeroizing::new(open(&relation_key(kek, relation), &rel.sealed_keys, rel.did.as_bytes())?);
        if plaintext.len() != 64 {
            return Err(WalletError::Corrupt(format!("relation {relation:?} key blob")));
        }
        let signing = generate_signing_keypair(&plaintext[..32])?;
        let agreement = EncryptionKeyPair::from_seed(&plaintext[32..])?;
        if signing.public() != rel.document.verification_key || agreement.public() != rel.document.agreement_key {
            return Err(WalletError::Corrupt(format!("relation {relation:?} keys do not match document")));
        }
        Ok(Identity {
            did: rel.did.clone(),
            document: rel.document.clone(),
            signing,
            agreement,
        })
    }

    /// Decrypts a challenge addressed to `relation`'s agreement key.
    pub fn respond_challenge(&self, relation: &str, ciphertext: &[u8]) -> Result<Vec<u8>, WalletError> {
        let identity = self.identity(relation)?;
        Ok(decrypt_from(&identity.agreement, ciphertext)?)
    }

    /// Verifies the credential against the ledger before keeping it.
    pub fn store_credential(
        &mut self,
        credential: VerifiableCredential,
        ledger: &NodeState,
        now: u64,
    ) -> Result<(), StoreRejection> {
        if !self.is_unlocked() {
            return Err(StoreRejection::WalletLocked);
        }
        if ledger.resolve_did(&credential.issuer_did).is_none() {
            return Err(StoreRejection::UnknownIssuer);
        }
        match verify_credential(&credential, ledger, now) {
            Verdict::Valid => {}
            Verdict::Invalid(reason) => {
                return Err(match reason {
                    CredentialInvalid::UnknownCredDef => StoreRejection::UnknownIssuer,
                    CredentialInvalid::Revoked => StoreRejection::Revoked,
                    CredentialInvalid::SchemaMismatch => StoreRejection::SchemaMismatch,
                    _ => StoreRejection::BadSignature,
                })
            }
        }
        if !self
            .credentials
            .iter()
            .any(|s| s.credential.credential_hash == credential.credential_hash)
        {
            self.credentials.push(StoredCredential {
                credential,
                received_at: now,
            });
        }
        Ok(())
    }

    pub fn holds(&self, credential: &VerifiableCredential) -> bool {
        self.credentials.iter().any(|s| &s.credential == credential)
    }

    pub fn to_json(&self) -> String {
        let mut s = to_canonical(self)
            .expect("wallet serializes to canonical JSON")
            .as_str()
            .to_string();
        s.push('\n');
        s
    }

    /// Parses a wallet file. The result is locked.
    pub fn from_json(text: &str) -> Result<Self, WalletError> {
        let w: Wallet = serde_json::from_str(text).map_err(|e| WalletError::Corrupt(e.to_string()))?;
        if w.format != WALLET_FORMAT {
            return Err(WalletError::Corrupt(format!("unsupported format {:?}", w.format)));
        }
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<(), WalletError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, WalletError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn mix(domain: &[u8], relation: &str, seed: &[u8]) -> Zeroizing<[u8; 32]> {
    let mut h = Sha256::new();
    h.update(domain);
    h.update((relation.len() as u64).to_be_bytes());
    h.update(relation.as_bytes());
    h.update(seed);
    Zeroizing::new(h.finalize().into())
}

fn subkey(kek: &[u8; 32], info: &[u8]) -> Zeroizing<[u8; 32]> {
    let mut out = Zeroizing::new([0u8; 32]);
    Hkdf::<Sha256>::new(None, kek)
        .expand(info, out.as_mut())
        .expect("32 bytes is a valid HKDF length");
    out
}

fn relation_key(kek: &[u8; 32], relation: &str) -> Zeroizing<[u8; 32]> {
    let mut info = b"ssi/relation/".to_vec();
    info.extend_from_slice(relation.as_bytes());
    subkey(kek, &info)
}

fn seal(key: &[u8; 32], nonce: &[u8; NONCE_LEN], plaintext: &[u8], aad: &[u8]) -> Result<Vec<u8>, WalletError> {
    let ct = ChaCha20Poly1305::new(Key::from_slice(key))
        .encrypt(Nonce::from_slice(nonce), Payload { msg: plaintext, aad })
        .map_err(|_| WalletError::Corrupt("encryption failed".into()))?;
    let mut out = nonce.to_vec();
    out.extend_from_slice(&ct);
    Ok(out)
}

fn open(key: &[u8; 32], blob: &[u8], aad: &[u8]) -> Result<Vec<u8>, WalletError> {
    if blob.len() < NONCE_LEN {
        return Err(WalletError::DecryptFailed);
    }
    let (nonce, ct) = blob.split_at(NONCE_LEN);
    ChaCha20Poly1305::new(Key::from_slice(key))
        .decrypt(Nonce::from_slice(nonce), Payload { msg: ct, aad })
        .map_err(|_| WalletError::DecryptFailed)
}
