//! Hashing, signatures and public-key encryption.
//!
//! Signatures are Ed25519 (deterministic, 64-byte signatures over 32-byte
//! keys). Encryption to a public key is a sealed box: an ephemeral X25519
//! key agreement, HKDF-SHA256 key derivation and ChaCha20-Poly1305. Every
//! byte-string newtype renders as lowercase hex in files.

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signer, Verifier};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use zeroize::Zeroizing;

/// Largest plaintext accepted by [`encrypt_to`].
pub const MAX_SEALED_PLAINTEXT: usize = 4096;

const SEALED_BOX_INFO: &[u8] = b"ssi-sealed-box-v1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("seed must be 32 bytes, got {0}")]
    InvalidSeed(usize),
    #[error("malformed key material")]
    InvalidKey,
    #[error("plaintext of {len} bytes exceeds the {max}-byte limit")]
    PlaintextTooLarge { len: usize, max: usize },
    #[error("decryption failed")]
    DecryptFailed,
    #[error("invalid hex: {0}")]
    InvalidHex(String),
}

macro_rules! hex_bytes {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
                let arr: [u8; $len] = bytes.try_into().map_err(|_| CryptoError::InvalidKey)?;
                Ok(Self(arr))
            }

            pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
                let bytes = hex::decode(s).map_err(|e| CryptoError::InvalidHex(e.to_string()))?;
                let arr: [u8; $len] = bytes.as_slice().try_into().map_err(|_| {
                    CryptoError::InvalidHex(format!("expected {} bytes, got {}", $len, bytes.len()))
                })?;
                Ok(Self(arr))
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_bytes!(
    /// A SHA-256 output.
    Digest,
    32
);
hex_bytes!(
    /// Ed25519 public key.
    VerificationKey,
    32
);
hex_bytes!(Signature, 64);
hex_bytes!(
    /// X25519 public key used as a sealed-box recipient.
    AgreementKey,
    32
);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);
}

pub fn sha256(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// `sha256(left || right)`, the Merkle interior-node hash.
pub fn sha256_pair(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update(left.0);
    h.update(right.0);
    Digest(h.finalize().into())
}

/// Ed25519 signing key together with its public half.
#[derive(Clone)]
pub struct SigningKeyPair {
    public: VerificationKey,
    secret: ed25519_dalek::SigningKey,
}

impl SigningKeyPair {
    pub fn public(&self) -> VerificationKey {
        self.public
    }

    /// The 32-byte private seed. Callers own the zeroization of the copy.
    pub fn secret_bytes(&self) -> Zeroizing<[u8; 32]> {
        Zeroizing::new(self.secret.to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.secret.sign(message).to_bytes())
    }
}

impl fmt::Debug for SigningKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

/// Deterministically derives a signing keypair from 32 bytes of entropy.
pub fn generate_signing_keypair(seed: &[u8]) -> Result<SigningKeyPair, CryptoError> {
    let seed: [u8; 32] = seed.try_into().map_err(|_| CryptoError::InvalidSeed(seed.len()))?;
    let secret = ed25519_dalek::SigningKey::from_bytes(&seed);
    Ok(SigningKeyPair {
        public: VerificationKey(secret.verifying_key().to_bytes()),
        secret,
    })
}

/// Signs with raw private-key bytes.
pub fn sign(private: &[u8], message: &[u8]) -> Result<Signature, CryptoError> {
    let seed: [u8; 32] = private.try_into().map_err(|_| CryptoError::InvalidKey)?;
    Ok(Signature(
        ed25519_dalek::SigningKey::from_bytes(&seed)
            .sign(message)
            .to_bytes(),
    ))
}

/// Total: malformed keys or signatures simply fail verification.
pub fn verify(key: &VerificationKey, message: &[u8], sig: &Signature) -> bool {
    let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&key.0) else {
        return false;
    };
    vk.verify(message, &ed25519_dalek::Signature::from_bytes(&sig.0))
        .is_ok()
}

/// Like [`verify`] but over raw byte slices of any length.
pub fn verify_raw(key: &[u8], message: &[u8], sig: &[u8]) -> bool {
    match (VerificationKey::from_slice(key), Signature::from_slice(sig)) {
        (Ok(k), Ok(s)) => verify(&k, message, &s),
        _ => false,
    }
}

/// X25519 keypair for receiving sealed boxes.
#[derive(Clone)]
pub struct EncryptionKeyPair {
    public: AgreementKey,
    secret: x25519_dalek::StaticSecret,
}

impl EncryptionKeyPair {
    pub fn from_seed(seed: &[u8]) -> Result<Self, CryptoError> {
        let seed: [u8; 32] = seed.try_into().map_err(|_| CryptoError::InvalidSeed(seed.len()))?;
        let secret = x25519_dalek::StaticSecret::from(seed);
        Ok(Self {
            public: AgreementKey(x25519_dalek::PublicKey::from(&secret).to_bytes()),
            secret,
        })
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut seed = Zeroizing::new([0u8; 32]);
        rng.fill_bytes(seed.as_mut());
        Self::from_seed(seed.as_ref()).expect("32-byte seed")
    }

    pub fn public(&self) -> AgreementKey {
        self.public
    }

    pub fn secret_bytes(&self) -> Zeroizing<[u8; 32]> {
        Zeroizing::new(self.secret.to_bytes())
    }
}

impl fmt::Debug for EncryptionKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EncryptionKeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

fn sealed_box_cipher(shared: &[u8; 32], ephemeral: &[u8; 32], recipient: &[u8; 32]) -> ChaCha20Poly1305 {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(ephemeral);
    salt[32..].copy_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut key = Zeroizing::new([0u8; 32]);
    hk.expand(SEALED_BOX_INFO, key.as_mut())
        .expect("32 bytes is a valid HKDF length");
    ChaCha20Poly1305::new(Key::from_slice(key.as_ref()))
}

/// Encrypts `plaintext` so only the holder of `key`'s private half can read
/// it. Output layout: `ephemeral_public (32) || ciphertext || tag (16)`.
pub fn encrypt_to<R: RngCore + CryptoRng>(
    key: &AgreementKey,
    plaintext: &[u8],
    rng: &mut R,
) -> Result<Vec<u8>, CryptoError> {
    if plaintext.len() > MAX_SEALED_PLAINTEXT {
        return Err(CryptoError::PlaintextTooLarge {
            len: plaintext.len(),
            max: MAX_SEALED_PLAINTEXT,
        });
    }
    let recipient = x25519_dalek::PublicKey::from(key.0);
    let ephemeral = x25519_dalek::EphemeralSecret::random_from_rng(&mut *rng);
    let ephemeral_public = x25519_dalek::PublicKey::from(&ephemeral).to_bytes();
    let shared = ephemeral.diffie_hellman(&recipient);
    if !shared.was_contributory() {
        return Err(CryptoError::InvalidKey);
    }
    // The key is fresh per message, so a fixed nonce is never reused.
    let cipher = sealed_box_cipher(shared.as_bytes(), &ephemeral_public, &key.0);
    let body = cipher
        .encrypt(Nonce::from_slice(&[0u8; 12]), plaintext)
        .map_err(|_| CryptoError::InvalidKey)?;
    let mut out = Vec::with_capacity(32 + body.len());
    out.extend_from_slice(&ephemeral_public);
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decrypt_from(key: &EncryptionKeyPair, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < 32 + 16 {
        return Err(CryptoError::DecryptFailed);
    }
    let (eph, body) = ciphertext.split_at(32);
    let eph: [u8; 32] = eph.try_into().expect("split at 32");
    let shared = key.secret.diffie_hellman(&x25519_dalek::PublicKey::from(eph));
    if !shared.was_contributory() {
        return Err(CryptoError::DecryptFailed);
    }
    sealed_box_cipher(shared.as_bytes(), &eph, &key.public.0)
        .decrypt(Nonce::from_slice(&[0u8; 12]), body)
        .map_err(|_| CryptoError::DecryptFailed)
}
