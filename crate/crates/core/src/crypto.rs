//! SHA-256 digests and Ed25519 signing.
//!
//! Thin wrappers over `sha2` and `ed25519-dalek` that pin the formats the
//! rest of the crate relies on: 32-byte digests rendered as 64 lowercase hex
//! chars, 32-byte public keys, 64-byte signatures.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// A 256-bit hash value.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest([u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Digest(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        if s.len() != 64 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(CryptoError::BadDigest);
        }
        let raw = hex::decode(s).map_err(|_| CryptoError::BadDigest)?;
        let mut out = [0u8; 32];
        out.copy_from_slice(&raw);
        Ok(Digest(out))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

pub fn sha256(bytes: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update(bytes);
    Digest(h.finalize().into())
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum CryptoError {
    #[error("digest must be 64 lowercase hex characters")]
    BadDigest,
    #[error("public key must be 32 bytes of valid curve data")]
    BadPublicKey,
    #[error("signature must be 64 bytes")]
    BadSignature,
}

/// An Ed25519 verification key.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PublicKey(VerifyingKey);

impl PublicKey {
    pub fn from_bytes(bytes: &[u8; 32]) -> Result<Self, CryptoError> {
        VerifyingKey::from_bytes(bytes)
            .map(PublicKey)
            .map_err(|_| CryptoError::BadPublicKey)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        // Only the canonical lowercase spelling is accepted, so every key
        // has exactly one encoding.
        if s.len() != 64 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(CryptoError::BadPublicKey);
        }
        let raw = hex::decode(s).map_err(|_| CryptoError::BadPublicKey)?;
        let bytes: [u8; 32] = raw.try_into().map_err(|_| CryptoError::BadPublicKey)?;
        Self::from_bytes(&bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0.to_bytes())
    }

    pub fn verify(&self, message: &[u8], signature: &Signature) -> bool {
        self.0.verify(message, &signature.0).is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &self.to_hex()[..12])
    }
}

/// A detached Ed25519 signature.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(ed25519_dalek::Signature);

impl Signature {
    pub fn from_bytes(bytes: &[u8; 64]) -> Self {
        Signature(ed25519_dalek::Signature::from_bytes(bytes))
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        // Lowercase-only, like Digest: a mixed-case alias of the same
        // signature must not decode, or stored blocks would have more
        // than one byte representation.
        if s.len() != 128 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(CryptoError::BadSignature);
        }
        let raw = hex::decode(s).map_err(|_| CryptoError::BadSignature)?;
        let bytes: [u8; 64] = raw.try_into().map_err(|_| CryptoError::BadSignature)?;
        Ok(Self::from_bytes(&bytes))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0.to_bytes())
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", &self.to_hex()[..12])
    }
}

/// An Ed25519 signing key together with its public half.
#[derive(Clone)]
pub struct Keypair {
    signing: SigningKey,
}

impl Keypair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Keypair {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    /// Deterministic keypair derived from a participant id.
    ///
    /// Simulated participants and frozen test vectors all use this
    /// derivation so that runs are reproducible and scenario files need no
    /// key material. A real deployment would provision keys out of band and
    /// register only the public halves.
    pub fn derived(id: &str) -> Self {
        let seed = sha256(format!("recledger-test-key:{id}").as_bytes());
        Self::from_seed(*seed.as_bytes())
    }

    pub fn public(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key())
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message))
    }
}
