//! Hashing, key derivation, signatures and nonces for the LLV1 profile.
//!
//! LLV1 fixes SHA-256 as the hash and Ed25519 for signatures. Every value
//! that crosses a module boundary is a fixed-width byte newtype rendered as
//! lowercase hex without prefix.

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Version tag of the hash/signature/encoding profile.
pub const PROFILE_VERSION: &str = "LLV1";

const KEY_DERIVATION_TAG: &[u8] = b"LLV1-KEY";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("invalid hex: {0}")]
    Hex(String),
    #[error("invalid mnemonic: {0}")]
    Mnemonic(String),
    #[error("entropy source failure: {0}")]
    Entropy(String),
}

macro_rules! hex_newtype {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name([u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub const fn from_bytes(bytes: [u8; $len]) -> Self {
                Self(bytes)
            }

            pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
                let arr: [u8; $len] = bytes.try_into().map_err(|_| CryptoError::Length {
                    expected: $len,
                    actual: bytes.len(),
                })?;
                Ok(Self(arr))
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
                let bytes = hex::decode(s).map_err(|e| CryptoError::Hex(e.to_string()))?;
                Self::from_slice(&bytes)
            }
        }

        impl AsRef<[u8]> for $name {
            fn as_ref(&self) -> &[u8] {
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

        impl FromStr for $name {
            type Err = CryptoError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::from_hex(s)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_newtype!(
    /// A SHA-256 digest.
    Hash256,
    32
);
hex_newtype!(
    /// Per-stage random nonce. Only ever published at tally reveal time.
    Nonce,
    32
);
hex_newtype!(
    /// Ed25519 verification key bytes.
    PublicKey,
    32
);
hex_newtype!(
    /// Ed25519 signature bytes.
    Signature,
    64
);

/// Hashes an arbitrary byte string.
pub fn hash(message: &[u8]) -> Hash256 {
    Hash256(Sha256::digest(message).into())
}

/// `hash(left || right)` over the fixed 64-byte concatenation.
pub fn hash_pair(left: &Hash256, right: &Hash256) -> Hash256 {
    let mut hasher = Sha256::new();
    hasher.update(left.0);
    hasher.update(right.0);
    Hash256(hasher.finalize().into())
}

/// 32-byte master seed, optionally rendered as a 24-word BIP-39 mnemonic.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seed(Hash256);

impl Seed {
    pub fn from_entropy(entropy: [u8; 32]) -> Self {
        Seed(Hash256(entropy))
    }

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut entropy = [0u8; 32];
        rng.fill_bytes(&mut entropy);
        Seed::from_entropy(entropy)
    }

    pub fn entropy(&self) -> &[u8; 32] {
        self.0.as_bytes()
    }

    pub fn to_mnemonic(&self) -> String {
        bip39::Mnemonic::from_entropy(self.entropy())
            .expect("32 bytes is a valid mnemonic entropy length")
            .to_string()
    }

    pub fn from_mnemonic(phrase: &str) -> Result<Self, CryptoError> {
        let mnemonic = bip39::Mnemonic::parse_normalized(phrase)
            .map_err(|e| CryptoError::Mnemonic(e.to_string()))?;
        let entropy = mnemonic.to_entropy();
        let entropy: [u8; 32] = entropy.as_slice().try_into().map_err(|_| {
            CryptoError::Mnemonic(format!("expected 24 words, got {}", mnemonic.word_count()))
        })?;
        Ok(Seed::from_entropy(entropy))
    }
}

impl fmt::Debug for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Seed(..)")
    }
}

/// An Ed25519 key pair derived from a seed at a given index.
#[derive(Clone)]
pub struct KeyPair {
    index: u32,
    public_key: PublicKey,
    signing: SigningKey,
}

impl KeyPair {
    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn public_key(&self) -> PublicKey {
        self.public_key
    }

    pub fn sign(&self, payload: &[u8]) -> Signature {
        Signature(self.signing.sign(payload).to_bytes())
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    /// Rebuilds a pair from raw secret bytes (index is caller-supplied metadata).
    pub fn from_secret(index: u32, secret: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&secret);
        let public_key = PublicKey(signing.verifying_key().to_bytes());
        KeyPair {
            index,
            public_key,
            signing,
        }
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("index", &self.index)
            .field("public_key", &self.public_key)
            .finish_non_exhaustive()
    }
}

/// Flat deterministic derivation: `sk = SHA-256("LLV1-KEY" || seed || index_be32)`.
pub fn derive_keypair(seed: &Seed, index: u32) -> KeyPair {
    let mut hasher = Sha256::new();
    hasher.update(KEY_DERIVATION_TAG);
    hasher.update(seed.entropy());
    hasher.update(index.to_be_bytes());
    KeyPair::from_secret(index, hasher.finalize().into())
}

pub fn sign(keypair: &KeyPair, payload: &[u8]) -> Signature {
    keypair.sign(payload)
}

/// Strict Ed25519 verification. Keys that are not valid curve points never verify.
pub fn verify(public_key: &PublicKey, payload: &[u8], signature: &Signature) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(&public_key.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    key.verify(payload, &sig).is_ok()
}

/// Byte-slice entry point for untrusted encodings.
pub fn verify_encoded(public_key: &[u8], payload: &[u8], signature: &[u8]) -> Result<bool, CryptoError> {
    let pk = PublicKey::from_slice(public_key)?;
    let sig = Signature::from_slice(signature)?;
    Ok(verify(&pk, payload, &sig))
}

/// Nonce entropy profile.
///
/// `Toy8` keeps only one random byte so brute-force attacks on the hiding
/// property become feasible. It exists for positive-control experiments
/// and is refused by every persistence path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonceProfile {
    #[default]
    Full,
    Toy8,
}

impl NonceProfile {
    pub fn is_toy(self) -> bool {
        matches!(self, NonceProfile::Toy8)
    }
}

impl Nonce {
    /// The toy-profile nonce with the given single byte of entropy.
    pub const fn toy(byte: u8) -> Nonce {
        let mut bytes = [0u8; 32];
        bytes[0] = byte;
        Nonce(bytes)
    }
}

pub fn gen_nonce<R: RngCore + ?Sized>(rng: &mut R) -> Nonce {
    let mut bytes = [0u8; 32];
    rng.fill_bytes(&mut bytes);
    Nonce(bytes)
}

pub fn gen_nonce_with<R: RngCore + ?Sized>(profile: NonceProfile, rng: &mut R) -> Nonce {
    match profile {
        NonceProfile::Full => gen_nonce(rng),
        NonceProfile::Toy8 => {
            let mut b = [0u8; 1];
            rng.fill_bytes(&mut b);
            Nonce::toy(b[0])
        }
    }
}

/// Draws a nonce from OS entropy.
pub fn gen_nonce_os() -> Result<Nonce, CryptoError> {
    let mut bytes = [0u8; 32];
    rand::rngs::OsRng
        .try_fill_bytes(&mut bytes)
        .map_err(|e| CryptoError::Entropy(e.to_string()))?;
    Ok(Nonce(bytes))
}
