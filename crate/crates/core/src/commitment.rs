//! Unit identifiers as fixed-shape Merkle roots.
//!
//! ```text
//!             unit_id
//!            /       \
//!        inner        prev unit id
//!       /     \
//!    H(n)    H(pk)
//! ```
//!
//! The chain step hashes the predecessor identifier directly, so a unit's
//! identifier is the root over its own stage and every earlier stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::crypto::{hash, hash_pair, CryptoError, Hash256, Nonce, PublicKey};

/// Identifier of one voting-power unit at one stage of its evolution.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitId(pub Hash256);

impl UnitId {
    pub fn as_hash(&self) -> &Hash256 {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        Hash256::from_hex(s).map(UnitId)
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Debug for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "UnitId({})", &self.0.to_hex()[..12])
    }
}

impl FromStr for UnitId {
    type Err = CryptoError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UnitId::from_hex(s)
    }
}

/// `H(h_n || h_p)`: the stage's own subtree root.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InnerCommitment(pub Hash256);

/// The hashed leaves of one stage.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct StageSecrets {
    pub nonce_hash: Hash256,
    pub pubkey_hash: Hash256,
}

impl StageSecrets {
    pub fn new(nonce: &Nonce, public_key: &PublicKey) -> Self {
        StageSecrets {
            nonce_hash: hash(nonce.as_bytes()),
            pubkey_hash: hash(public_key.as_bytes()),
        }
    }

    pub fn inner(&self) -> InnerCommitment {
        inner_commitment(&self.nonce_hash, &self.pubkey_hash)
    }
}

/// Output of [`compute_stage`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Stage {
    pub secrets: StageSecrets,
    pub inner: InnerCommitment,
    pub id: UnitId,
}

pub fn inner_commitment(nonce_hash: &Hash256, pubkey_hash: &Hash256) -> InnerCommitment {
    InnerCommitment(hash_pair(nonce_hash, pubkey_hash))
}

pub fn unit_id(inner: &InnerCommitment, prev: &UnitId) -> UnitId {
    UnitId(hash_pair(&inner.0, &prev.0))
}

/// The identifier of an unowned unit: `H(H(0) || H(0))` with `0` as one zero byte.
pub fn genesis_placeholder() -> UnitId {
    let h0 = hash(&[0u8]);
    UnitId(hash_pair(&h0, &h0))
}

pub fn compute_stage(nonce: &Nonce, public_key: &PublicKey, prev: &UnitId) -> Stage {
    let secrets = StageSecrets::new(nonce, public_key);
    let inner = secrets.inner();
    Stage {
        secrets,
        inner,
        id: unit_id(&inner, prev),
    }
}

/// Recomputes `claimed` from the public parts of a stage.
pub fn verify_stage(nonce_hash: &Hash256, public_key: &PublicKey, prev: &UnitId, claimed: &UnitId) -> bool {
    let inner = inner_commitment(nonce_hash, &hash(public_key.as_bytes()));
    unit_id(&inner, prev) == *claimed
}

/// Root of a general binary Merkle tree over `leaves`.
///
/// Leaves are hashed first; a level with an odd node count pairs its last
/// node with itself. Returns `None` for an empty input.
pub fn merkle_root<L: AsRef<[u8]>>(leaves: &[L]) -> Option<Hash256> {
    if leaves.is_empty() {
        return None;
    }
    let mut level: Vec<Hash256> = leaves.iter().map(|l| hash(l.as_ref())).collect();
    if level.len() == 1 {
        // a lone leaf still gets one node above it, matching the odd-pair rule
        return Some(hash_pair(&level[0], &level[0]));
    }
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| hash_pair(&pair[0], pair.get(1).unwrap_or(&pair[0])))
            .collect();
    }
    Some(level[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{derive_keypair, gen_nonce, Seed};
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashSet;

    fn random_hash(rng: &mut ChaCha20Rng) -> Hash256 {
        let mut b = [0u8; 32];
        rng.fill_bytes(&mut b);
        Hash256::from_bytes(b)
    }

    /// Hand-rolled byte concatenation, independent of `hash_pair`.
    fn h2(a: &[u8], b: &[u8]) -> Hash256 {
        let mut v = a.to_vec();
        v.extend_from_slice(b);
        hash(&v)
    }

    #[test]
    fn inner_commitment_is_ordered() {
        let a = hash(b"n");
        let b = hash(b"p");
        assert_eq!(inner_commitment(&a, &b), inner_commitment(&a, &b));
        assert_ne!(inner_commitment(&a, &b), inner_commitment(&b, &a));
        assert_eq!(inner_commitment(&a, &b).0, h2(a.as_bytes(), b.as_bytes()));
    }

    #[test]
    fn unit_id_depends_on_prev() {
        let inner = inner_commitment(&hash(b"n"), &hash(b"p"));
        let p1 = UnitId(hash(b"p1"));
        let p2 = UnitId(hash(b"p2"));
        assert_ne!(unit_id(&inner, &p1), unit_id(&inner, &p2));
    }

    #[test]
    fn unit_id_has_no_observed_fixed_point() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let inner = InnerCommitment(random_hash(&mut rng));
            let prev = UnitId(random_hash(&mut rng));
            assert_ne!(unit_id(&inner, &prev), prev);
        }
    }

    #[test]
    fn genesis_placeholder_matches_manual_composition() {
        let h0 = hash(&[0x00]);
        let manual = h2(h0.as_bytes(), h0.as_bytes());
        assert_eq!(genesis_placeholder().0, manual);
        assert_eq!(genesis_placeholder(), genesis_placeholder());
        assert_ne!(genesis_placeholder().0, hash(b""));
    }

    #[test]
    fn compute_stage_is_definitional() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let pk = derive_keypair(&Seed::from_entropy([1; 32]), 0).public_key();
        let nonce = gen_nonce(&mut rng);
        let prev = genesis_placeholder();
        let stage = compute_stage(&nonce, &pk, &prev);
        let manual_inner = h2(hash(nonce.as_bytes()).as_bytes(), hash(pk.as_bytes()).as_bytes());
        let manual_id = h2(manual_inner.as_bytes(), prev.0.as_bytes());
        assert_eq!(stage.inner.0, manual_inner);
        assert_eq!(stage.id.0, manual_id);
        assert_eq!(stage, compute_stage(&nonce, &pk, &prev));
        assert!(verify_stage(&stage.secrets.nonce_hash, &pk, &prev, &stage.id));
    }

    #[test]
    fn verify_stage_rejects_any_replaced_element() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let seed = Seed::from_entropy([2; 32]);
        let mut false_accepts = 0;
        for i in 0..10_000u32 {
            let pk = derive_keypair(&seed, i % 16).public_key();
            let nonce = gen_nonce(&mut rng);
            let prev = UnitId(random_hash(&mut rng));
            let stage = compute_stage(&nonce, &pk, &prev);
            let h_n = stage.secrets.nonce_hash;
            let ok = match i % 4 {
                0 => verify_stage(&random_hash(&mut rng), &pk, &prev, &stage.id),
                1 => verify_stage(&h_n, &PublicKey::from_bytes(*random_hash(&mut rng).as_bytes()), &prev, &stage.id),
                2 => verify_stage(&h_n, &pk, &UnitId(random_hash(&mut rng)), &stage.id),
                _ => verify_stage(&h_n, &pk, &prev, &UnitId(random_hash(&mut rng))),
            };
            false_accepts += ok as u32;
            assert!(!verify_stage(&h_n, &pk, &prev, &genesis_placeholder()));
        }
        assert_eq!(false_accepts, 0);
    }

    #[test]
    fn no_collisions_over_random_stages() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let ids: HashSet<UnitId> = (0..100_000)
            .map(|_| unit_id(&InnerCommitment(random_hash(&mut rng)), &UnitId(random_hash(&mut rng))))
            .collect();
        assert_eq!(ids.len(), 100_000);
    }

    #[test]
    fn merkle_root_follows_odd_duplication_rule() {
        assert_eq!(merkle_root::<&[u8]>(&[]), None);
        let l: Vec<Vec<u8>> = (1..=5u8).map(|i| vec![i]).collect();
        let h: Vec<Hash256> = l.iter().map(|x| hash(x)).collect();
        let h12 = hash_pair(&h[0], &h[1]);
        let h34 = hash_pair(&h[2], &h[3]);
        let h55 = hash_pair(&h[4], &h[4]);
        let h1234 = hash_pair(&h12, &h34);
        let h5555 = hash_pair(&h55, &h55);
        assert_eq!(merkle_root(&l), Some(hash_pair(&h1234, &h5555)));
        assert_eq!(merkle_root(&l[..2]), Some(h12));
    }

    #[test]
    fn merkle_root_of_single_leaf_pairs_with_itself() {
        let h0 = hash(&[0u8]);
        assert_eq!(merkle_root(&[[0u8]]), Some(hash_pair(&h0, &h0)));
        assert_eq!(merkle_root(&[[0u8]]).map(UnitId), Some(genesis_placeholder()));
    }
}
