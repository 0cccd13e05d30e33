//! Voting against option keys and the public tally.
//!
//! Options are well-known public keys. A vote is an ordinary transfer whose
//! receiver is the option; validators refuse any entry signed by an option
//! key, so vote units are terminal. At tally time each option publishes the
//! plaintext nonces behind the units it claims and anyone can recompute them.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commitment::{compute_stage, verify_stage, UnitId};
use crate::crypto::{derive_keypair, gen_nonce_with, hash, KeyPair, Nonce, NonceProfile, PublicKey, Seed};
use crate::ledger::{LedgerError, LineageIndex, State};
use crate::wallet::{InputAnnounce, TransferOffer};

#[derive(Debug, Error)]
pub enum TallyError {
    #[error("tally requires a finalized state")]
    NotFrozen,
    #[error("option label {0:?} registered twice")]
    DuplicateLabel(String),
    #[error("option key for {0:?} is already registered")]
    DuplicateKey(String),
}

/// Label -> common-knowledge option key.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OptionRegistry {
    options: BTreeMap<String, PublicKey>,
}

impl OptionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, label: impl Into<String>, key: PublicKey) -> Result<(), TallyError> {
        let label = label.into();
        if self.options.contains_key(&label) {
            return Err(TallyError::DuplicateLabel(label));
        }
        if self.is_option_key(&key) {
            return Err(TallyError::DuplicateKey(label));
        }
        self.options.insert(label, key);
        Ok(())
    }

    pub fn key(&self, label: &str) -> Option<&PublicKey> {
        self.options.get(label)
    }

    pub fn is_option_key(&self, key: &PublicKey) -> bool {
        self.options.values().any(|k| k == key)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.options.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &PublicKey)> {
        self.options.iter().map(|(l, k)| (l.as_str(), k))
    }

    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }
}

/// One revealed vote: the opening of `unit` under the option's key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteClaim {
    pub unit: UnitId,
    pub nonce: Nonce,
    pub prev: UnitId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteReveal {
    pub option: String,
    pub claims: Vec<VoteClaim>,
}

/// The automated counterpart behind an option key.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptionEntity {
    label: String,
    seed: Seed,
    nonce_profile: NonceProfile,
    issued: Vec<VoteClaim>,
}

impl OptionEntity {
    pub fn new(label: impl Into<String>, seed: Seed) -> Self {
        Self::with_profile(label, seed, NonceProfile::Full)
    }

    pub fn with_profile(label: impl Into<String>, seed: Seed, nonce_profile: NonceProfile) -> Self {
        OptionEntity {
            label: label.into(),
            seed,
            nonce_profile,
            issued: Vec::new(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn keypair(&self) -> KeyPair {
        derive_keypair(&self.seed, 0)
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair().public_key()
    }

    /// Transfer data for a voter: the precomputed output under the option key.
    pub fn request_vote_offer<R: RngCore + ?Sized>(&mut self, announce: &InputAnnounce, rng: &mut R) -> TransferOffer {
        let nonce = gen_nonce_with(self.nonce_profile, rng);
        let stage = compute_stage(&nonce, &self.public_key(), &announce.input_unit);
        self.issued.push(VoteClaim {
            unit: stage.id,
            nonce,
            prev: announce.input_unit,
        });
        TransferOffer { output_unit: stage.id }
    }

    /// Every claim this entity has issued, in order.
    pub fn issued(&self) -> &[VoteClaim] {
        &self.issued
    }

    /// Live units this entity can open.
    pub fn received(&self, state: &State) -> Vec<VoteClaim> {
        self.issued.iter().filter(|c| state.is_live(&c.unit)).copied().collect()
    }

    /// Public grouping before nonces are revealed.
    pub fn declare(&self, state: &State) -> BTreeSet<UnitId> {
        self.received(state).into_iter().map(|c| c.unit).collect()
    }

    pub fn reveal(&self, state: &State) -> VoteReveal {
        VoteReveal {
            option: self.label.clone(),
            claims: self.received(state),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreliminaryTally {
    pub counts: BTreeMap<String, u64>,
    /// Declared units that are not live, per label.
    pub excluded: BTreeMap<String, BTreeSet<UnitId>>,
    /// Live units declared by more than one option.
    pub overlaps: BTreeSet<UnitId>,
}

/// Counts unverified declarations. Overlapping units count for every claimant.
pub fn preliminary_tally(state: &State, declared: &BTreeMap<String, BTreeSet<UnitId>>) -> PreliminaryTally {
    let mut out = PreliminaryTally::default();
    let mut claimants: BTreeMap<UnitId, usize> = BTreeMap::new();
    for (label, units) in declared {
        let mut count = 0;
        for unit in units {
            if state.is_live(unit) {
                count += 1;
                *claimants.entry(*unit).or_default() += 1;
            } else {
                out.excluded.entry(label.clone()).or_default().insert(*unit);
            }
        }
        out.counts.insert(label.clone(), count);
    }
    out.overlaps = claimants.into_iter().filter(|(_, n)| *n > 1).map(|(u, _)| u).collect();
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimRejection {
    UnknownOption,
    NotLive,
    ParentMismatch,
    StageMismatch,
    Duplicate,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InvalidClaim {
    pub option: String,
    pub unit: UnitId,
    pub reason: ClaimRejection,
}

/// Every live unit lands in exactly one of: an option count, `unallocated`
/// (no claim at all), or `disputed` (claimed, but no claim opens it).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyResult {
    pub counts: BTreeMap<String, u64>,
    pub unallocated: u64,
    pub disputed: BTreeSet<UnitId>,
    pub invalid_claims: Vec<InvalidClaim>,
}

impl TallyResult {
    pub fn verified_total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// verified + unallocated + disputed.
    pub fn accounted(&self) -> u64 {
        self.verified_total() + self.unallocated + self.disputed.len() as u64
    }
}

/// Recomputes the tally from public data only.
pub fn verify_tally(
    index: &LineageIndex,
    state: &State,
    reveals: &[VoteReveal],
    registry: &OptionRegistry,
) -> Result<TallyResult, TallyError> {
    if !state.is_frozen() {
        return Err(TallyError::NotFrozen);
    }
    let mut counts: BTreeMap<String, u64> = registry.labels().map(|l| (l.to_string(), 0)).collect();
    let mut winner: BTreeMap<UnitId, String> = BTreeMap::new();
    let mut claimed: BTreeSet<UnitId> = BTreeSet::new();
    let mut seen: BTreeSet<(String, UnitId)> = BTreeSet::new();
    let mut invalid = Vec::new();

    for reveal in reveals {
        let key = registry.key(&reveal.option);
        for claim in &reveal.claims {
            let reject = |reason| InvalidClaim {
                option: reveal.option.clone(),
                unit: claim.unit,
                reason,
            };
            if !seen.insert((reveal.option.clone(), claim.unit)) {
                invalid.push(reject(ClaimRejection::Duplicate));
                continue;
            }
            let Some(key) = key else {
                invalid.push(reject(ClaimRejection::UnknownOption));
                continue;
            };
            if !state.is_live(&claim.unit) {
                invalid.push(reject(ClaimRejection::NotLive));
                continue;
            }
            claimed.insert(claim.unit);
            if index.parent(&claim.unit) != Some(&claim.prev) {
                invalid.push(reject(ClaimRejection::ParentMismatch));
                continue;
            }
            if !verify_stage(&hash(claim.nonce.as_bytes()), key, &claim.prev, &claim.unit) {
                invalid.push(reject(ClaimRejection::StageMismatch));
                continue;
            }
            // two distinct openings of one unit would be a hash collision
            assert!(
                winner.insert(claim.unit, reveal.option.clone()).is_none(),
                "two verifying claims for {}",
                claim.unit
            );
        }
    }

    for label in winner.values() {
        *counts.get_mut(label).expect("winners come from registered labels") += 1;
    }
    let disputed: BTreeSet<UnitId> = claimed.into_iter().filter(|u| !winner.contains_key(u)).collect();
    let unallocated = state.live().iter().filter(|u| !winner.contains_key(u) && !disputed.contains(u)).count() as u64;
    invalid.sort();
    Ok(TallyResult {
        counts,
        unallocated,
        disputed,
        invalid_claims: invalid,
    })
}

/// Ends the reversal window.
pub fn finalize(state: &State) -> Result<State, LedgerError> {
    state.freeze()
}
