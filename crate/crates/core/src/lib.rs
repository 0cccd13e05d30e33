//! Voting-power ledger built on hash-chained unit commitments.
//!
//! A unit of voting power is publicly known only by its current identifier,
//! `H(H(H(n) || H(pk)) || prev)`. Owners spend units with signed
//! [`transitions::Transition`]s that never name the receiver; delegations
//! stay reversible because the sender keeps the separate leaf hashes.
//!
//! Modules, bottom up:
//! - [`crypto`]: SHA-256, Ed25519, seeded key derivation, nonces
//! - [`commitment`]: unit identifiers and stage verification
//! - [`transitions`]: ledger entries, signing encoding, validation
//! - [`ledger`]: append-only slots, replay, lineage index, persistence
//! - [`wallet`]: participant secrets and the offer protocol
//! - [`tally`]: option keys, reveals and the verifiable count
//! - [`sim`]: deterministic multi-party scenarios and adversary games

pub mod commitment;
pub mod crypto;
pub mod ledger;
pub mod sim;
pub mod tally;
pub mod transitions;
pub mod wallet;

pub use commitment::UnitId;
pub use crypto::{Hash256, Nonce, PublicKey, Signature, PROFILE_VERSION};
pub use ledger::{Ledger, LineageIndex, State};
pub use transitions::{Entry, RejectReason, Reversal, Transition, Verdict};
