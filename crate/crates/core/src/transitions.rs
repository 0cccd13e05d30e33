//! Public ledger entries and their validation.
//!
//! Transfers and delegations share one entry shape ([`Transition`]); only
//! the off-ledger exchange that produced `output_unit` differs. A
//! [`Reversal`] lets the sender of an earlier delegation reclaim the live
//! end of that unit's lineage.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commitment::{genesis_placeholder, inner_commitment, unit_id, verify_stage, UnitId};
use crate::crypto::{verify, Hash256, KeyPair, PublicKey, Signature};
use crate::ledger::{EdgeKind, LineageIndex, State};
use crate::tally::OptionRegistry;
use crate::wallet::{DelegationStub, OwnershipRecord};

pub const TRANSITION_TAG: &[u8] = b"LLV1-TRANSITION";
pub const REVERSAL_TAG: &[u8] = b"LLV1-REVERSAL";
pub const GENESIS_TAG: &[u8] = b"LLV1-GENESIS";

/// `<h_n, pk, v_{t-1}, v_t, v_{t+1}, s>`. Deliberately carries no kind field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub nonce_hash: Hash256,
    pub sender_pk: PublicKey,
    pub prev_unit: UnitId,
    pub input_unit: UnitId,
    pub output_unit: UnitId,
    pub signature: Signature,
}

/// `<h_n, h_p, pk, v_in, v_out, v_new, s>` for a past delegation `v_in -> v_out`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reversal {
    pub delegated_nonce_hash: Hash256,
    pub delegated_pk_hash: Hash256,
    pub sender_pk: PublicKey,
    pub delegated_input: UnitId,
    pub delegated_output: UnitId,
    pub new_output: UnitId,
    pub signature: Signature,
}

/// Slot-0 issuance of a unit from the genesis placeholder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisRegistration {
    pub nonce_hash: Hash256,
    pub owner_pk: PublicKey,
    pub initial_output: UnitId,
    pub signature: Signature,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Entry {
    Genesis(GenesisRegistration),
    Transition(Transition),
    Reversal(Reversal),
}

impl From<Transition> for Entry {
    fn from(t: Transition) -> Self {
        Entry::Transition(t)
    }
}

impl From<Reversal> for Entry {
    fn from(r: Reversal) -> Self {
        Entry::Reversal(r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectReason {
    UnknownInput,
    SpentInput,
    StageMismatch,
    BadSignature,
    DuplicateOutput,
    OptionKeySpend,
    NoLiveDescendant,
    NotOriginalSender,
    StateFrozen,
    /// Genesis registrations are only valid in slot 0.
    MisplacedGenesis,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
}

impl Verdict {
    pub const ACCEPT: Verdict = Verdict {
        accepted: true,
        reason: None,
    };

    pub fn reject(reason: RejectReason) -> Verdict {
        Verdict {
            accepted: false,
            reason: Some(reason),
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.accepted
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("ownership record does not recompute to its unit id")]
    InconsistentRecord,
    #[error("delegation stub does not recompute to its delegated output")]
    InconsistentStub,
    #[error("record for {0} is already spent")]
    Spent(UnitId),
}

fn put(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(bytes);
}

impl Transition {
    pub fn signing_payload(&self) -> Vec<u8> {
        transition_payload(&self.nonce_hash, &self.sender_pk, &self.prev_unit, &self.input_unit, &self.output_unit)
    }

    /// Signs a transition without checking that the fields are consistent.
    pub fn sign_unchecked(
        nonce_hash: Hash256,
        keypair: &KeyPair,
        prev_unit: UnitId,
        input_unit: UnitId,
        output_unit: UnitId,
    ) -> Transition {
        let sender_pk = keypair.public_key();
        let payload = transition_payload(&nonce_hash, &sender_pk, &prev_unit, &input_unit, &output_unit);
        Transition {
            nonce_hash,
            sender_pk,
            prev_unit,
            input_unit,
            output_unit,
            signature: keypair.sign(&payload),
        }
    }
}

fn transition_payload(h_n: &Hash256, pk: &PublicKey, prev: &UnitId, input: &UnitId, output: &UnitId) -> Vec<u8> {
    let mut buf = Vec::with_capacity(TRANSITION_TAG.len() + 5 * 32);
    put(&mut buf, TRANSITION_TAG);
    put(&mut buf, h_n.as_bytes());
    put(&mut buf, pk.as_bytes());
    put(&mut buf, prev.0.as_bytes());
    put(&mut buf, input.0.as_bytes());
    put(&mut buf, output.0.as_bytes());
    buf
}

impl Reversal {
    pub fn signing_payload(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(REVERSAL_TAG.len() + 6 * 32);
        put(&mut buf, REVERSAL_TAG);
        put(&mut buf, self.delegated_nonce_hash.as_bytes());
        put(&mut buf, self.delegated_pk_hash.as_bytes());
        put(&mut buf, self.sender_pk.as_bytes());
        put(&mut buf, self.delegated_input.0.as_bytes());
        put(&mut buf, self.delegated_output.0.as_bytes());
        put(&mut buf, self.new_output.0.as_bytes());
        buf
    }

    /// Signs a reversal without checking the stub relation.
    pub fn sign_unchecked(
        delegated_nonce_hash: Hash256,
        delegated_pk_hash: Hash256,
        keypair: &KeyPair,
        delegated_input: UnitId,
        delegated_output: UnitId,
        new_output: UnitId,
    ) -> Reversal {
        let mut r = Reversal {
            delegated_nonce_hash,
            delegated_pk_hash,
            sender_pk: keypair.public_key(),
            delegated_input,
            delegated_output,
            new_output,
            signature: Signature::from_bytes([0; 64]),
        };
        r.signature = keypair.sign(&r.signing_payload());
        r
    }
}

impl GenesisRegistration {
    pub fn signing_payload(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(GENESIS_TAG.len() + 4 * 32);
        put(&mut buf, GENESIS_TAG);
        put(&mut buf, self.nonce_hash.as_bytes());
        put(&mut buf, self.owner_pk.as_bytes());
        put(&mut buf, genesis_placeholder().0.as_bytes());
        put(&mut buf, self.initial_output.0.as_bytes());
        buf
    }

    pub fn sign(nonce_hash: Hash256, keypair: &KeyPair, initial_output: UnitId) -> GenesisRegistration {
        let mut g = GenesisRegistration {
            nonce_hash,
            owner_pk: keypair.public_key(),
            initial_output,
            signature: Signature::from_bytes([0; 64]),
        };
        g.signature = keypair.sign(&g.signing_payload());
        g
    }

    /// Stage and signature check; uniqueness is the ledger's concern.
    pub fn is_well_formed(&self) -> bool {
        verify_stage(&self.nonce_hash, &self.owner_pk, &genesis_placeholder(), &self.initial_output)
            && verify(&self.owner_pk, &self.signing_payload(), &self.signature)
    }
}

impl Entry {
    pub fn signing_payload(&self) -> Vec<u8> {
        match self {
            Entry::Genesis(g) => g.signing_payload(),
            Entry::Transition(t) => t.signing_payload(),
            Entry::Reversal(r) => r.signing_payload(),
        }
    }

    pub fn sender_pk(&self) -> &PublicKey {
        match self {
            Entry::Genesis(g) => &g.owner_pk,
            Entry::Transition(t) => &t.sender_pk,
            Entry::Reversal(r) => &r.sender_pk,
        }
    }
}

/// Builds and signs a transition spending `record`.
pub fn build_transition(
    record: &OwnershipRecord,
    output_unit: UnitId,
    keypair: &KeyPair,
) -> Result<Transition, BuildError> {
    if !record.is_consistent_with(&keypair.public_key()) {
        return Err(BuildError::InconsistentRecord);
    }
    Ok(Transition::sign_unchecked(
        record.stage_secrets(&keypair.public_key()).nonce_hash,
        keypair,
        record.prev_unit,
        record.unit,
        output_unit,
    ))
}

pub fn build_reversal(stub: &DelegationStub, new_output: UnitId, keypair: &KeyPair) -> Result<Reversal, BuildError> {
    if !stub.is_consistent() {
        return Err(BuildError::InconsistentStub);
    }
    Ok(Reversal::sign_unchecked(
        stub.nonce_hash,
        stub.pubkey_hash,
        keypair,
        stub.delegated_input,
        stub.delegated_output,
        new_output,
    ))
}

fn fresh(index: &LineageIndex, unit: &UnitId) -> bool {
    !index.contains(unit) && *unit != genesis_placeholder()
}

/// Checks run in a fixed order and the first failure is reported. A frozen
/// state rejects everything before any other check.
pub fn validate_transition(t: &Transition, state: &State, index: &LineageIndex, options: &OptionRegistry) -> Verdict {
    use RejectReason::*;
    if state.is_frozen() {
        return Verdict::reject(StateFrozen);
    }
    if !verify_stage(&t.nonce_hash, &t.sender_pk, &t.prev_unit, &t.input_unit) {
        return Verdict::reject(StageMismatch);
    }
    if !state.is_live(&t.input_unit) {
        return Verdict::reject(if index.contains(&t.input_unit) { SpentInput } else { UnknownInput });
    }
    if !fresh(index, &t.output_unit) {
        return Verdict::reject(DuplicateOutput);
    }
    if !verify(&t.sender_pk, &t.signing_payload(), &t.signature) {
        return Verdict::reject(BadSignature);
    }
    if options.is_option_key(&t.sender_pk) {
        return Verdict::reject(OptionKeySpend);
    }
    Verdict::ACCEPT
}

pub fn validate_reversal(r: &Reversal, state: &State, index: &LineageIndex) -> Verdict {
    use RejectReason::*;
    if state.is_frozen() {
        return Verdict::reject(StateFrozen);
    }
    let inner = inner_commitment(&r.delegated_nonce_hash, &r.delegated_pk_hash);
    if unit_id(&inner, &r.delegated_input) != r.delegated_output {
        return Verdict::reject(StageMismatch);
    }
    match index.consumption(&r.delegated_input) {
        Some(c) if c.output == r.delegated_output && c.kind == EdgeKind::Transition => {
            if c.sender_pk != r.sender_pk {
                return Verdict::reject(NotOriginalSender);
            }
        }
        _ => return Verdict::reject(UnknownInput),
    }
    if index.is_reversed(&r.delegated_output)
        || !matches!(index.live_descendant(state, &r.delegated_output), Ok(Some(_)))
    {
        return Verdict::reject(NoLiveDescendant);
    }
    if !fresh(index, &r.new_output) {
        return Verdict::reject(DuplicateOutput);
    }
    if !verify(&r.sender_pk, &r.signing_payload(), &r.signature) {
        return Verdict::reject(BadSignature);
    }
    Verdict::ACCEPT
}
