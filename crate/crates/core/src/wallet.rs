//! Participant-side secrets and the off-ledger offer protocol.
//!
//! A receiver answers a delegation request with the separate hashes
//! `(h_n, h_p)`, which the sender keeps as a [`DelegationStub`] and can
//! later reveal in a reversal. A transfer receiver instead computes the
//! output unit itself and only hands over the finished identifier, so the
//! sender never holds anything that opens it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commitment::{compute_stage, genesis_placeholder, inner_commitment, unit_id, StageSecrets, UnitId};
use crate::crypto::{derive_keypair, gen_nonce_with, Hash256, KeyPair, Nonce, NonceProfile, PublicKey, Seed};
use crate::ledger::{LedgerError, LineageIndex, State};
use crate::transitions::{self, BuildError, GenesisRegistration, Reversal, Transition};

const WALLET_FORMAT: &str = "LLV1-WALLET";
const WALLET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WalletError {
    #[error("no ownership record for unit {0}")]
    UnknownUnit(UnitId),
    #[error("unit {0} is already spent")]
    Spent(UnitId),
    #[error("no delegation stub for output {0}")]
    UnknownStub(UnitId),
    #[error("delegated lineage of {0} has no live unit")]
    NoLiveDescendant(UnitId),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("toy-profile wallets cannot be persisted")]
    ToyProfile,
    #[error("wrong passphrase or corrupted wallet file")]
    Decrypt,
    #[error("corrupt wallet file: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything needed to spend one unit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnershipRecord {
    pub nonce: Nonce,
    pub key_index: u32,
    pub prev_unit: UnitId,
    pub unit: UnitId,
    pub spent: bool,
}

impl OwnershipRecord {
    pub fn stage_secrets(&self, public_key: &PublicKey) -> StageSecrets {
        StageSecrets::new(&self.nonce, public_key)
    }

    pub fn is_consistent_with(&self, public_key: &PublicKey) -> bool {
        compute_stage(&self.nonce, public_key, &self.prev_unit).id == self.unit
    }
}

/// Sender-side retained opening of a past delegation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelegationStub {
    pub nonce_hash: Hash256,
    pub pubkey_hash: Hash256,
    pub delegated_input: UnitId,
    pub delegated_output: UnitId,
    /// Index of the key that signed the delegating transition.
    pub sender_key_index: u32,
}

impl DelegationStub {
    pub fn is_consistent(&self) -> bool {
        unit_id(&inner_commitment(&self.nonce_hash, &self.pubkey_hash), &self.delegated_input) == self.delegated_output
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelegationOffer {
    pub h_n: Hash256,
    pub h_p: Hash256,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferOffer {
    pub output_unit: UnitId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputAnnounce {
    pub input_unit: UnitId,
}

/// Peer-to-peer messages as they travel between participants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WireMessage {
    DelegationOffer(DelegationOffer),
    TransferOffer(TransferOffer),
    InputAnnounce(InputAnnounce),
}

/// Secrets behind an offer that has not yet shown up on the ledger.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfferSecrets {
    pub nonce: Nonce,
    pub key_index: u32,
    /// Known up front for transfers; discovered by scanning for delegations.
    pub expected: Option<ExpectedUnit>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedUnit {
    pub prev_unit: UnitId,
    pub unit: UnitId,
}

#[derive(Clone, Serialize, Deserialize)]
struct WalletData {
    seed: Seed,
    next_key_index: u32,
    nonce_profile: NonceProfile,
    records: BTreeMap<UnitId, OwnershipRecord>,
    stubs: BTreeMap<UnitId, DelegationStub>,
    pending: Vec<OfferSecrets>,
    scan_cursor: usize,
    #[serde(default)]
    unclaimable: Vec<UnitId>,
}

#[derive(Clone)]
pub struct Wallet {
    data: WalletData,
}

impl std::fmt::Debug for Wallet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Wallet")
            .field("next_key_index", &self.data.next_key_index)
            .field("records", &self.data.records.len())
            .field("stubs", &self.data.stubs.len())
            .field("pending", &self.data.pending.len())
            .finish()
    }
}

impl PartialEq for Wallet {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_vec(&self.data).ok() == serde_json::to_vec(&other.data).ok()
    }
}

impl Wallet {
    pub fn new(seed: Seed) -> Wallet {
        Wallet::with_profile(seed, NonceProfile::Full)
    }

    pub fn with_profile(seed: Seed, nonce_profile: NonceProfile) -> Wallet {
        Wallet {
            data: WalletData {
                seed,
                next_key_index: 0,
                nonce_profile,
                records: BTreeMap::new(),
                stubs: BTreeMap::new(),
                pending: Vec::new(),
                scan_cursor: 0,
                unclaimable: Vec::new(),
            },
        }
    }

    pub fn seed(&self) -> &Seed {
        &self.data.seed
    }

    pub fn nonce_profile(&self) -> NonceProfile {
        self.data.nonce_profile
    }

    pub fn next_key_index(&self) -> u32 {
        self.data.next_key_index
    }

    pub fn keypair(&self, index: u32) -> KeyPair {
        derive_keypair(&self.data.seed, index)
    }

    /// Every public key this wallet has handed out so far.
    pub fn public_keys(&self) -> Vec<PublicKey> {
        (0..self.data.next_key_index).map(|i| self.keypair(i).public_key()).collect()
    }

    pub fn records(&self) -> impl Iterator<Item = &OwnershipRecord> {
        self.data.records.values()
    }

    pub fn record(&self, unit: &UnitId) -> Option<&OwnershipRecord> {
        self.data.records.get(unit)
    }

    pub fn stubs(&self) -> impl Iterator<Item = &DelegationStub> {
        self.data.stubs.values()
    }

    pub fn stub(&self, delegated_output: &UnitId) -> Option<&DelegationStub> {
        self.data.stubs.get(delegated_output)
    }

    pub fn pending_offers(&self) -> &[OfferSecrets] {
        &self.data.pending
    }

    /// Live units that matched a transfer offer but were spent from a
    /// different input than the announced one; their secrets cannot open them.
    pub fn unclaimable(&self) -> &[UnitId] {
        &self.data.unclaimable
    }

    fn fresh_stage_material<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> (Nonce, KeyPair) {
        let nonce = gen_nonce_with(self.data.nonce_profile, rng);
        let index = self.data.next_key_index;
        self.data.next_key_index += 1;
        (nonce, self.keypair(index))
    }

    /// Creates a self-owned unit straight from the genesis placeholder.
    pub fn register_genesis<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> GenesisRegistration {
        let (nonce, key) = self.fresh_stage_material(rng);
        let prev = genesis_placeholder();
        let stage = compute_stage(&nonce, &key.public_key(), &prev);
        self.data.records.insert(
            stage.id,
            OwnershipRecord {
                nonce,
                key_index: key.index(),
                prev_unit: prev,
                unit: stage.id,
                spent: false,
            },
        );
        GenesisRegistration::sign(stage.secrets.nonce_hash, &key, stage.id)
    }

    pub fn make_delegation_offer<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> DelegationOffer {
        let (nonce, key) = self.fresh_stage_material(rng);
        let secrets = StageSecrets::new(&nonce, &key.public_key());
        self.data.pending.push(OfferSecrets {
            nonce,
            key_index: key.index(),
            expected: None,
        });
        DelegationOffer {
            h_n: secrets.nonce_hash,
            h_p: secrets.pubkey_hash,
        }
    }

    pub fn make_transfer_offer<R: RngCore + ?Sized>(&mut self, announce: &InputAnnounce, rng: &mut R) -> TransferOffer {
        let (nonce, key) = self.fresh_stage_material(rng);
        let stage = compute_stage(&nonce, &key.public_key(), &announce.input_unit);
        self.data.pending.push(OfferSecrets {
            nonce,
            key_index: key.index(),
            expected: Some(ExpectedUnit {
                prev_unit: announce.input_unit,
                unit: stage.id,
            }),
        });
        TransferOffer { output_unit: stage.id }
    }

    fn spendable_record(&self, unit: &UnitId) -> Result<&OwnershipRecord, WalletError> {
        let record = self.data.records.get(unit).ok_or(WalletError::UnknownUnit(*unit))?;
        if record.spent {
            return Err(WalletError::Spent(*unit));
        }
        Ok(record)
    }

    pub fn accept_delegation_offer(
        &mut self,
        unit: &UnitId,
        offer: &DelegationOffer,
    ) -> Result<(Transition, DelegationStub), WalletError> {
        let record = self.spendable_record(unit)?.clone();
        let key = self.keypair(record.key_index);
        let output = unit_id(&inner_commitment(&offer.h_n, &offer.h_p), &record.unit);
        let transition = transitions::build_transition(&record, output, &key)?;
        let stub = DelegationStub {
            nonce_hash: offer.h_n,
            pubkey_hash: offer.h_p,
            delegated_input: record.unit,
            delegated_output: output,
            sender_key_index: record.key_index,
        };
        self.data.stubs.insert(output, stub.clone());
        Ok((transition, stub))
    }

    pub fn accept_transfer_offer(&mut self, unit: &UnitId, offer: &TransferOffer) -> Result<Transition, WalletError> {
        let record = self.spendable_record(unit)?.clone();
        let key = self.keypair(record.key_index);
        Ok(transitions::build_transition(&record, offer.output_unit, &key)?)
    }

    /// Drops a stub whose delegation never made it onto the ledger.
    pub fn forget_stub(&mut self, delegated_output: &UnitId) -> Option<DelegationStub> {
        self.data.stubs.remove(delegated_output)
    }

    /// Reclaims the live end of a delegated lineage into a fresh own stage.
    pub fn build_reversal<R: RngCore + ?Sized>(
        &mut self,
        delegated_output: &UnitId,
        state: &State,
        index: &LineageIndex,
        rng: &mut R,
    ) -> Result<Reversal, WalletError> {
        let stub = self
            .data
            .stubs
            .get(delegated_output)
            .cloned()
            .ok_or(WalletError::UnknownStub(*delegated_output))?;
        if index.is_reversed(delegated_output) {
            return Err(WalletError::NoLiveDescendant(*delegated_output));
        }
        let target = index
            .live_descendant(state, delegated_output)?
            .ok_or(WalletError::NoLiveDescendant(*delegated_output))?;
        let (nonce, key) = self.fresh_stage_material(rng);
        let stage = compute_stage(&nonce, &key.public_key(), &target);
        self.data.pending.push(OfferSecrets {
            nonce,
            key_index: key.index(),
            expected: Some(ExpectedUnit {
                prev_unit: target,
                unit: stage.id,
            }),
        });
        let signer = self.keypair(stub.sender_key_index);
        Ok(transitions::build_reversal(&stub, stage.id, &signer)?)
    }

    /// Promotes pending offers that now appear live and marks consumed records spent.
    ///
    /// Delegation offers are matched by recomputing each newly issued unit
    /// from its public parent; units issued before the last scan are skipped.
    pub fn detect_incoming(&mut self, state: &State, index: &LineageIndex) -> Vec<OwnershipRecord> {
        let mut found = Vec::new();
        let created = index.created();
        let new_units = &created[self.data.scan_cursor.min(created.len())..];
        let mut remaining = Vec::with_capacity(self.data.pending.len());
        let pending = std::mem::take(&mut self.data.pending);
        for offer in pending {
            let pk = self.keypair(offer.key_index).public_key();
            let hit = match offer.expected {
                Some(exp) if state.is_live(&exp.unit) => {
                    if index.parent(&exp.unit) != Some(&exp.prev_unit) {
                        self.data.unclaimable.push(exp.unit);
                        continue;
                    }
                    Some(exp)
                }
                Some(_) => None,
                None => {
                    let inner = StageSecrets::new(&offer.nonce, &pk).inner();
                    new_units.iter().find_map(|u| {
                        let parent = index.parent(u)?;
                        (state.is_live(u) && unit_id(&inner, parent) == *u).then_some(ExpectedUnit {
                            prev_unit: *parent,
                            unit: *u,
                        })
                    })
                }
            };
            match hit {
                Some(exp) => {
                    let record = OwnershipRecord {
                        nonce: offer.nonce,
                        key_index: offer.key_index,
                        prev_unit: exp.prev_unit,
                        unit: exp.unit,
                        spent: false,
                    };
                    self.data.records.insert(exp.unit, record.clone());
                    found.push(record);
                }
                None => remaining.push(offer),
            }
        }
        self.data.pending = remaining;
        self.data.scan_cursor = created.len();
        for record in self.data.records.values_mut() {
            if !record.spent && index.contains(&record.unit) && !state.is_live(&record.unit) {
                record.spent = true;
            }
        }
        found
    }

    pub fn spendable_units(&self, state: &State) -> Vec<&OwnershipRecord> {
        self.data
            .records
            .values()
            .filter(|r| !r.spent && state.is_live(&r.unit))
            .collect()
    }

    pub fn persist(&self, path: &Path, passphrase: &str) -> Result<(), WalletError> {
        let bytes = self.seal(passphrase, &mut rand::rngs::OsRng)?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn restore(path: &Path, passphrase: &str) -> Result<Wallet, WalletError> {
        Wallet::open(&fs::read(path)?, passphrase)
    }

    /// Encrypts the wallet into its versioned container.
    pub fn seal<R: RngCore + CryptoRng>(&self, passphrase: &str, rng: &mut R) -> Result<Vec<u8>, WalletError> {
        if self.data.nonce_profile.is_toy() {
            return Err(WalletError::ToyProfile);
        }
        let plaintext = serde_json::to_vec(&self.data).map_err(|e| WalletError::Corrupt(e.to_string()))?;
        let mut salt = [0u8; 16];
        rng.fill_bytes(&mut salt);
        let mut aead_nonce = [0u8; 24];
        rng.fill_bytes(&mut aead_nonce);
        let kdf = KdfParams::default_with_salt(salt);
        let cipher = XChaCha20Poly1305::new(&kdf.derive(passphrase)?.into());
        let ciphertext = cipher
            .encrypt(XNonce::from_slice(&aead_nonce), plaintext.as_slice())
            .map_err(|_| WalletError::Corrupt("encryption failed".into()))?;
        let container = Container {
            format: WALLET_FORMAT.into(),
            version: WALLET_VERSION,
            kdf,
            cipher: "xchacha20poly1305".into(),
            nonce: hex::encode(aead_nonce),
            ciphertext: hex::encode(ciphertext),
        };
        serde_json::to_vec_pretty(&container).map_err(|e| WalletError::Corrupt(e.to_string()))
    }

    pub fn open(bytes: &[u8], passphrase: &str) -> Result<Wallet, WalletError> {
        let container: Container = serde_json::from_slice(bytes).map_err(|e| WalletError::Corrupt(e.to_string()))?;
        if container.format != WALLET_FORMAT || container.version != WALLET_VERSION {
            return Err(WalletError::Corrupt(format!(
                "unsupported container {} v{}",
                container.format, container.version
            )));
        }
        let nonce = hex::decode(&container.nonce).map_err(|e| WalletError::Corrupt(e.to_string()))?;
        if nonce.len() != 24 {
            return Err(WalletError::Corrupt("bad nonce length".into()));
        }
        let ciphertext = hex::decode(&container.ciphertext).map_err(|e| WalletError::Corrupt(e.to_string()))?;
        let cipher = XChaCha20Poly1305::new(&container.kdf.derive(passphrase)?.into());
        let plaintext = cipher
            .decrypt(XNonce::from_slice(&nonce), ciphertext.as_slice())
            .map_err(|_| WalletError::Decrypt)?;
        let data: WalletData = serde_json::from_slice(&plaintext).map_err(|e| WalletError::Corrupt(e.to_string()))?;
        Ok(Wallet { data })
    }
}

#[derive(Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    kdf: KdfParams,
    cipher: String,
    nonce: String,
    ciphertext: String,
}

#[derive(Serialize, Deserialize)]
struct KdfParams {
    alg: String,
    m_cost_kib: u32,
    t_cost: u32,
    p_cost: u32,
    salt: String,
}

impl KdfParams {
    fn default_with_salt(salt: [u8; 16]) -> KdfParams {
        KdfParams {
            alg: "argon2id".into(),
            m_cost_kib: argon2::Params::DEFAULT_M_COST,
            t_cost: argon2::Params::DEFAULT_T_COST,
            p_cost: argon2::Params::DEFAULT_P_COST,
            salt: hex::encode(salt),
        }
    }

    fn derive(&self, passphrase: &str) -> Result<[u8; 32], WalletError> {
        if self.alg != "argon2id" {
            return Err(WalletError::Corrupt(format!("unsupported kdf {}", self.alg)));
        }
        let salt = hex::decode(&self.salt).map_err(|e| WalletError::Corrupt(e.to_string()))?;
        let params = argon2::Params::new(self.m_cost_kib, self.t_cost, self.p_cost, Some(32))
            .map_err(|e| WalletError::Corrupt(e.to_string()))?;
        let argon = argon2::Argon2::new(argon2::Algorithm::Argon2id, argon2::Version::V0x13, params);
        let mut key = [0u8; 32];
        argon
            .hash_password_into(passphrase.as_bytes(), &salt, &mut key)
            .map_err(|e| WalletError::Corrupt(e.to_string()))?;
        Ok(key)
    }
}
