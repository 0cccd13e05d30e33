//! The append-only public ledger and the state derived from it.
//!
//! Slot 0 holds genesis registrations. Every later slot holds only entries
//! that were accepted when the slot was appended, so replay re-validates
//! each stored entry and treats any rejection as corruption.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commitment::{genesis_placeholder, UnitId};
use crate::crypto::{hash, Hash256, PublicKey, PROFILE_VERSION};
use crate::tally::OptionRegistry;
use crate::transitions::{validate_reversal, validate_transition, Entry, GenesisRegistration, RejectReason, Verdict};

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported ledger version {0:?}")]
    Version(String),
    #[error("malformed ledger line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("genesis output {0} registered twice")]
    DuplicateGenesisOutput(UnitId),
    #[error("genesis registration {0} fails its stage or signature check")]
    InvalidGenesis(usize),
    #[error("state is already frozen")]
    AlreadyFrozen,
    #[error("unknown unit {0}")]
    UnknownUnit(UnitId),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("slot at position {position} carries index {found}")]
    SlotOrder { position: usize, found: u64 },
    #[error("slot {slot} entry {position}: genesis registration outside slot 0")]
    MisplacedGenesis { slot: u64, position: usize },
    #[error("slot 0 entry {position}: only genesis registrations may appear in slot 0")]
    NonGenesisInSlotZero { position: usize },
    #[error("slot {slot} entry {position}: stored entry rejected ({reason})")]
    Rejected { slot: u64, position: usize, reason: RejectReason },
    #[error("slot 0 entry {position}: invalid genesis registration")]
    InvalidGenesis { position: usize },
    #[error("header declares {declared} genesis units, slot 0 has {found}")]
    GenesisCount { declared: usize, found: usize },
    #[error("ledger has no genesis slot")]
    MissingGenesis,
}

/// The live set `S_t`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct State {
    live: BTreeSet<UnitId>,
    frozen: bool,
}

impl State {
    #[cfg(test)]
    pub(crate) fn from_live(units: impl IntoIterator<Item = UnitId>) -> State {
        State {
            live: units.into_iter().collect(),
            frozen: false,
        }
    }

    pub fn is_live(&self, unit: &UnitId) -> bool {
        self.live.contains(unit)
    }

    pub fn live(&self) -> &BTreeSet<UnitId> {
        &self.live
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Returns a frozen copy; freezing twice is an error.
    pub fn freeze(&self) -> Result<State, LedgerError> {
        if self.frozen {
            return Err(LedgerError::AlreadyFrozen);
        }
        Ok(State {
            live: self.live.clone(),
            frozen: true,
        })
    }

    /// Hash over the concatenation of the sorted live identifiers.
    pub fn snapshot_hash(&self) -> Hash256 {
        let mut buf = Vec::with_capacity(self.live.len() * 32);
        for unit in &self.live {
            buf.extend_from_slice(unit.0.as_bytes());
        }
        hash(&buf)
    }

    /// Sorted hex identifiers, one per line.
    pub fn export(&self) -> String {
        let mut out = String::with_capacity(self.live.len() * 65);
        for unit in &self.live {
            out.push_str(&unit.to_hex());
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Transition,
    Reversal,
}

/// How a unit left the live set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Consumption {
    pub output: UnitId,
    pub sender_pk: PublicKey,
    pub kind: EdgeKind,
    pub slot: u64,
}

/// Public parent/child structure of every identifier ever issued.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LineageIndex {
    parent: HashMap<UnitId, UnitId>,
    consumed: HashMap<UnitId, Consumption>,
    depth: HashMap<UnitId, u32>,
    created: Vec<UnitId>,
    reversed: HashSet<UnitId>,
}

impl LineageIndex {
    pub fn contains(&self, unit: &UnitId) -> bool {
        self.parent.contains_key(unit)
    }

    pub fn parent(&self, unit: &UnitId) -> Option<&UnitId> {
        self.parent.get(unit)
    }

    pub fn consumption(&self, unit: &UnitId) -> Option<&Consumption> {
        self.consumed.get(unit)
    }

    pub fn consumed_by_pk(&self, unit: &UnitId) -> Option<&PublicKey> {
        self.consumed.get(unit).map(|c| &c.sender_pk)
    }

    /// Genesis outputs have depth 1; each later stage adds one.
    pub fn stage_depth(&self, unit: &UnitId) -> Option<u32> {
        self.depth.get(unit).copied()
    }

    /// A delegation can be reversed once; afterwards its lineage belongs to the sender again.
    pub fn is_reversed(&self, delegated_output: &UnitId) -> bool {
        self.reversed.contains(delegated_output)
    }

    /// Every issued identifier in creation order.
    pub fn created(&self) -> &[UnitId] {
        &self.created
    }

    pub fn len(&self) -> usize {
        self.created.len()
    }

    pub fn is_empty(&self) -> bool {
        self.created.is_empty()
    }

    /// Follows child edges from `unit` to the live end of its lineage.
    pub fn live_descendant(&self, state: &State, unit: &UnitId) -> Result<Option<UnitId>, LedgerError> {
        if !self.contains(unit) {
            return Err(LedgerError::UnknownUnit(*unit));
        }
        let mut cursor = *unit;
        loop {
            if state.is_live(&cursor) {
                return Ok(Some(cursor));
            }
            match self.consumed.get(&cursor) {
                Some(c) => cursor = c.output,
                None => return Ok(None),
            }
        }
    }

    /// Parent chain from `unit` back to (and including) the genesis placeholder.
    pub fn lineage(&self, unit: &UnitId) -> Vec<UnitId> {
        let mut chain = vec![*unit];
        let mut cursor = *unit;
        while let Some(p) = self.parent.get(&cursor) {
            chain.push(*p);
            cursor = *p;
        }
        chain
    }

    fn issue(&mut self, unit: UnitId, parent: UnitId) {
        let depth = self.depth.get(&parent).copied().unwrap_or(0) + 1;
        self.parent.insert(unit, parent);
        self.depth.insert(unit, depth);
        self.created.push(unit);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub t: u64,
    pub entries: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: String,
    genesis_count: usize,
    #[serde(default, skip_serializing_if = "OptionRegistry::is_empty")]
    options: OptionRegistry,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    finalized: bool,
}

/// Single-writer ledger with incrementally maintained state and index.
#[derive(Clone, Debug)]
pub struct Ledger {
    slots: Vec<Slot>,
    options: OptionRegistry,
    genesis_count: usize,
    finalized: bool,
    state: State,
    index: LineageIndex,
}

impl Ledger {
    pub fn genesis_init(registrations: Vec<GenesisRegistration>) -> Result<Ledger, LedgerError> {
        Ledger::genesis_with_options(registrations, OptionRegistry::default())
    }

    /// Genesis with an option registry whose keys validators refuse as senders.
    pub fn genesis_with_options(
        registrations: Vec<GenesisRegistration>,
        options: OptionRegistry,
    ) -> Result<Ledger, LedgerError> {
        let mut seen = BTreeSet::new();
        for (i, reg) in registrations.iter().enumerate() {
            if !seen.insert(reg.initial_output) {
                return Err(LedgerError::DuplicateGenesisOutput(reg.initial_output));
            }
            if !reg.is_well_formed() {
                return Err(LedgerError::InvalidGenesis(i));
            }
        }
        let mut ledger = Ledger {
            slots: Vec::new(),
            options,
            genesis_count: registrations.len(),
            finalized: false,
            state: State::default(),
            index: LineageIndex::default(),
        };
        for reg in &registrations {
            ledger.apply_genesis(reg);
        }
        ledger.slots.push(Slot {
            t: 0,
            entries: registrations.into_iter().map(Entry::Genesis).collect(),
        });
        Ok(ledger)
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn index(&self) -> &LineageIndex {
        &self.index
    }

    pub fn options(&self) -> &OptionRegistry {
        &self.options
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn genesis_count(&self) -> usize {
        self.genesis_count
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// Number of stored entries after slot 0.
    pub fn entry_count(&self) -> usize {
        self.slots.iter().skip(1).map(|s| s.entries.len()).sum()
    }

    /// All stored entries after slot 0, in ledger order.
    pub fn entries(&self) -> impl Iterator<Item = (u64, &Entry)> {
        self.slots
            .iter()
            .skip(1)
            .flat_map(|s| s.entries.iter().map(move |e| (s.t, e)))
    }

    /// Validates `entry` against the current state without applying it.
    pub fn check(&self, entry: &Entry) -> Verdict {
        check_entry(entry, &self.state, &self.index, &self.options)
    }

    /// Validates entries in order against the evolving state. Rejected
    /// entries are reported but never stored.
    pub fn append_slot(&mut self, entries: Vec<Entry>) -> Vec<Verdict> {
        let t = self.slots.len() as u64;
        let mut accepted = Vec::with_capacity(entries.len());
        let mut verdicts = Vec::with_capacity(entries.len());
        for entry in entries {
            let verdict = self.check(&entry);
            if verdict.accepted {
                apply(&mut self.state, &mut self.index, &entry, t);
                accepted.push(entry);
            }
            verdicts.push(verdict);
        }
        self.slots.push(Slot { t, entries: accepted });
        verdicts
    }

    /// Closes the reversal window. All later entries are rejected with `StateFrozen`.
    pub fn finalize(&mut self) -> Result<(), LedgerError> {
        self.state = self.state.freeze()?;
        self.finalized = true;
        Ok(())
    }

    fn apply_genesis(&mut self, reg: &GenesisRegistration) {
        self.state.live.insert(reg.initial_output);
        self.index.issue(reg.initial_output, genesis_placeholder());
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            version: PROFILE_VERSION.to_string(),
            genesis_count: self.genesis_count,
            options: self.options.clone(),
            finalized: self.finalized,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for slot in &self.slots {
            out.push_str(&serde_json::to_string(slot).expect("slot serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses and fully replays a ledger file body.
    pub fn from_jsonl(text: &str) -> Result<Ledger, LedgerError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(LedgerError::Malformed {
            line: 1,
            message: "empty file".into(),
        })?;
        let version = serde_json::from_str::<serde_json::Value>(first)
            .ok()
            .and_then(|v| v.get("version").and_then(|s| s.as_str()).map(str::to_string))
            .ok_or_else(|| LedgerError::Malformed {
                line: 1,
                message: "header without version".into(),
            })?;
        if version != PROFILE_VERSION {
            return Err(LedgerError::Version(version));
        }
        let header: Header = serde_json::from_str(first).map_err(|e| LedgerError::Malformed {
            line: 1,
            message: e.to_string(),
        })?;
        let mut slots = Vec::new();
        for (i, line) in lines {
            let slot: Slot = serde_json::from_str(line).map_err(|e| LedgerError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            slots.push(slot);
        }
        let mut ledger = Ledger {
            slots,
            options: header.options,
            genesis_count: header.genesis_count,
            finalized: header.finalized,
            state: State::default(),
            index: LineageIndex::default(),
        };
        let (state, index) = replay(&ledger)?;
        ledger.state = state;
        ledger.index = index;
        Ok(ledger)
    }

    /// Writes the ledger through a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<(), LedgerError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(self.to_jsonl().as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Ledger, LedgerError> {
        Ledger::from_jsonl(&fs::read_to_string(path)?)
    }
}

fn check_entry(entry: &Entry, state: &State, index: &LineageIndex, options: &OptionRegistry) -> Verdict {
    match entry {
        Entry::Genesis(_) => Verdict::reject(RejectReason::MisplacedGenesis),
        Entry::Transition(t) => validate_transition(t, state, index, options),
        Entry::Reversal(r) => validate_reversal(r, state, index),
    }
}

fn apply(state: &mut State, index: &mut LineageIndex, entry: &Entry, t: u64) {
    let (consumed, output, sender_pk, kind) = match entry {
        Entry::Genesis(_) => unreachable!("genesis entries are applied by genesis_init"),
        Entry::Transition(tr) => (tr.input_unit, tr.output_unit, tr.sender_pk, EdgeKind::Transition),
        Entry::Reversal(r) => {
            let target = index
                .live_descendant(state, &r.delegated_output)
                .ok()
                .flatten()
                .expect("validated reversal has a live descendant");
            index.reversed.insert(r.delegated_output);
            (target, r.new_output, r.sender_pk, EdgeKind::Reversal)
        }
    };
    state.live.remove(&consumed);
    state.live.insert(output);
    index.consumed.insert(
        consumed,
        Consumption {
            output,
            sender_pk,
            kind,
            slot: t,
        },
    );
    index.issue(output, consumed);
}

/// Rebuilds state and lineage from the stored slots alone.
pub fn replay(ledger: &Ledger) -> Result<(State, LineageIndex), ReplayError> {
    let mut state = State::default();
    let mut index = LineageIndex::default();
    let genesis = ledger.slots.first().ok_or(ReplayError::MissingGenesis)?;
    if genesis.t != 0 {
        return Err(ReplayError::SlotOrder { position: 0, found: genesis.t });
    }
    for (position, entry) in genesis.entries.iter().enumerate() {
        let Entry::Genesis(reg) = entry else {
            return Err(ReplayError::NonGenesisInSlotZero { position });
        };
        if !reg.is_well_formed() || index.contains(&reg.initial_output) {
            return Err(ReplayError::InvalidGenesis { position });
        }
        state.live.insert(reg.initial_output);
        index.issue(reg.initial_output, genesis_placeholder());
    }
    if genesis.entries.len() != ledger.genesis_count {
        return Err(ReplayError::GenesisCount {
            declared: ledger.genesis_count,
            found: genesis.entries.len(),
        });
    }
    for (position, slot) in ledger.slots.iter().enumerate().skip(1) {
        if slot.t != position as u64 {
            return Err(ReplayError::SlotOrder { position, found: slot.t });
        }
        for (i, entry) in slot.entries.iter().enumerate() {
            if matches!(entry, Entry::Genesis(_)) {
                return Err(ReplayError::MisplacedGenesis { slot: slot.t, position: i });
            }
            let verdict = check_entry(entry, &state, &index, &ledger.options);
            if let Some(reason) = verdict.reason {
                return Err(ReplayError::Rejected {
                    slot: slot.t,
                    position: i,
                    reason,
                });
            }
            apply(&mut state, &mut index, entry, slot.t);
        }
    }
    if ledger.finalized {
        state.frozen = true;
    }
    Ok((state, index))
}
