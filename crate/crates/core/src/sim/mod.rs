//! Deterministic multi-party scenarios.
//!
//! A [`Scenario`] names voters by index and options by label; the engine
//! drives real wallets and option entities through an in-process message
//! bus, batches the resulting entries into slots and checks the ledger
//! invariants after every slot. The same scenario and seed always produce
//! a bit-identical ledger.
//!
//! Action grammar (YAML or JSON, `action` is the tag):
//!
//! ```yaml
//! seed: 42
//! voters: 3
//! options: [yes, no]
//! units_per_voter: 1      # genesis allocation, or `allocation: [2, 1, 1]`
//! slot_size: 1            # actions per slot
//! nonce_profile: full     # or toy8 (positive controls only)
//! actions:
//!   - { action: delegate, from: 0, to: 1 }          # optional `unit: k`
//!   - { action: transfer, from: 1, to: 2 }
//!   - { action: vote, voter: 2, option: yes }
//!   - { action: reverse, voter: 0 }                 # optional `stub: k`
//!   - { action: preliminary }
//!   - { action: finalize }
//!   - { action: tally }
//!   - { action: random, count: 500 }
//!   - { action: flush }
//! games:
//!   - { game: linker, budget: 1048576, trials: 64 }
//!   - { game: mitm, attempts: 10000 }
//!   - { game: reversal_rights, cases: 1000 }
//! ```
//!
//! `unit: k` selects the k-th spendable unit of the actor in identifier
//! order; `stub: k` the k-th delegation the voter made.

mod games;

pub use games::{
    game_linker, game_mitm, game_reversal_rights, AdversaryView, Expectation, GameReport, LinkerConfig, MitmConfig,
};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commitment::UnitId;
use crate::crypto::{Hash256, Nonce, NonceProfile, PublicKey, Seed};
use crate::ledger::Ledger;
use crate::tally::{preliminary_tally, verify_tally, OptionEntity, OptionRegistry, PreliminaryTally, TallyResult};
use crate::transitions::{Entry, Verdict};
use crate::wallet::{InputAnnounce, Wallet, WireMessage};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(String),
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub voters: usize,
    #[serde(default)]
    pub options: Vec<String>,
    #[serde(default = "one")]
    pub units_per_voter: usize,
    /// Per-voter genesis units; overrides `units_per_voter`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<Vec<usize>>,
    #[serde(default = "one")]
    pub slot_size: usize,
    #[serde(default)]
    pub nonce_profile: NonceProfile,
    #[serde(default)]
    pub actions: Vec<Action>,
    #[serde(default)]
    pub games: Vec<GameSpec>,
}

impl Scenario {
    pub fn new(seed: u64, voters: usize) -> Scenario {
        Scenario {
            seed,
            voters,
            options: Vec::new(),
            units_per_voter: 1,
            allocation: None,
            slot_size: 1,
            nonce_profile: NonceProfile::Full,
            actions: Vec::new(),
            games: Vec::new(),
        }
    }

    pub fn from_path(path: &Path) -> Result<Scenario, SimError> {
        Scenario::parse(&std::fs::read_to_string(path)?)
    }

    /// Accepts YAML (and therefore JSON).
    pub fn parse(text: &str) -> Result<Scenario, SimError> {
        serde_yaml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))
    }

    fn allocation(&self) -> Vec<usize> {
        self.allocation
            .clone()
            .unwrap_or_else(|| vec![self.units_per_voter; self.voters])
    }

    fn check(&self) -> Result<(), SimError> {
        let cfg = |m: String| Err(SimError::Config(m));
        if let Some(a) = &self.allocation {
            if a.len() != self.voters {
                return cfg(format!("allocation lists {} voters, scenario has {}", a.len(), self.voters));
            }
        }
        if self.slot_size == 0 {
            return cfg("slot_size must be positive".into());
        }
        let mut labels = HashSet::new();
        for o in &self.options {
            if !labels.insert(o) {
                return cfg(format!("option {o:?} listed twice"));
            }
        }
        let voter = |i: usize| -> Result<(), SimError> {
            if i >= self.voters {
                return Err(SimError::Config(format!("voter {i} does not exist ({} voters)", self.voters)));
            }
            Ok(())
        };
        for action in &self.actions {
            match action {
                Action::Delegate { from, to, .. } | Action::Transfer { from, to, .. } => {
                    voter(*from)?;
                    voter(*to)?;
                }
                Action::Vote { voter: v, option, .. } => {
                    voter(*v)?;
                    if !labels.contains(option) {
                        return cfg(format!("option {option:?} does not exist"));
                    }
                }
                Action::Reverse { voter: v, .. } => voter(*v)?,
                Action::Random { .. } if self.voters < 2 => {
                    return cfg("random actions need at least two voters".into());
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Delegate {
        from: usize,
        to: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit: Option<usize>,
    },
    Transfer {
        from: usize,
        to: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit: Option<usize>,
    },
    Vote {
        voter: usize,
        option: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit: Option<usize>,
    },
    Reverse {
        voter: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stub: Option<usize>,
    },
    Random {
        count: usize,
    },
    Preliminary,
    Finalize,
    Tally,
    Flush,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "game", rename_all = "snake_case")]
pub enum GameSpec {
    Linker {
        budget: u64,
        trials: usize,
        #[serde(default)]
        leak_nonces: bool,
    },
    Mitm {
        attempts: usize,
    },
    ReversalRights {
        cases: usize,
    },
}

/// Who ended up holding a unit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Identity {
    Voter(usize),
    Option(String),
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Identity::Voter(i) => write!(f, "voter:{i}"),
            Identity::Option(l) => write!(f, "option:{l}"),
        }
    }
}

/// Harness-only knowledge about an accepted output; never part of an adversary view.
#[derive(Clone, Debug)]
pub struct Receipt {
    pub receiver: Identity,
    pub public_key: PublicKey,
    pub nonce: Nonce,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub genesis_count: usize,
    pub slots: u64,
    pub submitted: u64,
    pub accepted: u64,
    pub transitions: u64,
    pub reversals: u64,
    pub verdicts: BTreeMap<String, u64>,
    pub skipped_actions: u64,
    /// Slots after which |live| differed from the genesis count.
    pub conservation_violations: u64,
    /// Slots after which the number of issued identifiers was not genesis + accepted.
    pub uniqueness_violations: u64,
    pub max_lineage_depth: u32,
    pub live_depth_histogram: BTreeMap<u32, u64>,
    pub live_units: usize,
    pub state_hash: Option<Hash256>,
}

/// Everything a completed run leaves behind.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub ledger: Ledger,
    pub metrics: Metrics,
    pub registry: OptionRegistry,
    pub wallets: Vec<Wallet>,
    pub entities: Vec<OptionEntity>,
    /// Every wire message that crossed the bus, in order.
    pub intercepted: Vec<WireMessage>,
    pub preliminary: Option<PreliminaryTally>,
    pub tally: Option<TallyResult>,
    pub nonce_profile: NonceProfile,
    truth: BTreeMap<UnitId, Receipt>,
}

impl RunOutcome {
    pub fn receipt(&self, output: &UnitId) -> Option<&Receipt> {
        self.truth.get(output)
    }

    pub fn receipts(&self) -> &BTreeMap<UnitId, Receipt> {
        &self.truth
    }

    /// Public knowledge only: ledger, keys grouped by owner, intercepted traffic.
    pub fn adversary_view(&self) -> AdversaryView {
        let mut identities = BTreeMap::new();
        for (i, w) in self.wallets.iter().enumerate() {
            identities.insert(Identity::Voter(i).to_string(), w.public_keys());
        }
        for e in &self.entities {
            identities.insert(Identity::Option(e.label().to_string()).to_string(), vec![e.public_key()]);
        }
        AdversaryView {
            ledger: self.ledger.clone(),
            identities,
            registry: self.registry.clone(),
            intercepted: self.intercepted.clone(),
            leaked_nonces: BTreeMap::new(),
        }
    }

    /// A view that also carries every receiver's plaintext nonce.
    pub fn adversary_view_with_leak(&self) -> AdversaryView {
        let mut view = self.adversary_view();
        view.leaked_nonces = self.truth.iter().map(|(u, r)| (*u, r.nonce)).collect();
        view
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SimReport {
    pub seed: u64,
    pub metrics: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preliminary: Option<PreliminaryTally>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tally: Option<TallyResult>,
    pub games: Vec<GameReport>,
}

struct Pending {
    entry: Entry,
    delegated_by: Option<usize>,
    receipt: Option<(UnitId, Receipt)>,
}

struct Engine {
    rng: ChaCha20Rng,
    profile: NonceProfile,
    slot_size: usize,
    wallets: Vec<Wallet>,
    entities: Vec<OptionEntity>,
    registry: OptionRegistry,
    ledger: Ledger,
    pending: Vec<Pending>,
    reserved: HashSet<UnitId>,
    delegations: Vec<Vec<UnitId>>,
    intercepted: Vec<WireMessage>,
    truth: BTreeMap<UnitId, Receipt>,
    metrics: Metrics,
    preliminary: Option<PreliminaryTally>,
    tally: Option<TallyResult>,
    actions_in_slot: usize,
}

/// Executes a scenario's actions.
pub fn run(scenario: &Scenario) -> Result<RunOutcome, SimError> {
    scenario.check()?;
    let mut engine = Engine::new(scenario)?;
    for action in &scenario.actions {
        engine.execute(action)?;
    }
    engine.flush();
    Ok(engine.finish())
}

/// Runs the scenario followed by its configured games.
pub fn run_report(scenario: &Scenario) -> Result<SimReport, SimError> {
    let outcome = run(scenario)?;
    let mut reports = Vec::new();
    for (i, game) in scenario.games.iter().enumerate() {
        let game_seed = scenario.seed.wrapping_add(1 + i as u64);
        reports.push(match game {
            GameSpec::Linker {
                budget,
                trials,
                leak_nonces,
            } => {
                let view = if *leak_nonces {
                    outcome.adversary_view_with_leak()
                } else {
                    outcome.adversary_view()
                };
                game_linker(
                    &view,
                    outcome.receipts(),
                    &LinkerConfig {
                        budget: *budget,
                        trials: *trials,
                        seed: game_seed,
                        expectation: if *leak_nonces || outcome.nonce_profile.is_toy() {
                            Expectation::AllSucceed
                        } else {
                            Expectation::Baseline
                        },
                    },
                )
            }
            GameSpec::Mitm { attempts } => game_mitm(
                &outcome,
                &MitmConfig {
                    attempts: *attempts,
                    seed: game_seed,
                },
            ),
            GameSpec::ReversalRights { cases } => game_reversal_rights(*cases, game_seed),
        });
    }
    Ok(SimReport {
        seed: scenario.seed,
        metrics: outcome.metrics,
        preliminary: outcome.preliminary,
        tally: outcome.tally,
        games: reports,
    })
}

impl Engine {
    fn new(scenario: &Scenario) -> Result<Engine, SimError> {
        let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed);
        let profile = scenario.nonce_profile;
        let mut wallets: Vec<Wallet> = (0..scenario.voters)
            .map(|_| Wallet::with_profile(Seed::random(&mut rng), profile))
            .collect();
        let mut registry = OptionRegistry::new();
        let mut entities = Vec::new();
        for label in &scenario.options {
            let entity = OptionEntity::with_profile(label.clone(), Seed::random(&mut rng), profile);
            registry
                .register(label.clone(), entity.public_key())
                .map_err(|e| SimError::Config(e.to_string()))?;
            entities.push(entity);
        }
        let mut registrations = Vec::new();
        for (wallet, count) in wallets.iter_mut().zip(scenario.allocation()) {
            for _ in 0..count {
                registrations.push(wallet.register_genesis(&mut rng));
            }
        }
        let ledger = Ledger::genesis_with_options(registrations, registry.clone())
            .map_err(|e| SimError::Config(e.to_string()))?;
        for w in &mut wallets {
            w.detect_incoming(ledger.state(), ledger.index());
        }
        let metrics = Metrics {
            genesis_count: ledger.genesis_count(),
            ..Metrics::default()
        };
        Ok(Engine {
            rng,
            profile,
            slot_size: scenario.slot_size,
            delegations: vec![Vec::new(); wallets.len()],
            wallets,
            entities,
            registry,
            ledger,
            pending: Vec::new(),
            reserved: HashSet::new(),
            intercepted: Vec::new(),
            truth: BTreeMap::new(),
            metrics,
            preliminary: None,
            tally: None,
            actions_in_slot: 0,
        })
    }

    fn execute(&mut self, action: &Action) -> Result<(), SimError> {
        match action {
            Action::Delegate { from, to, unit } => self.delegate(*from, *to, *unit),
            Action::Transfer { from, to, unit } => self.transfer(*from, *to, *unit),
            Action::Vote { voter, option, unit } => {
                let idx = self.entities.iter().position(|e| e.label() == option).expect("checked");
                self.vote(*voter, idx, *unit)
            }
            Action::Reverse { voter, stub } => self.reverse(*voter, *stub),
            Action::Random { count } => {
                for _ in 0..*count {
                    self.random_action();
                }
            }
            Action::Preliminary => {
                self.flush();
                let declared = self
                    .entities
                    .iter()
                    .map(|e| (e.label().to_string(), e.declare(self.ledger.state())))
                    .collect();
                self.preliminary = Some(preliminary_tally(self.ledger.state(), &declared));
            }
            Action::Finalize => {
                self.flush();
                if self.ledger.finalize().is_err() {
                    self.metrics.skipped_actions += 1;
                }
            }
            Action::Tally => {
                self.flush();
                if !self.ledger.is_finalized() {
                    self.ledger.finalize().expect("not yet finalized");
                }
                let state = self.ledger.state();
                let reveals: Vec<_> = self.entities.iter().map(|e| e.reveal(state)).collect();
                self.tally = Some(
                    verify_tally(self.ledger.index(), state, &reveals, &self.registry).expect("state is frozen"),
                );
            }
            Action::Flush => self.flush(),
        }
        Ok(())
    }

    fn available_units(&self, voter: usize) -> Vec<UnitId> {
        self.wallets[voter]
            .spendable_units(self.ledger.state())
            .into_iter()
            .map(|r| r.unit)
            .filter(|u| !self.reserved.contains(u))
            .collect()
    }

    fn pick_unit(&mut self, voter: usize, choice: Option<usize>) -> Option<UnitId> {
        let units = self.available_units(voter);
        let unit = match choice {
            Some(k) => units.get(k).copied(),
            None => units.first().copied(),
        };
        if unit.is_none() {
            self.metrics.skipped_actions += 1;
        }
        unit
    }

    fn delegate_unit(&mut self, from: usize, to: usize, unit: UnitId) {
        let offer = self.wallets[to].make_delegation_offer(&mut self.rng);
        self.intercepted.push(WireMessage::DelegationOffer(offer));
        let (transition, stub) = self.wallets[from]
            .accept_delegation_offer(&unit, &offer)
            .expect("unit is spendable");
        let pending = self.wallets[to].pending_offers().last().expect("offer just made").clone();
        let receipt = Receipt {
            receiver: Identity::Voter(to),
            public_key: self.wallets[to].keypair(pending.key_index).public_key(),
            nonce: pending.nonce,
        };
        self.submit(Pending {
            entry: transition.into(),
            delegated_by: Some(from),
            receipt: Some((stub.delegated_output, receipt)),
        });
        self.reserved.insert(unit);
    }

    fn delegate(&mut self, from: usize, to: usize, choice: Option<usize>) {
        if let Some(unit) = self.pick_unit(from, choice) {
            self.delegate_unit(from, to, unit);
        }
    }

    fn transfer_unit(&mut self, from: usize, to: usize, unit: UnitId) {
        let announce = InputAnnounce { input_unit: unit };
        self.intercepted.push(WireMessage::InputAnnounce(announce));
        let offer = self.wallets[to].make_transfer_offer(&announce, &mut self.rng);
        self.intercepted.push(WireMessage::TransferOffer(offer));
        let transition = self.wallets[from]
            .accept_transfer_offer(&unit, &offer)
            .expect("unit is spendable");
        let pending = self.wallets[to].pending_offers().last().expect("offer just made").clone();
        let receipt = Receipt {
            receiver: Identity::Voter(to),
            public_key: self.wallets[to].keypair(pending.key_index).public_key(),
            nonce: pending.nonce,
        };
        self.submit(Pending {
            entry: transition.into(),
            delegated_by: None,
            receipt: Some((offer.output_unit, receipt)),
        });
        self.reserved.insert(unit);
    }

    fn transfer(&mut self, from: usize, to: usize, choice: Option<usize>) {
        if let Some(unit) = self.pick_unit(from, choice) {
            self.transfer_unit(from, to, unit);
        }
    }

    fn vote_unit(&mut self, voter: usize, entity: usize, unit: UnitId) {
        let announce = InputAnnounce { input_unit: unit };
        self.intercepted.push(WireMessage::InputAnnounce(announce));
        let offer = self.entities[entity].request_vote_offer(&announce, &mut self.rng);
        self.intercepted.push(WireMessage::TransferOffer(offer));
        let transition = self.wallets[voter]
            .accept_transfer_offer(&unit, &offer)
            .expect("unit is spendable");
        let claim = self.entities[entity]
            .issued()
            .last()
            .copied()
            .expect("offer just made");
        let receipt = Receipt {
            receiver: Identity::Option(self.entities[entity].label().to_string()),
            public_key: self.entities[entity].public_key(),
            nonce: claim.nonce,
        };
        self.submit(Pending {
            entry: transition.into(),
            delegated_by: None,
            receipt: Some((offer.output_unit, receipt)),
        });
        self.reserved.insert(unit);
    }

    fn vote(&mut self, voter: usize, entity: usize, choice: Option<usize>) {
        if let Some(unit) = self.pick_unit(voter, choice) {
            self.vote_unit(voter, entity, unit);
        }
    }

    /// Delegations of `voter` whose lineage end is live, unreserved and not already theirs.
    fn reversible(&self, voter: usize) -> Vec<(usize, UnitId)> {
        let state = self.ledger.state();
        let index = self.ledger.index();
        self.delegations[voter]
            .iter()
            .enumerate()
            .filter(|(_, out)| !index.is_reversed(out))
            .filter(|(_, out)| {
                match index.live_descendant(state, out) {
                    Ok(Some(d)) => {
                        !self.reserved.contains(&d) && self.wallets[voter].record(&d).is_none_or(|r| r.spent)
                    }
                    _ => false,
                }
            })
            .map(|(i, out)| (i, *out))
            .collect()
    }

    fn reverse_stub(&mut self, voter: usize, delegated_output: UnitId) {
        let state = self.ledger.state().clone();
        let target = self
            .ledger
            .index()
            .live_descendant(&state, &delegated_output)
            .ok()
            .flatten();
        let built = self.wallets[voter].build_reversal(&delegated_output, &state, self.ledger.index(), &mut self.rng);
        match (built, target) {
            (Ok(reversal), Some(target)) => {
                let pending = self.wallets[voter].pending_offers().last().expect("reversal stage").clone();
                let receipt = Receipt {
                    receiver: Identity::Voter(voter),
                    public_key: self.wallets[voter].keypair(pending.key_index).public_key(),
                    nonce: pending.nonce,
                };
                let new_output = reversal.new_output;
                self.submit(Pending {
                    entry: reversal.into(),
                    delegated_by: None,
                    receipt: Some((new_output, receipt)),
                });
                self.reserved.insert(target);
            }
            _ => self.metrics.skipped_actions += 1,
        }
    }

    fn reverse(&mut self, voter: usize, stub: Option<usize>) {
        let chosen = match stub {
            Some(k) => self.delegations[voter].get(k).copied(),
            None => self.reversible(voter).last().map(|(_, out)| *out),
        };
        match chosen {
            Some(out) => self.reverse_stub(voter, out),
            None => self.metrics.skipped_actions += 1,
        }
    }

    /// A uniformly drawn voter satisfying `pred`; after 2n misses, the first one in order.
    fn draw_voter(&mut self, pred: impl Fn(&Engine, usize) -> bool) -> Option<usize> {
        let n = self.wallets.len();
        for _ in 0..2 * n {
            let v = self.rng.gen_range(0..n);
            if pred(self, v) {
                return Some(v);
            }
        }
        (0..n).find(|&v| pred(self, v))
    }

    fn random_action(&mut self) {
        let voters = self.wallets.len();
        let roll: u32 = self.rng.gen_range(0..100);
        if roll < 15 {
            if let Some(voter) = self.draw_voter(|e, v| !e.reversible(v).is_empty()) {
                let options = self.reversible(voter);
                let (_, out) = options[self.rng.gen_range(0..options.len())];
                self.reverse_stub(voter, out);
                return;
            }
        }
        let Some(from) = self.draw_voter(|e, v| !e.available_units(v).is_empty()) else {
            self.metrics.skipped_actions += 1;
            return;
        };
        let units = self.available_units(from);
        let unit = units[self.rng.gen_range(0..units.len())];
        let mut to = self.rng.gen_range(0..voters - 1);
        if to >= from {
            to += 1;
        }
        match roll {
            r if r < 50 || (r >= 85 && self.entities.is_empty()) => self.delegate_unit(from, to, unit),
            r if r < 85 => self.transfer_unit(from, to, unit),
            _ => {
                let entity = self.rng.gen_range(0..self.entities.len());
                self.vote_unit(from, entity, unit);
            }
        }
    }

    fn submit(&mut self, pending: Pending) {
        self.pending.push(pending);
        self.actions_in_slot += 1;
        if self.actions_in_slot >= self.slot_size {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let batch = std::mem::take(&mut self.pending);
        self.actions_in_slot = 0;
        self.reserved.clear();
        let entries: Vec<Entry> = batch.iter().map(|p| p.entry.clone()).collect();
        let verdicts = self.ledger.append_slot(entries);
        for (p, verdict) in batch.into_iter().zip(verdicts) {
            self.record_verdict(&p, verdict);
        }
        let state = self.ledger.state();
        let index = self.ledger.index();
        for w in &mut self.wallets {
            w.detect_incoming(state, index);
        }
        self.metrics.slots += 1;
        if state.len() != self.metrics.genesis_count {
            self.metrics.conservation_violations += 1;
        }
        if index.len() as u64 != self.metrics.genesis_count as u64 + self.metrics.accepted {
            self.metrics.uniqueness_violations += 1;
        }
    }

    fn record_verdict(&mut self, p: &Pending, verdict: Verdict) {
        self.metrics.submitted += 1;
        let key = verdict.reason.map_or_else(|| "Accepted".to_string(), |r| r.to_string());
        *self.metrics.verdicts.entry(key).or_default() += 1;
        let delegated_output = match &p.entry {
            Entry::Transition(t) => Some(t.output_unit),
            _ => None,
        };
        if verdict.accepted {
            self.metrics.accepted += 1;
            match p.entry {
                Entry::Transition(_) => self.metrics.transitions += 1,
                Entry::Reversal(_) => self.metrics.reversals += 1,
                Entry::Genesis(_) => {}
            }
            if let Some((unit, receipt)) = &p.receipt {
                self.truth.insert(*unit, receipt.clone());
            }
            if let (Some(from), Some(out)) = (p.delegated_by, delegated_output) {
                self.delegations[from].push(out);
            }
        } else if let (Some(from), Some(out)) = (p.delegated_by, delegated_output) {
            self.wallets[from].forget_stub(&out);
        }
    }

    fn finish(mut self) -> RunOutcome {
        let state = self.ledger.state();
        let index = self.ledger.index();
        self.metrics.live_units = state.len();
        self.metrics.state_hash = Some(state.snapshot_hash());
        for unit in state.live() {
            let depth = index.stage_depth(unit).unwrap_or(0);
            *self.metrics.live_depth_histogram.entry(depth).or_default() += 1;
            self.metrics.max_lineage_depth = self.metrics.max_lineage_depth.max(depth);
        }
        RunOutcome {
            ledger: self.ledger,
            metrics: self.metrics,
            registry: self.registry,
            wallets: self.wallets,
            entities: self.entities,
            intercepted: self.intercepted,
            preliminary: self.preliminary,
            tally: self.tally,
            nonce_profile: self.profile,
            truth: self.truth,
        }
    }
}

/// Units of `outcome` that each option entity can open, keyed by label.
pub fn declarations(outcome: &RunOutcome) -> BTreeMap<String, BTreeSet<UnitId>> {
    outcome
        .entities
        .iter()
        .map(|e| (e.label().to_string(), e.declare(outcome.ledger.state())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_script_is_genesis_only() {
        let out = run(&Scenario::new(1, 4)).unwrap();
        assert_eq!(out.ledger.slots().len(), 1);
        assert_eq!(out.ledger.state().len(), 4);
        assert_eq!(out.metrics.submitted, 0);
    }

    #[test]
    fn missing_actor_is_a_configuration_error() {
        let mut s = Scenario::new(1, 2);
        s.actions.push(Action::Delegate {
            from: 0,
            to: 5,
            unit: None,
        });
        assert!(matches!(run(&s), Err(SimError::Config(_))));
        let mut s = Scenario::new(1, 2);
        s.actions.push(Action::Vote {
            voter: 0,
            option: "nope".into(),
            unit: None,
        });
        assert!(matches!(run(&s), Err(SimError::Config(_))));
    }

    #[test]
    fn scenario_yaml_grammar() {
        let s = Scenario::parse(
            "seed: 3\nvoters: 2\noptions: [yes]\nactions:\n  - {action: delegate, from: 0, to: 1}\n  - {action: vote, voter: 1, option: yes}\n  - action: finalize\ngames:\n  - {game: mitm, attempts: 10}\n",
        )
        .unwrap();
        assert_eq!(s.actions.len(), 3);
        assert_eq!(s.actions[2], Action::Finalize);
        assert_eq!(s.games, vec![GameSpec::Mitm { attempts: 10 }]);
        assert_eq!(s.slot_size, 1);
    }

    #[test]
    fn delegate_then_vote_flows_through() {
        let mut s = Scenario::new(5, 2);
        s.options = vec!["yes".into()];
        s.actions = vec![
            Action::Delegate {
                from: 0,
                to: 1,
                unit: None,
            },
            Action::Vote {
                voter: 1,
                option: "yes".into(),
                unit: None,
            },
            Action::Tally,
        ];
        let out = run(&s).unwrap();
        assert_eq!(out.metrics.accepted, 2);
        let tally = out.tally.unwrap();
        assert_eq!(tally.counts["yes"], 1);
        assert_eq!(tally.unallocated, 1);
    }
}
