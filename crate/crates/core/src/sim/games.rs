//! Adversary games over completed runs.
//!
//! Each game counts adversary successes with an exact predicate and
//! compares them with what the game expects: the random-guess baseline,
//! zero, or (for positive controls) every trial.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Receipt, RunOutcome};
use crate::commitment::{compute_stage, inner_commitment, unit_id, UnitId};
use crate::crypto::{derive_keypair, gen_nonce, hash, Hash256, KeyPair, Nonce, PublicKey, Seed, Signature};
use crate::ledger::{EdgeKind, Ledger};
use crate::tally::OptionRegistry;
use crate::transitions::{Entry, Reversal, Transition};
use crate::wallet::{DelegationOffer, Wallet, WireMessage};

/// What an eavesdropper with full ledger access sees.
#[derive(Clone, Debug)]
pub struct AdversaryView {
    pub ledger: Ledger,
    /// Every public key, grouped by owner label (`voter:3`, `option:yes`).
    pub identities: BTreeMap<String, Vec<PublicKey>>,
    pub registry: OptionRegistry,
    pub intercepted: Vec<WireMessage>,
    /// Empty unless the view models a nonce leak.
    pub leaked_nonces: BTreeMap<UnitId, Nonce>,
}

impl AdversaryView {
    fn delegation_offers(&self) -> Vec<DelegationOffer> {
        self.intercepted
            .iter()
            .filter_map(|m| match m {
                WireMessage::DelegationOffer(o) => Some(*o),
                _ => None,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// Successes within 3σ of trials × baseline.
    Baseline,
    /// No trial may succeed.
    NoSuccess,
    /// Every trial must succeed (positive controls).
    AllSucceed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameReport {
    pub game: String,
    pub trials: u64,
    pub successes: u64,
    pub baseline_probability: f64,
    pub expectation: Expectation,
    pub passed: bool,
    pub detail: BTreeMap<String, u64>,
}

impl GameReport {
    fn new(game: &str, trials: u64, successes: u64, baseline: f64, expectation: Expectation) -> GameReport {
        let passed = match expectation {
            Expectation::NoSuccess => successes == 0,
            Expectation::AllSucceed => successes == trials,
            Expectation::Baseline => within_three_sigma(trials, successes, baseline),
        };
        GameReport {
            game: game.to_string(),
            trials,
            successes,
            baseline_probability: baseline,
            expectation,
            passed,
            detail: BTreeMap::new(),
        }
    }

    pub fn success_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }
}

/// Two-sided binomial bound |k - np| <= 3 sqrt(np(1-p)).
pub fn within_three_sigma(trials: u64, successes: u64, p: f64) -> bool {
    let n = trials as f64;
    let mean = n * p;
    let sigma = (n * p * (1.0 - p)).sqrt();
    (successes as f64 - mean).abs() <= 3.0 * sigma
}

#[derive(Clone, Debug)]
pub struct LinkerConfig {
    /// (nonce, key) guesses per target.
    pub budget: u64,
    /// Targets sampled from the ledger; 0 means all.
    pub trials: usize,
    pub seed: u64,
    pub expectation: Expectation,
}

/// The counter-th nonce guess; the first 256 are exactly the toy nonces.
fn counter_nonce(counter: u64) -> Nonce {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&counter.to_le_bytes());
    Nonce::from_bytes(bytes)
}

/// Tries to name the receiver of every sampled live transition output.
///
/// Targets are transitions whose output is still live: a spent unit names
/// its owner through the spending entry's `sender_pk`, so only current
/// holdings are meant to stay hidden. The adversary enumerates nonces in
/// counter order against every known key until the budget runs out, then
/// falls back to a uniform guess over the candidate identities.
pub fn game_linker(view: &AdversaryView, truth: &BTreeMap<UnitId, Receipt>, config: &LinkerConfig) -> GameReport {
    let candidates: Vec<(&String, Hash256)> = view
        .identities
        .iter()
        .flat_map(|(label, keys)| keys.iter().map(move |k| (label, hash(k.as_bytes()))))
        .collect();
    let labels: Vec<&String> = view.identities.keys().collect();
    let state = view.ledger.state();
    let mut targets: Vec<(UnitId, UnitId, &Receipt)> = view
        .ledger
        .entries()
        .filter_map(|(_, e)| match e {
            Entry::Transition(t) if state.is_live(&t.output_unit) => {
                truth.get(&t.output_unit).map(|r| (t.input_unit, t.output_unit, r))
            }
            _ => None,
        })
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    if config.trials > 0 && targets.len() > config.trials {
        for i in 0..config.trials {
            let j = rng.gen_range(i..targets.len());
            targets.swap(i, j);
        }
        targets.truncate(config.trials);
    }
    let baseline = if labels.is_empty() { 0.0 } else { 1.0 / labels.len() as f64 };

    // (hit by search, fallback guess correct)
    let results: Vec<(bool, bool)> = targets
        .par_iter()
        .enumerate()
        .map(|(i, (input, output, receipt))| {
            let truth_label = receipt.receiver.to_string();
            if let Some(n) = view.leaked_nonces.get(output) {
                let h_n = hash(n.as_bytes());
                for (label, h_p) in &candidates {
                    if unit_id(&inner_commitment(&h_n, h_p), input) == *output {
                        return (**label == truth_label, false);
                    }
                }
            }
            let mut spent = 0u64;
            let mut counter = 0u64;
            while spent < config.budget && !candidates.is_empty() {
                let h_n = hash(counter_nonce(counter).as_bytes());
                for (label, h_p) in &candidates {
                    if spent == config.budget {
                        break;
                    }
                    spent += 1;
                    if unit_id(&inner_commitment(&h_n, h_p), input) == *output {
                        return (**label == truth_label, false);
                    }
                }
                counter += 1;
            }
            let mut trial_rng = ChaCha20Rng::seed_from_u64(config.seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let guess = if labels.is_empty() {
                false
            } else {
                *labels[trial_rng.gen_range(0..labels.len())] == truth_label
            };
            (false, guess)
        })
        .collect();

    let search_hits = results.iter().filter(|r| r.0).count() as u64;
    let guess_hits = results.iter().filter(|r| r.1).count() as u64;
    let mut report = GameReport::new(
        "linker",
        results.len() as u64,
        search_hits + guess_hits,
        baseline,
        config.expectation,
    );
    report.detail.insert("candidates".into(), labels.len() as u64);
    report.detail.insert("keys".into(), candidates.len() as u64);
    report.detail.insert("budget".into(), config.budget);
    report.detail.insert("search_hits".into(), search_hits);
    report.detail.insert("guess_hits".into(), guess_hits);
    report
}

#[derive(Clone, Debug)]
pub struct MitmConfig {
    pub attempts: usize,
    pub seed: u64,
}

/// Honest transitions caught in flight, plus the offers that produced them.
fn in_flight(outcome: &RunOutcome, rng: &mut ChaCha20Rng, want: usize) -> (Vec<Transition>, Vec<DelegationOffer>) {
    let mut wallets: Vec<Wallet> = outcome.wallets.clone();
    let state = outcome.ledger.state();
    let mut pending = Vec::new();
    let mut offers = Vec::new();
    let n = wallets.len();
    if n < 2 {
        return (pending, offers);
    }
    for from in 0..n {
        if pending.len() >= want {
            break;
        }
        let unit = match wallets[from].spendable_units(state).first() {
            Some(r) => r.unit,
            None => continue,
        };
        let to = (from + 1 + rng.gen_range(0..n - 1)) % n;
        let offer = wallets[to].make_delegation_offer(rng);
        if let Ok((t, _)) = wallets[from].accept_delegation_offer(&unit, &offer) {
            pending.push(t);
            offers.push(offer);
        }
    }
    (pending, offers)
}

fn random_signature<R: RngCore>(rng: &mut R) -> Signature {
    let mut bytes = [0u8; 64];
    rng.fill_bytes(&mut bytes);
    Signature::from_bytes(bytes)
}

/// Submits forged entries built only from public and intercepted data.
///
/// Kinds cycle through: redirected outputs under the original signature,
/// random signatures, re-signing with the adversary key, claiming the input
/// under the adversary key, spending delegated units through intercepted
/// offer hashes, front-running reversals, and verbatim replays.
pub fn game_mitm(outcome: &RunOutcome, config: &MitmConfig) -> GameReport {
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let view = outcome.adversary_view();
    let adversary: KeyPair = derive_keypair(&Seed::random(&mut rng), 0);
    let adv_pk = adversary.public_key();
    let (pending, fresh_offers) = in_flight(outcome, &mut rng, 64);
    let mut offers = view.delegation_offers();
    offers.extend(fresh_offers);

    let state = view.ledger.state();
    let index = view.ledger.index();
    // Delegation edges the adversary can reconstruct from intercepted offers.
    let mut delegated: Vec<(DelegationOffer, Transition)> = Vec::new();
    for (_, entry) in view.ledger.entries() {
        if let Entry::Transition(t) = entry {
            for o in &offers {
                if unit_id(&inner_commitment(&o.h_n, &o.h_p), &t.input_unit) == t.output_unit {
                    delegated.push((*o, t.clone()));
                }
            }
        }
    }
    let live_delegated: Vec<&(DelegationOffer, Transition)> =
        delegated.iter().filter(|(_, t)| state.is_live(&t.output_unit)).collect();
    let reversible: Vec<&(DelegationOffer, Transition)> = delegated
        .iter()
        .filter(|(_, t)| matches!(index.live_descendant(state, &t.output_unit), Ok(Some(_))))
        .collect();
    let replayable: Vec<Entry> = view
        .ledger
        .entries()
        .filter(|(_, e)| !matches!(e, Entry::Genesis(_)))
        .map(|(_, e)| e.clone())
        .collect();

    let fresh_out = |rng: &mut ChaCha20Rng, prev: &UnitId| compute_stage(&gen_nonce(rng), &adv_pk, prev).id;
    let mut forged: Vec<(&'static str, Entry)> = Vec::with_capacity(config.attempts);
    for i in 0..config.attempts {
        let pick = |rng: &mut ChaCha20Rng, len: usize| rng.gen_range(0..len);
        let kind = i % 7;
        let entry: (&'static str, Entry) = match kind {
            4 if !live_delegated.is_empty() => {
                let (o, t) = live_delegated[pick(&mut rng, live_delegated.len())];
                let out = fresh_out(&mut rng, &t.output_unit);
                let forged = Transition::sign_unchecked(o.h_n, &adversary, t.input_unit, t.output_unit, out);
                ("spend_with_offer", forged.into())
            }
            5 if !reversible.is_empty() => {
                let (o, t) = reversible[pick(&mut rng, reversible.len())];
                let target = index
                    .live_descendant(state, &t.output_unit)
                    .ok()
                    .flatten()
                    .unwrap_or(t.output_unit);
                let new = fresh_out(&mut rng, &target);
                let mut r = Reversal::sign_unchecked(o.h_n, o.h_p, &adversary, t.input_unit, t.output_unit, new);
                if i % 2 == 1 {
                    r.sender_pk = t.sender_pk;
                    r.signature = random_signature(&mut rng);
                }
                ("front_run_reversal", r.into())
            }
            6 if !replayable.is_empty() => ("replay", replayable[pick(&mut rng, replayable.len())].clone()),
            _ if pending.is_empty() => {
                // nothing in flight: spend a random live unit under a stranger's name
                let live: Vec<&UnitId> = state.live().iter().collect();
                let unit = *live[pick(&mut rng, live.len())];
                let prev = index.parent(&unit).copied().unwrap_or(unit);
                let out = fresh_out(&mut rng, &unit);
                let mut t = Transition::sign_unchecked(hash(&[0]), &adversary, prev, unit, out);
                t.signature = random_signature(&mut rng);
                ("blind", t.into())
            }
            k => {
                let victim = &pending[pick(&mut rng, pending.len())];
                let mut t = victim.clone();
                match k {
                    0 => {
                        t.output_unit = fresh_out(&mut rng, &victim.input_unit);
                        ("redirect_output", t.into())
                    }
                    2 => {
                        t.output_unit = fresh_out(&mut rng, &victim.input_unit);
                        t.signature = adversary.sign(&t.signing_payload());
                        ("resign_foreign_pk", t.into())
                    }
                    3 => {
                        let out = fresh_out(&mut rng, &victim.input_unit);
                        let own = Transition::sign_unchecked(
                            victim.nonce_hash,
                            &adversary,
                            victim.prev_unit,
                            victim.input_unit,
                            out,
                        );
                        ("claim_input", own.into())
                    }
                    _ => {
                        t.output_unit = fresh_out(&mut rng, &victim.input_unit);
                        t.signature = random_signature(&mut rng);
                        ("random_signature", t.into())
                    }
                }
            }
        };
        forged.push(entry);
    }

    let mut ledger = view.ledger.clone();
    let mut detail: BTreeMap<String, u64> = BTreeMap::new();
    let mut accepted = 0u64;
    for chunk in forged.chunks(1000) {
        let verdicts = ledger.append_slot(chunk.iter().map(|(_, e)| e.clone()).collect());
        for ((kind, _), v) in chunk.iter().zip(verdicts) {
            *detail.entry(format!("kind:{kind}")).or_default() += 1;
            match v.reason {
                None => {
                    accepted += 1;
                    *detail.entry("accepted".into()).or_default() += 1;
                }
                Some(r) => *detail.entry(format!("reject:{r}")).or_default() += 1,
            }
        }
    }
    let mut report = GameReport::new("mitm", forged.len() as u64, accepted, 0.0, Expectation::NoSuccess);
    report.detail = detail;
    report.detail.insert("intercepted_offers".into(), offers.len() as u64);
    report
}

/// Scripted rights matrix: for each case A delegates to B and C transfers to D;
/// B (right hashes, own key), C (guessed hashes, own key) and a third party E
/// (intercepted hashes, own key) attempt reversals before A reverses.
pub fn game_reversal_rights(cases: usize, seed: u64) -> GameReport {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut a = Wallet::new(Seed::random(&mut rng));
    let mut b = Wallet::new(Seed::random(&mut rng));
    let mut c = Wallet::new(Seed::random(&mut rng));
    let mut d = Wallet::new(Seed::random(&mut rng));
    let e = derive_keypair(&Seed::random(&mut rng), 0);
    let mut detail: BTreeMap<String, u64> = BTreeMap::new();
    let bump = |detail: &mut BTreeMap<String, u64>, k: String| *detail.entry(k).or_default() += 1;

    let mut registrations = Vec::with_capacity(2 * cases);
    for _ in 0..cases {
        registrations.push(a.register_genesis(&mut rng));
        registrations.push(c.register_genesis(&mut rng));
    }
    let mut ledger = match Ledger::genesis_init(registrations) {
        Ok(l) => l,
        Err(_) => {
            let mut r = GameReport::new("reversal_rights", 0, 0, 0.0, Expectation::NoSuccess);
            r.passed = false;
            r.detail.insert("exceptions".into(), 1);
            return r;
        }
    };
    a.detect_incoming(ledger.state(), ledger.index());
    c.detect_incoming(ledger.state(), ledger.index());

    let a_units: Vec<UnitId> = a.spendable_units(ledger.state()).iter().map(|r| r.unit).collect();
    let c_units: Vec<UnitId> = c.spendable_units(ledger.state()).iter().map(|r| r.unit).collect();
    let mut slot1 = Vec::with_capacity(2 * cases);
    let mut delegations = Vec::with_capacity(cases);
    let mut transfers = Vec::with_capacity(cases);
    let mut exceptions = 0u64;
    for k in 0..cases {
        let offer = b.make_delegation_offer(&mut rng);
        match a.accept_delegation_offer(&a_units[k], &offer) {
            Ok((t, stub)) => {
                slot1.push(Entry::from(t));
                delegations.push((offer, stub));
            }
            Err(_) => exceptions += 1,
        }
        let announce = crate::wallet::InputAnnounce { input_unit: c_units[k] };
        let t_offer = d.make_transfer_offer(&announce, &mut rng);
        match c.accept_transfer_offer(&c_units[k], &t_offer) {
            Ok(t) => {
                slot1.push(Entry::from(t.clone()));
                transfers.push(t);
            }
            Err(_) => exceptions += 1,
        }
    }
    let setup_rejected = ledger.append_slot(slot1).iter().filter(|v| !v.accepted).count() as u64;
    exceptions += setup_rejected;
    for w in [&mut a, &mut b, &mut c, &mut d] {
        w.detect_incoming(ledger.state(), ledger.index());
    }

    // attempts: (role, entry); sender reversals go last so the others see a live descendant
    let mut attempts: Vec<(&'static str, Entry)> = Vec::with_capacity(4 * cases);
    for (offer, stub) in &delegations {
        let own_key = match b.record(&stub.delegated_output) {
            Some(r) => b.keypair(r.key_index),
            None => {
                exceptions += 1;
                continue;
            }
        };
        let new = compute_stage(&gen_nonce(&mut rng), &own_key.public_key(), &stub.delegated_output).id;
        let r = Reversal::sign_unchecked(
            offer.h_n,
            offer.h_p,
            &own_key,
            stub.delegated_input,
            stub.delegated_output,
            new,
        );
        attempts.push(("delegation_receiver", r.into()));

        let new = compute_stage(&gen_nonce(&mut rng), &e.public_key(), &stub.delegated_output).id;
        let r = Reversal::sign_unchecked(offer.h_n, offer.h_p, &e, stub.delegated_input, stub.delegated_output, new);
        attempts.push(("third_party", r.into()));
    }
    for t in &transfers {
        let key = match c.record(&t.input_unit) {
            Some(r) => c.keypair(r.key_index),
            None => {
                exceptions += 1;
                continue;
            }
        };
        let guess_n = hash(gen_nonce(&mut rng).as_bytes());
        let guess_p = hash(gen_nonce(&mut rng).as_bytes());
        let new = compute_stage(&gen_nonce(&mut rng), &key.public_key(), &t.output_unit).id;
        let r = Reversal::sign_unchecked(guess_n, guess_p, &key, t.input_unit, t.output_unit, new);
        attempts.push(("transfer_sender", r.into()));
    }
    for (_, stub) in &delegations {
        let state = ledger.state().clone();
        match a.build_reversal(&stub.delegated_output, &state, ledger.index(), &mut rng) {
            Ok(r) => attempts.push(("delegation_sender", r.into())),
            Err(_) => exceptions += 1,
        }
    }

    let verdicts = ledger.append_slot(attempts.iter().map(|(_, e)| e.clone()).collect());
    let mut unauthorized = 0u64;
    let mut sender_accepted = 0u64;
    for ((role, _), v) in attempts.iter().zip(verdicts) {
        let outcome = v.reason.map_or_else(|| "accepted".to_string(), |r| r.to_string());
        bump(&mut detail, format!("{role}:{outcome}"));
        match (*role, v.accepted) {
            ("delegation_sender", true) => sender_accepted += 1,
            ("delegation_sender", false) => {}
            (_, true) => unauthorized += 1,
            _ => {}
        }
    }
    // the matrix also requires the lineage to be back with the sender
    let reclaimed = delegations
        .iter()
        .filter(|(_, stub)| {
            ledger
                .index()
                .consumption(&stub.delegated_output)
                .is_some_and(|c| c.kind == EdgeKind::Reversal)
        })
        .count() as u64;

    let trials = 4 * cases as u64;
    let mut report = GameReport::new("reversal_rights", trials, unauthorized, 0.0, Expectation::NoSuccess);
    report.passed = unauthorized == 0 && sender_accepted == cases as u64 && exceptions == 0;
    report.detail = detail;
    report.detail.insert("cases".into(), cases as u64);
    report.detail.insert("sender_accepted".into(), sender_accepted);
    report.detail.insert("reclaimed".into(), reclaimed);
    report.detail.insert("exceptions".into(), exceptions);
    report
}
