use std::collections::BTreeSet;

use llv_core::commitment::{compute_stage, verify_stage};
use llv_core::crypto::hash;
use llv_core::ledger::{replay, Ledger};
use llv_core::sim::{self, Action, Scenario};
use llv_core::tally::{verify_tally, VoteClaim};
use llv_core::{Hash256, Nonce, PublicKey, UnitId};
use proptest::prelude::*;

fn arb32() -> impl Strategy<Value = [u8; 32]> {
    prop::array::uniform32(any::<u8>())
}

fn arb_scenario() -> impl Strategy<Value = Scenario> {
    (any::<u64>(), 2usize..8, 1usize..3, 1usize..5, 0usize..60, 0usize..3).prop_map(
        |(seed, voters, units, slot_size, count, options)| {
            let mut s = Scenario::new(seed, voters);
            s.units_per_voter = units;
            s.slot_size = slot_size;
            s.options = (0..options).map(|i| format!("opt{i}")).collect();
            s.actions = vec![Action::Random { count }];
            s
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn stage_verifies_and_any_field_change_breaks_it(
        n in arb32(), pk in arb32(), prev in arb32(), which in 0usize..4, byte in 0usize..32, bit in 0u8..8
    ) {
        let nonce = Nonce::from_bytes(n);
        let pk = PublicKey::from_bytes(pk);
        let prev = UnitId(Hash256::from_bytes(prev));
        let stage = compute_stage(&nonce, &pk, &prev);
        let h_n = hash(nonce.as_bytes());
        prop_assert!(verify_stage(&h_n, &pk, &prev, &stage.id));

        let flip = |mut b: [u8; 32]| { b[byte] ^= 1 << bit; b };
        let ok = match which {
            0 => verify_stage(&Hash256::from_bytes(flip(*h_n.as_bytes())), &pk, &prev, &stage.id),
            1 => verify_stage(&h_n, &PublicKey::from_bytes(flip(*pk.as_bytes())), &prev, &stage.id),
            2 => verify_stage(&h_n, &pk, &UnitId(Hash256::from_bytes(flip(*prev.0.as_bytes()))), &stage.id),
            _ => verify_stage(&h_n, &pk, &prev, &UnitId(Hash256::from_bytes(flip(*stage.id.0.as_bytes())))),
        };
        prop_assert!(!ok);
    }

    #[test]
    fn distinct_nonces_give_distinct_units(a in arb32(), b in arb32(), pk in arb32(), prev in arb32()) {
        prop_assume!(a != b);
        let pk = PublicKey::from_bytes(pk);
        let prev = UnitId(Hash256::from_bytes(prev));
        prop_assert_ne!(
            compute_stage(&Nonce::from_bytes(a), &pk, &prev).id,
            compute_stage(&Nonce::from_bytes(b), &pk, &prev).id
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_runs_conserve_power_and_replay(s in arb_scenario()) {
        let out = sim::run(&s).unwrap();
        let ledger = &out.ledger;
        prop_assert_eq!(out.metrics.conservation_violations, 0);
        prop_assert_eq!(out.metrics.uniqueness_violations, 0);
        prop_assert_eq!(ledger.state().len(), ledger.genesis_count());
        let created = ledger.index().created();
        prop_assert_eq!(created.iter().collect::<BTreeSet<_>>().len(), created.len());

        let (state, index) = replay(ledger).unwrap();
        prop_assert_eq!(&state, ledger.state());
        prop_assert_eq!(&index, ledger.index());
        let reparsed = Ledger::from_jsonl(&ledger.to_jsonl()).unwrap();
        prop_assert_eq!(reparsed.state().snapshot_hash(), ledger.state().snapshot_hash());
        prop_assert_eq!(sim::run(&s).unwrap().ledger.to_jsonl(), ledger.to_jsonl());
    }

    #[test]
    fn every_live_unit_has_exactly_one_holder(s in arb_scenario()) {
        let out = sim::run(&s).unwrap();
        let state = out.ledger.state();
        let mut held: Vec<UnitId> = Vec::new();
        for w in &out.wallets {
            held.extend(w.spendable_units(state).iter().map(|r| r.unit));
        }
        for e in &out.entities {
            held.extend(e.received(state).iter().map(|c| c.unit));
        }
        let distinct: BTreeSet<UnitId> = held.iter().copied().collect();
        prop_assert_eq!(distinct.len(), held.len(), "a unit is claimed by two holders");
        prop_assert_eq!(&distinct, state.live());
    }

    #[test]
    fn tally_partitions_the_live_set(s in arb_scenario(), forged in prop::collection::vec((any::<prop::sample::Index>(), arb32()), 0..6)) {
        prop_assume!(!s.options.is_empty());
        let mut out = sim::run(&s).unwrap();
        out.ledger.finalize().unwrap();
        let state = out.ledger.state();
        let mut reveals: Vec<_> = out.entities.iter().map(|e| e.reveal(state)).collect();
        // dishonest extra claims on arbitrary live units
        let live: Vec<UnitId> = state.live().iter().copied().collect();
        for (i, (idx, nonce)) in forged.iter().enumerate() {
            let unit = live[idx.index(live.len())];
            let prev = *out.ledger.index().parent(&unit).unwrap();
            let r = i % reveals.len();
            reveals[r].claims.push(VoteClaim { unit, nonce: Nonce::from_bytes(*nonce), prev });
        }
        let t = verify_tally(out.ledger.index(), state, &reveals, &out.registry).unwrap();
        prop_assert_eq!(t.accounted(), state.len() as u64);
        let honest: u64 = out.entities.iter().map(|e| e.received(state).len() as u64).sum();
        prop_assert_eq!(t.verified_total(), honest);
        prop_assert!(t.invalid_claims.len() >= forged.len());
    }
}
