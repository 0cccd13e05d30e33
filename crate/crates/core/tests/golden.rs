//! Fixtures produced by `fixtures/oracle.py`, an independent implementation
//! built on Python's hashlib and `cryptography`.

use std::path::PathBuf;

use llv_core::commitment::{compute_stage, genesis_placeholder, inner_commitment, verify_stage};
use llv_core::crypto::{derive_keypair, hash, Nonce, Seed};
use llv_core::ledger::{replay, Ledger};
use llv_core::sim::{self, Action, Scenario};
use llv_core::transitions::{Entry, Reversal, Transition};
use llv_core::{Hash256, PublicKey, UnitId};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn golden() -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture("golden.json")).unwrap()).unwrap()
}

fn hex32(v: &Value) -> [u8; 32] {
    hex::decode(v.as_str().unwrap()).unwrap().try_into().unwrap()
}

fn unit(v: &Value) -> UnitId {
    UnitId::from_hex(v.as_str().unwrap()).unwrap()
}

fn seed(v: &Value) -> Seed {
    Seed::from_entropy(hex32(v))
}

#[test]
fn key_derivation_matches_reference() {
    let g = golden();
    let d = &g["derivation"];
    let s = seed(&d["seed"]);
    for i in 0..4 {
        let kp = derive_keypair(&s, i as u32);
        assert_eq!(hex::encode(kp.secret_bytes()), d["secret_keys"][i].as_str().unwrap());
        assert_eq!(kp.public_key().to_hex(), d["public_keys"][i].as_str().unwrap());
    }
}

#[test]
fn published_mnemonic_vector() {
    // all-zero 256-bit entropy
    let phrase = Seed::from_entropy([0; 32]).to_mnemonic();
    let expected = format!("{}art", "abandon ".repeat(23));
    assert_eq!(phrase, expected);
    assert_eq!(Seed::from_mnemonic(&expected).unwrap().entropy(), &[0; 32]);
}

#[test]
fn chain_stages_recompute_bit_exactly() {
    let g = golden();
    let c = &g["chain"];
    assert_eq!(genesis_placeholder(), unit(&c["placeholder"]));
    let alice = seed(&c["seeds"]["alice"]);
    let bob = seed(&c["seeds"]["bob"]);
    let carol = seed(&c["seeds"]["carol"]);
    let keys = [
        derive_keypair(&alice, 0).public_key(),
        derive_keypair(&bob, 0).public_key(),
        derive_keypair(&carol, 0).public_key(),
        derive_keypair(&alice, 1).public_key(),
    ];
    let named = ["alice0", "bob0", "carol0", "alice1"];
    let mut prev = genesis_placeholder();
    for (k, (pk, name)) in keys.iter().zip(named).enumerate() {
        assert_eq!(pk.to_hex(), c["public_keys"][name].as_str().unwrap());
        let nonce = Nonce::from_bytes(hex32(&c["nonces"][k]));
        let stage = compute_stage(&nonce, pk, &prev);
        assert_eq!(stage.id, unit(&c["stages"][k]), "stage {k}");
        assert_eq!(stage.inner.0.to_hex(), c["inner"][k].as_str().unwrap());
        assert_eq!(
            inner_commitment(&hash(nonce.as_bytes()), &hash(pk.as_bytes())),
            stage.inner
        );
        assert!(verify_stage(&hash(nonce.as_bytes()), pk, &prev, &stage.id));
        prev = stage.id;
    }
}

#[test]
fn chain_payloads_and_signatures_match_reference() {
    let g = golden();
    let c = &g["chain"];
    let alice = seed(&c["seeds"]["alice"]);
    let bob = seed(&c["seeds"]["bob"]);
    let s: Vec<UnitId> = (0..4).map(|k| unit(&c["stages"][k])).collect();
    let h_n = |k: usize| hash(&hex32(&c["nonces"][k]));
    let a0 = derive_keypair(&alice, 0);
    let b0 = derive_keypair(&bob, 0);

    let t1 = Transition::sign_unchecked(h_n(0), &a0, genesis_placeholder(), s[0], s[1]);
    assert_eq!(hex::encode(t1.signing_payload()), c["payloads"]["transition1"].as_str().unwrap());
    assert_eq!(t1.signature.to_hex(), c["signatures"]["transition1"].as_str().unwrap());

    let t2 = Transition::sign_unchecked(h_n(1), &b0, s[0], s[1], s[2]);
    assert_eq!(hex::encode(t2.signing_payload()), c["payloads"]["transition2"].as_str().unwrap());
    assert_eq!(t2.signature.to_hex(), c["signatures"]["transition2"].as_str().unwrap());

    let r3 = Reversal::sign_unchecked(h_n(1), hash(b0.public_key().as_bytes()), &a0, s[0], s[1], s[3]);
    assert_eq!(hex::encode(r3.signing_payload()), c["payloads"]["reversal3"].as_str().unwrap());
    assert_eq!(r3.signature.to_hex(), c["signatures"]["reversal3"].as_str().unwrap());
}

#[test]
fn chain_ledger_file_replays_and_reserializes_identically() {
    let g = golden();
    let c = &g["chain"];
    let text = std::fs::read_to_string(fixture("chain.jsonl")).unwrap();
    let ledger = Ledger::from_jsonl(&text).unwrap();
    assert_eq!(ledger.to_jsonl(), text, "serialization is byte-identical to the reference writer");
    assert_eq!(ledger.state().snapshot_hash().to_hex(), c["snapshots"][3].as_str().unwrap());
    assert_eq!(ledger.state().live().iter().copied().collect::<Vec<_>>(), vec![unit(&c["stages"][3])]);

    // the snapshot after every prefix matches the reference
    let lines: Vec<&str> = text.lines().collect();
    for k in 0..4 {
        let prefix = lines[..k + 2].join("\n");
        let l = Ledger::from_jsonl(&prefix).unwrap();
        assert_eq!(l.state().snapshot_hash().to_hex(), c["snapshots"][k].as_str().unwrap(), "after slot {k}");
    }

    // the stored reversal consumed carol's stage, not the delegated output
    let index = ledger.index();
    assert_eq!(index.parent(&unit(&c["stages"][3])), Some(&unit(&c["stages"][2])));
    assert_eq!(index.stage_depth(&unit(&c["stages"][3])), Some(4));
}

#[test]
fn genesis_100_fixture() {
    let g = golden();
    let text = std::fs::read_to_string(fixture("genesis_100.jsonl")).unwrap();
    let ledger = Ledger::from_jsonl(&text).unwrap();
    assert_eq!(ledger.genesis_count(), 100);
    assert_eq!(ledger.state().len(), 100);
    assert_eq!(ledger.to_jsonl(), text);
    assert_eq!(
        ledger.state().snapshot_hash().to_hex(),
        g["genesis_100"]["snapshot"].as_str().unwrap()
    );
}

#[test]
fn fixtures_survive_save_load_replay() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["chain.jsonl", "genesis_100.jsonl"] {
        let ledger = Ledger::load(&fixture(name)).unwrap();
        let path = dir.path().join(name);
        ledger.save(&path).unwrap();
        let reloaded = Ledger::load(&path).unwrap();
        let (state, index) = replay(&reloaded).unwrap();
        assert_eq!(state.snapshot_hash(), ledger.state().snapshot_hash(), "{name}");
        assert_eq!(&index, ledger.index(), "{name}");
    }
}

#[test]
fn tampered_fixture_is_rejected_at_the_tampered_slot() {
    let text = std::fs::read_to_string(fixture("chain.jsonl")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut slot: Value = serde_json::from_str(&lines[3]).unwrap();
    let sig = slot["entries"][0]["signature"].as_str().unwrap().to_string();
    let flipped = format!("{}{}", if sig.starts_with('0') { "1" } else { "0" }, &sig[1..]);
    slot["entries"][0]["signature"] = Value::String(flipped);
    lines[3] = slot.to_string();
    let err = Ledger::from_jsonl(&lines.join("\n")).unwrap_err();
    assert!(err.to_string().contains("slot 2"), "{err}");
}

#[test]
fn reference_run_state_hash() {
    let mut s = Scenario::new(42, 100);
    s.options = vec!["a".into(), "b".into(), "c".into()];
    s.actions = vec![Action::Random { count: 500 }];
    let out = sim::run(&s).unwrap();
    assert_eq!(out.metrics.accepted, 500);
    assert_eq!(
        out.metrics.state_hash.unwrap(),
        Hash256::from_hex("c560d6e1e0b887f6378d055d44cb14c975f78090f532133f6b07df0b74920614").unwrap()
    );
    // same scenario, same bytes
    assert_eq!(sim::run(&s).unwrap().ledger.to_jsonl(), out.ledger.to_jsonl());
}

#[test]
fn genesis_entries_carry_the_registering_key() {
    let ledger = Ledger::load(&fixture("chain.jsonl")).unwrap();
    let g = golden();
    let slot0 = &ledger.slots()[0];
    match &slot0.entries[0] {
        Entry::Genesis(reg) => {
            assert_eq!(reg.owner_pk, PublicKey::from_hex(g["chain"]["public_keys"]["alice0"].as_str().unwrap()).unwrap());
            assert!(reg.is_well_formed());
        }
        other => panic!("slot 0 holds {other:?}"),
    }
}
