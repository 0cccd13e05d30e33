use std::path::PathBuf;
use std::process::{Command, Output};

use llv_core::commitment::verify_stage;
use llv_core::crypto::hash;
use llv_core::ledger::Ledger;
use llv_core::UnitId;
use serde_json::Value;
use tempfile::TempDir;

const PASS: &str = "correct horse battery staple";

struct Shell {
    dir: TempDir,
}

impl Shell {
    fn new() -> Shell {
        Shell {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_llv"))
            .args(args)
            .current_dir(self.dir.path())
            .env("LLV_PASSPHRASE", PASS)
            .env_remove("LLV_LEDGER")
            .env_remove("LLV_WALLET")
            .env_remove("LLV_REGISTRY")
            .output()
            .unwrap()
    }

    /// Runs and expects `code`; returns stdout parsed as JSON (Null if empty).
    fn expect(&self, code: i32, args: &[&str]) -> Value {
        let out = self.run(args);
        assert_eq!(
            out.status.code(),
            Some(code),
            "llv {args:?}\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        let stdout = String::from_utf8(out.stdout).unwrap();
        if stdout.trim().is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {stdout}"))
        }
    }

    fn ok(&self, args: &[&str]) -> Value {
        self.expect(0, args)
    }

    fn write(&self, name: &str, value: &Value) -> String {
        let p = self.path(name);
        std::fs::write(&p, value.to_string()).unwrap();
        p.to_str().unwrap().to_string()
    }

    fn keygen(&self, name: &str) {
        self.ok(&["keygen", "--out", name]);
    }
}

fn unit_of(v: &Value) -> String {
    v["output"].as_str().unwrap().to_string()
}

/// alice, bob, carol wallets; alice registers one unit; ledger.jsonl exists.
fn three_party_genesis(sh: &Shell, extra_units: usize) -> String {
    for w in ["alice", "bob", "carol"] {
        sh.keygen(w);
    }
    let reg = sh.ok(&["register", "--wallet", "alice", "--out", "regs.json"]);
    for _ in 0..extra_units {
        sh.ok(&["register", "--wallet", "bob", "--out", "regs.json"]);
    }
    sh.ok(&["genesis", "--registrations", "regs.json", "--out", "ledger.jsonl"]);
    reg["registered"][0].as_str().unwrap().to_string()
}

#[test]
fn keygen_prints_a_mnemonic_that_restores_the_same_wallet() {
    let sh = Shell::new();
    let v = sh.ok(&["keygen", "--out", "w1"]);
    let phrase = v["mnemonic"].as_str().unwrap();
    assert_eq!(phrase.split_whitespace().count(), 24);
    sh.ok(&["keygen", "--out", "w2", "--mnemonic", phrase]);
    let a = sh.ok(&["register", "--wallet", "w1", "--out", "r1.json"]);
    let b = sh.ok(&["register", "--wallet", "w2", "--out", "r2.json"]);
    // same seed, same key index, different random nonce: only the key material must agree
    let r1: Value = serde_json::from_str(&std::fs::read_to_string(sh.path("r1.json")).unwrap()).unwrap();
    let r2: Value = serde_json::from_str(&std::fs::read_to_string(sh.path("r2.json")).unwrap()).unwrap();
    assert_eq!(r1[0]["owner_pk"], r2[0]["owner_pk"]);
    assert_ne!(a["registered"], b["registered"]);
    // existing files are not overwritten
    sh.expect(1, &["keygen", "--out", "w1"]);
}

#[test]
fn two_shell_walkthrough_reproduces_the_three_stage_chain() {
    let sh = Shell::new();
    let genesis_unit = three_party_genesis(&sh, 0);

    // alice -> bob (delegation)
    let offer = sh.ok(&["offer-delegation", "--wallet", "bob"]);
    assert_eq!(offer["kind"], "delegation_offer");
    let offer_file = sh.write("d.json", &offer);
    let sent = sh.ok(&[
        "send", "--wallet", "alice", "--ledger", "ledger.jsonl", "--unit", &genesis_unit, "--offer", &offer_file,
        "--delegation",
    ]);
    assert_eq!(sent["verdict"]["accepted"], true);
    let i1 = unit_of(&sent);
    let bob_units = sh.ok(&["units", "--wallet", "bob", "--ledger", "ledger.jsonl"]);
    assert_eq!(bob_units["spendable"][0].as_str().unwrap(), i1);

    // bob -> carol (transfer)
    let announce = sh.ok(&["announce", "--unit", &i1]);
    let announce_file = sh.write("a.json", &announce);
    let t_offer = sh.ok(&["offer-transfer", "--wallet", "carol", "--input-announce", &announce_file]);
    let t_offer_file = sh.write("t.json", &t_offer);
    let sent = sh.ok(&[
        "send", "--wallet", "bob", "--ledger", "ledger.jsonl", "--unit", &i1, "--offer", &t_offer_file, "--transfer",
    ]);
    let i2 = unit_of(&sent);
    assert_eq!(t_offer["output_unit"].as_str().unwrap(), i2);
    let carol = sh.ok(&["units", "--wallet", "carol", "--ledger", "ledger.jsonl"]);
    assert_eq!(carol["spendable"][0].as_str().unwrap(), i2);

    let state = sh.ok(&["state", "--ledger", "ledger.jsonl"]);
    assert_eq!(state["live"], serde_json::json!([i2]));
    let v = sh.ok(&["verify", "--ledger", "ledger.jsonl"]);
    assert_eq!(v["consistent"], true);

    // every stage recomputes from public data plus the stage's own nonce hash and key
    let ledger = Ledger::load(&sh.path("ledger.jsonl")).unwrap();
    let last = UnitId::from_hex(&i2).unwrap();
    let lineage = ledger.index().lineage(&last);
    // three stages plus the genesis placeholder
    assert_eq!(lineage.len(), 4);
    assert_eq!(lineage[3], llv_core::commitment::genesis_placeholder());
    assert_eq!(ledger.index().stage_depth(&last), Some(3));
    let spends: Vec<_> = ledger
        .entries()
        .filter_map(|(_, e)| match e {
            llv_core::Entry::Transition(t) => Some(t.clone()),
            _ => None,
        })
        .collect();
    // the spender of stage k proves stage k
    for t in &spends {
        assert!(verify_stage(&t.nonce_hash, &t.sender_pk, &t.prev_unit, &t.input_unit));
    }

    // alice reclaims from carol's unit: the delegation stub reaches through the transfer
    let stubs = sh.ok(&["stubs", "--wallet", "alice"]);
    let stub = stubs[0]["delegated_output"].as_str().unwrap().to_string();
    assert_eq!(stub, i1);
    let rev = sh.ok(&["reverse", "--wallet", "alice", "--ledger", "ledger.jsonl", "--stub", &stub]);
    let back = unit_of(&rev);
    let alice = sh.ok(&["units", "--wallet", "alice", "--ledger", "ledger.jsonl"]);
    assert_eq!(alice["spendable"], serde_json::json!([back]));
    let carol = sh.ok(&["units", "--wallet", "carol", "--ledger", "ledger.jsonl"]);
    assert_eq!(carol["spendable"], serde_json::json!([]));
    sh.ok(&["verify", "--ledger", "ledger.jsonl"]);
}

#[test]
fn rejections_exit_two_with_a_verdict() {
    let sh = Shell::new();
    let unit = three_party_genesis(&sh, 0);
    let offer = sh.ok(&["offer-delegation", "--wallet", "bob"]);
    let offer_file = sh.write("d.json", &offer);

    let unknown = hash(b"nowhere").to_hex();
    let v = sh.expect(2, &[
        "send", "--wallet", "alice", "--ledger", "ledger.jsonl", "--unit", &unknown, "--offer", &offer_file,
    ]);
    assert_eq!(v["verdict"]["reason"], "UnknownInput");

    sh.ok(&["send", "--wallet", "alice", "--ledger", "ledger.jsonl", "--unit", &unit, "--offer", &offer_file]);
    let v = sh.expect(2, &[
        "send", "--wallet", "alice", "--ledger", "ledger.jsonl", "--unit", &unit, "--offer", &offer_file,
    ]);
    assert_eq!(v["verdict"]["reason"], "SpentInput");
    // rejected submissions leave the file untouched
    let before = std::fs::read_to_string(sh.path("ledger.jsonl")).unwrap();
    assert_eq!(Ledger::from_jsonl(&before).unwrap().slots().len(), 2);

    // the offer kind must match the flag
    sh.expect(1, &[
        "send", "--wallet", "alice", "--ledger", "ledger.jsonl", "--unit", &unit, "--offer", &offer_file,
        "--transfer",
    ]);
}

#[test]
fn usage_and_file_errors_have_distinct_codes() {
    let sh = Shell::new();
    sh.expect(1, &["frobnicate"]);
    sh.expect(1, &["state"]);
    sh.expect(1, &["--profile", "llv2", "state", "--ledger", "x"]);
    assert_eq!(sh.run(&["--help"]).status.code(), Some(0));

    std::fs::write(sh.path("junk.jsonl"), "not json\n").unwrap();
    sh.expect(3, &["verify", "--ledger", "junk.jsonl"]);
    sh.expect(3, &["state", "--ledger", "missing.jsonl"]);

    sh.keygen("w");
    let out = Command::new(env!("CARGO_BIN_EXE_llv"))
        .args(["offer-delegation", "--wallet", "w"])
        .current_dir(sh.dir.path())
        .env("LLV_PASSPHRASE", "wrong")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn tampered_ledger_fails_verification() {
    let sh = Shell::new();
    let unit = three_party_genesis(&sh, 0);
    let offer = sh.ok(&["offer-delegation", "--wallet", "bob"]);
    let offer_file = sh.write("d.json", &offer);
    let sent = sh.ok(&["send", "--wallet", "alice", "--ledger", "ledger.jsonl", "--unit", &unit, "--offer", &offer_file]);
    let out_unit = unit_of(&sent);
    let text = std::fs::read_to_string(sh.path("ledger.jsonl")).unwrap();
    // swap the output for a different unit: the signature no longer covers it
    let forged = hash(b"elsewhere").to_hex();
    std::fs::write(sh.path("bad.jsonl"), text.replace(&out_unit, &forged)).unwrap();
    sh.expect(2, &["verify", "--ledger", "bad.jsonl"]);
    sh.ok(&["verify", "--ledger", "ledger.jsonl"]);
}

#[test]
fn environment_supplies_default_paths() {
    let sh = Shell::new();
    three_party_genesis(&sh, 0);
    let out = Command::new(env!("CARGO_BIN_EXE_llv"))
        .args(["state"])
        .current_dir(sh.dir.path())
        .env("LLV_LEDGER", sh.path("ledger.jsonl"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["count"], 1);
}

#[test]
fn vote_finalize_tally_and_freeze() {
    let sh = Shell::new();
    for w in ["alice", "bob"] {
        sh.keygen(w);
    }
    sh.ok(&["register", "--wallet", "alice", "--out", "regs.json", "--count", "3"]);
    sh.ok(&["register", "--wallet", "bob", "--out", "regs.json", "--count", "1"]);
    for label in ["yes", "no"] {
        let entity = format!("{label}.entity.json");
        sh.ok(&["option-create", "--label", label, "--registry", "registry.json", "--entity", &entity]);
    }
    sh.ok(&[
        "genesis", "--registrations", "regs.json", "--registry", "registry.json", "--out", "ledger.jsonl",
    ]);
    let units = sh.ok(&["units", "--wallet", "alice", "--ledger", "ledger.jsonl"]);
    let alice_units: Vec<String> = units["spendable"]
        .as_array()
        .unwrap()
        .iter()
        .map(|u| u.as_str().unwrap().to_string())
        .collect();
    let vote = |option: &str, unit: &str| {
        sh.ok(&[
            "vote", "--wallet", "alice", "--ledger", "ledger.jsonl", "--option", option, "--registry",
            "registry.json", "--unit", unit,
        ])
    };
    vote("yes", &alice_units[0]);
    vote("yes", &alice_units[1]);
    vote("no", &alice_units[2]);

    let decl = sh.ok(&["reveal", "--entity", "yes.entity.json", "--ledger", "ledger.jsonl"]);
    assert_eq!(decl["units"].as_array().unwrap().len(), 2);
    assert!(decl.get("claims").is_none(), "no nonces without --reveal");
    sh.write("decl.json", &decl);
    let pre = sh.ok(&["preliminary", "--ledger", "ledger.jsonl", "--declaration", "decl.json"]);
    assert_eq!(pre["counts"]["yes"], 2);

    // tallying an open ledger is refused
    let yes = sh.ok(&["reveal", "--entity", "yes.entity.json", "--ledger", "ledger.jsonl", "--reveal"]);
    let no = sh.ok(&["reveal", "--entity", "no.entity.json", "--ledger", "ledger.jsonl", "--reveal"]);
    sh.write("yes.json", &yes);
    sh.write("no.json", &no);
    sh.expect(2, &[
        "tally", "--ledger", "ledger.jsonl", "--reveals", "yes.json", "--reveals", "no.json", "--registry",
        "registry.json",
    ]);

    sh.ok(&["finalize", "--ledger", "ledger.jsonl"]);
    sh.expect(2, &["finalize", "--ledger", "ledger.jsonl"]);
    let tally = sh.ok(&[
        "tally", "--ledger", "ledger.jsonl", "--reveals", "yes.json", "--reveals", "no.json", "--registry",
        "registry.json",
    ]);
    assert_eq!(tally["counts"]["yes"], 2);
    assert_eq!(tally["counts"]["no"], 1);
    assert_eq!(tally["unallocated"], 1);

    // bob's unit is frozen in place
    let bob = sh.ok(&["units", "--wallet", "bob", "--ledger", "ledger.jsonl"]);
    let bob_unit = bob["spendable"][0].as_str().unwrap().to_string();
    let offer = sh.ok(&["offer-delegation", "--wallet", "alice"]);
    let offer_file = sh.write("d.json", &offer);
    let v = sh.expect(2, &[
        "send", "--wallet", "bob", "--ledger", "ledger.jsonl", "--unit", &bob_unit, "--offer", &offer_file,
    ]);
    assert_eq!(v["verdict"]["reason"], "StateFrozen");
    sh.ok(&["verify", "--ledger", "ledger.jsonl"]);
}

#[test]
fn sim_run_writes_a_report() {
    let sh = Shell::new();
    let scenario = "seed: 7\nvoters: 5\noptions: [a, b]\nactions:\n  - {action: random, count: 20}\n  - action: tally\ngames:\n  - {game: reversal_rights, cases: 5}\n";
    std::fs::write(sh.path("s.yaml"), scenario).unwrap();
    let v = sh.ok(&["sim", "run", "s.yaml", "--out", "report.json"]);
    assert_eq!(v["conservation_violations"], 0);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(sh.path("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["games"][0]["passed"], true);
    let again = sh.ok(&["sim", "run", "s.yaml"]);
    assert_eq!(again["state_hash"], v["state_hash"]);

    std::fs::write(sh.path("bad.yaml"), "seed: 1\nvoters: 1\nactions:\n  - {action: delegate, from: 0, to: 3}\n").unwrap();
    sh.expect(1, &["sim", "run", "bad.yaml"]);
}
