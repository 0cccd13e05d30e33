use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use llv_core::crypto::{CryptoError, Seed, PROFILE_VERSION};
use llv_core::ledger::{Ledger, LedgerError};
use llv_core::sim::{self, Scenario, SimError};
use llv_core::tally::{preliminary_tally, verify_tally, OptionEntity, OptionRegistry, TallyError, VoteReveal};
use llv_core::transitions::{Entry, GenesisRegistration, RejectReason, Verdict};
use llv_core::wallet::{InputAnnounce, Wallet, WalletError, WireMessage};
use llv_core::UnitId;
use rand::rngs::OsRng;
use serde::{Deserialize, Serialize};

use crate::{Cli, Command, LedgerArg, SimCommand, WalletArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// Already reported on stdout.
    Rejected(String),
    File(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Rejected(_) => 2,
            CliError::File(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Rejected(m) | CliError::File(m) => f.write_str(m),
        }
    }
}

impl From<LedgerError> for CliError {
    fn from(e: LedgerError) -> Self {
        match e {
            LedgerError::Replay(_) | LedgerError::AlreadyFrozen => CliError::Rejected(e.to_string()),
            LedgerError::DuplicateGenesisOutput(_) | LedgerError::InvalidGenesis(_) => {
                CliError::Rejected(e.to_string())
            }
            LedgerError::UnknownUnit(_) => CliError::Rejected(e.to_string()),
            _ => CliError::File(e.to_string()),
        }
    }
}

impl From<WalletError> for CliError {
    fn from(e: WalletError) -> Self {
        match e {
            WalletError::Decrypt | WalletError::Corrupt(_) | WalletError::Io(_) => CliError::File(e.to_string()),
            WalletError::Ledger(inner) => inner.into(),
            _ => CliError::Rejected(e.to_string()),
        }
    }
}

impl From<CryptoError> for CliError {
    fn from(e: CryptoError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TallyError> for CliError {
    fn from(e: TallyError) -> Self {
        CliError::Rejected(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::File(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

struct Out {
    pretty: bool,
}

impl Out {
    fn print<T: Serialize>(&self, value: &T) {
        let s = if self.pretty {
            serde_json::to_string_pretty(value)
        } else {
            serde_json::to_string(value)
        };
        println!("{}", s.expect("output serializes"));
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::File(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::File(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text + "\n")
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| CliError::File(format!("{}: {e}", path.display())))
}

fn parse_unit(s: &str) -> Result<UnitId> {
    UnitId::from_hex(s).map_err(|e| CliError::Usage(format!("unit {s:?}: {e}")))
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(CliError::Usage(format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

/// Exclusive advisory lock held while a ledger file is read, changed and rewritten.
struct LedgerLock {
    _file: File,
}

impl LedgerLock {
    fn acquire(ledger: &Path) -> Result<LedgerLock> {
        let mut name = ledger.as_os_str().to_owned();
        name.push(".lock");
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(PathBuf::from(name))
            .map_err(|e| CliError::File(format!("lock {}: {e}", ledger.display())))?;
        file.lock()
            .map_err(|e| CliError::File(format!("lock {}: {e}", ledger.display())))?;
        Ok(LedgerLock { _file: file })
    }
}

fn open_wallet(args: &WalletArgs) -> Result<Wallet> {
    Ok(Wallet::restore(&args.wallet, &args.passphrase)?)
}

fn save_wallet(wallet: &Wallet, args: &WalletArgs) -> Result<()> {
    Ok(wallet.persist(&args.wallet, &args.passphrase)?)
}

fn load_ledger(arg: &LedgerArg) -> Result<Ledger> {
    Ok(Ledger::load(&arg.ledger)?)
}

/// Submits one entry as its own slot. Rejected entries are not written.
fn submit(ledger: &mut Ledger, path: &Path, entry: Entry) -> Result<(Verdict, u64)> {
    let verdict = ledger.check(&entry);
    if !verdict.accepted {
        return Ok((verdict, 0));
    }
    let slot = ledger.slots().len() as u64;
    let verdicts = ledger.append_slot(vec![entry]);
    ledger.save(path)?;
    Ok((verdicts[0], slot))
}

#[derive(Serialize)]
struct Submission<'a> {
    verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    slot: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<&'a UnitId>,
}

fn report(out: &Out, verdict: Verdict, slot: u64, output: Option<&UnitId>) -> Result<()> {
    out.print(&Submission {
        verdict,
        slot: verdict.accepted.then_some(slot),
        output: output.filter(|_| verdict.accepted),
    });
    match verdict.reason {
        None => Ok(()),
        Some(r) => Err(CliError::Rejected(format!("entry rejected: {r}"))),
    }
}

#[derive(Serialize, Deserialize)]
struct Declaration {
    option: String,
    units: BTreeSet<UnitId>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

pub fn dispatch(cli: Cli) -> Result<()> {
    if !cli.profile.eq_ignore_ascii_case(PROFILE_VERSION) {
        return Err(CliError::Usage(format!(
            "unsupported profile {:?}; only {} is available",
            cli.profile,
            PROFILE_VERSION.to_lowercase()
        )));
    }
    let out = Out { pretty: cli.pretty };
    match cli.command {
        Command::Keygen {
            out: path,
            passphrase,
            mnemonic,
            force,
        } => {
            refuse_overwrite(&path, force)?;
            let seed = match mnemonic {
                Some(phrase) => Seed::from_mnemonic(&phrase)?,
                None => Seed::random(&mut OsRng),
            };
            let wallet = Wallet::new(seed);
            wallet.persist(&path, &passphrase)?;
            out.print(&serde_json::json!({
                "wallet": path,
                "mnemonic": wallet.seed().to_mnemonic(),
            }));
        }

        Command::Register {
            wallet: wa,
            out: path,
            count,
        } => {
            let mut wallet = open_wallet(&wa)?;
            let mut regs: Vec<GenesisRegistration> = if path.exists() { read_json(&path)? } else { Vec::new() };
            let mut created = Vec::new();
            for _ in 0..count {
                let reg = wallet.register_genesis(&mut OsRng);
                created.push(reg.initial_output);
                regs.push(reg);
            }
            save_wallet(&wallet, &wa)?;
            write_json(&path, &regs)?;
            out.print(&serde_json::json!({ "registered": created, "total": regs.len() }));
        }

        Command::Genesis {
            registrations,
            registry,
            out: path,
            force,
        } => {
            refuse_overwrite(&path, force)?;
            let regs: Vec<GenesisRegistration> = read_json(&registrations)?;
            let options = match registry {
                Some(r) => read_json::<OptionRegistry>(&r)?,
                None => OptionRegistry::new(),
            };
            let ledger = Ledger::genesis_with_options(regs, options)?;
            ledger.save(&path)?;
            out.print(&serde_json::json!({
                "ledger": path,
                "genesis_count": ledger.genesis_count(),
                "state_hash": ledger.state().snapshot_hash(),
            }));
        }

        Command::OfferDelegation { wallet: wa } => {
            let mut wallet = open_wallet(&wa)?;
            let offer = wallet.make_delegation_offer(&mut OsRng);
            save_wallet(&wallet, &wa)?;
            out.print(&WireMessage::DelegationOffer(offer));
        }

        Command::Announce { unit } => {
            out.print(&WireMessage::InputAnnounce(InputAnnounce {
                input_unit: parse_unit(&unit)?,
            }));
        }

        Command::OfferTransfer {
            wallet: wa,
            input_announce,
        } => {
            let announce = match read_json::<WireMessage>(&input_announce)? {
                WireMessage::InputAnnounce(a) => a,
                _ => return Err(CliError::Usage("expected an input_announce message".into())),
            };
            let mut wallet = open_wallet(&wa)?;
            let offer = wallet.make_transfer_offer(&announce, &mut OsRng);
            save_wallet(&wallet, &wa)?;
            out.print(&WireMessage::TransferOffer(offer));
        }

        Command::Send {
            wallet: wa,
            ledger: la,
            unit,
            offer,
            delegation,
            transfer,
        } => {
            let unit = parse_unit(&unit)?;
            let message: WireMessage = read_json(&offer)?;
            match (&message, delegation, transfer) {
                (WireMessage::DelegationOffer(_), _, false) | (WireMessage::TransferOffer(_), false, _) => {}
                (WireMessage::InputAnnounce(_), ..) => {
                    return Err(CliError::Usage("an input announce is not an offer".into()));
                }
                _ => return Err(CliError::Usage("offer kind does not match --delegation/--transfer".into())),
            }
            let _lock = LedgerLock::acquire(&la.ledger)?;
            let mut ledger = load_ledger(&la)?;
            let mut wallet = open_wallet(&wa)?;
            wallet.detect_incoming(ledger.state(), ledger.index());
            let spendable = match wallet.record(&unit) {
                None if !ledger.index().contains(&unit) => Err(RejectReason::UnknownInput),
                None => return Err(CliError::Rejected(format!("wallet holds no secrets for unit {unit}"))),
                Some(r) if r.spent || !ledger.state().is_live(&unit) => Err(RejectReason::SpentInput),
                Some(_) => Ok(()),
            };
            if let Err(reason) = spendable {
                return report(&out, Verdict::reject(reason), 0, None);
            }
            let (entry, stub_output) = match message {
                WireMessage::DelegationOffer(o) => {
                    let (t, stub) = wallet.accept_delegation_offer(&unit, &o)?;
                    (Entry::from(t), Some(stub.delegated_output))
                }
                WireMessage::TransferOffer(o) => (Entry::from(wallet.accept_transfer_offer(&unit, &o)?), None),
                WireMessage::InputAnnounce(_) => unreachable!("rejected above"),
            };
            let output = match &entry {
                Entry::Transition(t) => t.output_unit,
                _ => unreachable!("send builds transitions"),
            };
            let (verdict, slot) = submit(&mut ledger, &la.ledger, entry)?;
            if !verdict.accepted {
                if let Some(o) = stub_output {
                    wallet.forget_stub(&o);
                }
            }
            wallet.detect_incoming(ledger.state(), ledger.index());
            save_wallet(&wallet, &wa)?;
            report(&out, verdict, slot, Some(&output))?;
        }

        Command::Units { wallet: wa, ledger: la } => {
            let ledger = load_ledger(&la)?;
            let mut wallet = open_wallet(&wa)?;
            let found = wallet.detect_incoming(ledger.state(), ledger.index());
            save_wallet(&wallet, &wa)?;
            let units: Vec<UnitId> = wallet.spendable_units(ledger.state()).iter().map(|r| r.unit).collect();
            out.print(&serde_json::json!({
                "spendable": units,
                "new": found.iter().map(|r| r.unit).collect::<Vec<_>>(),
                "unclaimable": wallet.unclaimable(),
            }));
        }

        Command::Stubs { wallet: wa } => {
            let wallet = open_wallet(&wa)?;
            let stubs: Vec<_> = wallet
                .stubs()
                .map(|s| serde_json::json!({ "delegated_input": s.delegated_input, "delegated_output": s.delegated_output }))
                .collect();
            out.print(&stubs);
        }

        Command::Reverse {
            wallet: wa,
            ledger: la,
            stub,
        } => {
            let stub = parse_unit(&stub)?;
            let _lock = LedgerLock::acquire(&la.ledger)?;
            let mut ledger = load_ledger(&la)?;
            let mut wallet = open_wallet(&wa)?;
            if wallet.stub(&stub).is_some() && !ledger.is_finalized() {
                if let Ok(None) = ledger.index().live_descendant(ledger.state(), &stub) {
                    return report(&out, Verdict::reject(RejectReason::NoLiveDescendant), 0, None);
                }
            }
            let state = ledger.state().clone();
            let reversal = wallet.build_reversal(&stub, &state, ledger.index(), &mut OsRng)?;
            let output = reversal.new_output;
            let (verdict, slot) = submit(&mut ledger, &la.ledger, reversal.into())?;
            wallet.detect_incoming(ledger.state(), ledger.index());
            save_wallet(&wallet, &wa)?;
            report(&out, verdict, slot, Some(&output))?;
        }

        Command::OptionCreate {
            label,
            registry,
            entity,
        } => {
            refuse_overwrite(&entity, false)?;
            let mut reg: OptionRegistry = if registry.exists() {
                read_json(&registry)?
            } else {
                OptionRegistry::new()
            };
            let e = OptionEntity::new(label.clone(), Seed::random(&mut OsRng));
            reg.register(label.clone(), e.public_key())?;
            write_json(&entity, &e)?;
            write_json(&registry, &reg)?;
            out.print(&serde_json::json!({ "option": label, "public_key": e.public_key() }));
        }

        Command::Vote {
            wallet: wa,
            ledger: la,
            option,
            registry,
            entity,
            unit,
        } => {
            let reg: OptionRegistry = read_json(&registry)?;
            let key = *reg
                .key(&option)
                .ok_or_else(|| CliError::Usage(format!("option {option:?} is not registered")))?;
            let entity_path = entity.unwrap_or_else(|| {
                registry
                    .parent()
                    .unwrap_or(Path::new("."))
                    .join(format!("{option}.entity.json"))
            });
            let mut ent: OptionEntity = read_json(&entity_path)?;
            if ent.public_key() != key || ent.label() != option {
                return Err(CliError::Usage(format!(
                    "{} does not hold the registered key for {option:?}",
                    entity_path.display()
                )));
            }
            let _lock = LedgerLock::acquire(&la.ledger)?;
            let mut ledger = load_ledger(&la)?;
            let mut wallet = open_wallet(&wa)?;
            wallet.detect_incoming(ledger.state(), ledger.index());
            let unit = match unit {
                Some(u) => parse_unit(&u)?,
                None => match wallet.spendable_units(ledger.state()).first() {
                    Some(r) => r.unit,
                    None => return Err(CliError::Rejected("wallet has no spendable unit".into())),
                },
            };
            if wallet.record(&unit).is_none_or(|r| r.spent) {
                let reason = if ledger.index().contains(&unit) {
                    RejectReason::SpentInput
                } else {
                    RejectReason::UnknownInput
                };
                return report(&out, Verdict::reject(reason), 0, None);
            }
            let offer = ent.request_vote_offer(&InputAnnounce { input_unit: unit }, &mut OsRng);
            let transition = wallet.accept_transfer_offer(&unit, &offer)?;
            let (verdict, slot) = submit(&mut ledger, &la.ledger, transition.into())?;
            wallet.detect_incoming(ledger.state(), ledger.index());
            save_wallet(&wallet, &wa)?;
            if verdict.accepted {
                write_json(&entity_path, &ent)?;
            }
            report(&out, verdict, slot, Some(&offer.output_unit))?;
        }

        Command::Reveal {
            entity,
            ledger: la,
            reveal,
        } => {
            let ent: OptionEntity = read_json(&entity)?;
            let ledger = load_ledger(&la)?;
            if reveal {
                out.print(&ent.reveal(ledger.state()));
            } else {
                out.print(&Declaration {
                    option: ent.label().to_string(),
                    units: ent.declare(ledger.state()),
                });
            }
        }

        Command::Preliminary { ledger: la, declarations } => {
            let ledger = load_ledger(&la)?;
            let mut declared = BTreeMap::new();
            for path in &declarations {
                let items = match read_json::<OneOrMany<Declaration>>(path)? {
                    OneOrMany::One(d) => vec![d],
                    OneOrMany::Many(v) => v,
                };
                for d in items {
                    declared.insert(d.option, d.units);
                }
            }
            out.print(&preliminary_tally(ledger.state(), &declared));
        }

        Command::Finalize { ledger: la } => {
            let _lock = LedgerLock::acquire(&la.ledger)?;
            let mut ledger = load_ledger(&la)?;
            ledger.finalize()?;
            ledger.save(&la.ledger)?;
            out.print(&serde_json::json!({
                "finalized": true,
                "live": ledger.state().len(),
                "state_hash": ledger.state().snapshot_hash(),
            }));
        }

        Command::Tally {
            ledger: la,
            reveals,
            registry,
        } => {
            let ledger = load_ledger(&la)?;
            let reg: OptionRegistry = read_json(&registry)?;
            let mut all: Vec<VoteReveal> = Vec::new();
            for path in &reveals {
                match read_json::<OneOrMany<VoteReveal>>(path)? {
                    OneOrMany::One(r) => all.push(r),
                    OneOrMany::Many(v) => all.extend(v),
                }
            }
            let result = verify_tally(ledger.index(), ledger.state(), &all, &reg)?;
            out.print(&result);
        }

        Command::Verify { ledger: la } => {
            let text = fs::read_to_string(&la.ledger).map_err(|e| CliError::File(format!("{}: {e}", la.ledger.display())))?;
            let ledger = Ledger::from_jsonl(&text)?;
            let (state, index) = llv_core::ledger::replay(&ledger).map_err(|e| CliError::Rejected(e.to_string()))?;
            let consistent = state.snapshot_hash() == ledger.state().snapshot_hash() && &index == ledger.index();
            out.print(&serde_json::json!({
                "consistent": consistent,
                "slots": ledger.slots().len(),
                "entries": ledger.entry_count(),
                "live": state.len(),
                "finalized": ledger.is_finalized(),
                "state_hash": state.snapshot_hash(),
            }));
            if !consistent {
                return Err(CliError::Rejected("replayed state differs from the incremental state".into()));
            }
        }

        Command::State { ledger: la } => {
            let ledger = load_ledger(&la)?;
            out.print(&serde_json::json!({
                "live": ledger.state().live(),
                "count": ledger.state().len(),
                "frozen": ledger.state().is_frozen(),
                "state_hash": ledger.state().snapshot_hash(),
            }));
        }

        Command::Sim {
            command: SimCommand::Run { scenario, out: path },
        } => {
            let scenario = Scenario::from_path(&scenario)?;
            let report = sim::run_report(&scenario)?;
            if let Some(p) = &path {
                write_json(p, &report)?;
            }
            let failed: Vec<&str> = report.games.iter().filter(|g| !g.passed).map(|g| g.game.as_str()).collect();
            out.print(&serde_json::json!({
                "seed": report.seed,
                "state_hash": report.metrics.state_hash,
                "accepted": report.metrics.accepted,
                "conservation_violations": report.metrics.conservation_violations,
                "games": report.games.iter().map(|g| serde_json::json!({
                    "game": g.game, "trials": g.trials, "successes": g.successes, "passed": g.passed,
                })).collect::<Vec<_>>(),
            }));
            if !failed.is_empty() {
                return Err(CliError::Rejected(format!("games failed: {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}
