//! `llv` — operate wallets, ledger files, options and the simulator.
//!
//! Exit codes: 0 success, 1 usage, 2 validation reject, 3 unreadable or
//! corrupt file. JSON goes to stdout, diagnostics to stderr.

mod cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "llv", version, about = "Voting-power ledger with hidden receivers")]
struct Cli {
    /// Cryptographic profile; only llv1 exists.
    #[arg(long, global = true, default_value = "llv1")]
    profile: String,

    /// Pretty-print JSON output.
    #[arg(long, global = true)]
    pretty: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct WalletArgs {
    #[arg(long, env = "LLV_WALLET")]
    wallet: PathBuf,
    #[arg(long, env = "LLV_PASSPHRASE", hide_env_values = true)]
    passphrase: String,
}

#[derive(Debug, Args, Clone)]
struct LedgerArg {
    #[arg(long, env = "LLV_LEDGER")]
    ledger: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create a wallet; the mnemonic is printed once.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "LLV_PASSPHRASE", hide_env_values = true)]
        passphrase: String,
        /// Restore from an existing 24-word mnemonic instead of fresh entropy.
        #[arg(long)]
        mnemonic: Option<String>,
        #[arg(long)]
        force: bool,
    },
    /// Append genesis registrations for new units to a registrations file.
    Register {
        #[command(flatten)]
        wallet: WalletArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Write a ledger holding only slot 0.
    Genesis {
        #[arg(long)]
        registrations: PathBuf,
        #[arg(long, env = "LLV_REGISTRY")]
        registry: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Receiver side of a delegation: fresh (h_n, h_p).
    OfferDelegation {
        #[command(flatten)]
        wallet: WalletArgs,
    },
    /// Sender side of a transfer: announce the unit to be spent.
    Announce {
        #[arg(long)]
        unit: String,
    },
    /// Receiver side of a transfer: the precomputed output unit.
    OfferTransfer {
        #[command(flatten)]
        wallet: WalletArgs,
        #[arg(long)]
        input_announce: PathBuf,
    },
    /// Spend a unit against an offer and submit it as a one-entry slot.
    Send {
        #[command(flatten)]
        wallet: WalletArgs,
        #[command(flatten)]
        ledger: LedgerArg,
        #[arg(long)]
        unit: String,
        #[arg(long)]
        offer: PathBuf,
        #[arg(long, conflicts_with = "transfer")]
        delegation: bool,
        #[arg(long)]
        transfer: bool,
    },
    /// Scan the ledger for incoming units and list spendable ones.
    Units {
        #[command(flatten)]
        wallet: WalletArgs,
        #[command(flatten)]
        ledger: LedgerArg,
    },
    /// List delegation stubs held by the wallet.
    Stubs {
        #[command(flatten)]
        wallet: WalletArgs,
    },
    /// Reclaim the live end of a delegated lineage.
    Reverse {
        #[command(flatten)]
        wallet: WalletArgs,
        #[command(flatten)]
        ledger: LedgerArg,
        /// The delegated output unit identifying the stub.
        #[arg(long)]
        stub: String,
    },
    /// Create an option entity and add its key to the registry.
    OptionCreate {
        #[arg(long)]
        label: String,
        #[arg(long, env = "LLV_REGISTRY")]
        registry: PathBuf,
        #[arg(long)]
        entity: PathBuf,
    },
    /// Vote with a unit through a local option entity.
    Vote {
        #[command(flatten)]
        wallet: WalletArgs,
        #[command(flatten)]
        ledger: LedgerArg,
        #[arg(long)]
        option: String,
        #[arg(long, env = "LLV_REGISTRY")]
        registry: PathBuf,
        /// Entity file; defaults to `<label>.entity.json` next to the registry.
        #[arg(long)]
        entity: Option<PathBuf>,
        #[arg(long)]
        unit: Option<String>,
    },
    /// Print an entity's declared units, or with --reveal its claims and nonces.
    Reveal {
        #[arg(long)]
        entity: PathBuf,
        #[command(flatten)]
        ledger: LedgerArg,
        #[arg(long)]
        reveal: bool,
    },
    /// Count declared units before finalization.
    Preliminary {
        #[command(flatten)]
        ledger: LedgerArg,
        #[arg(long = "declaration", required = true)]
        declarations: Vec<PathBuf>,
    },
    /// Freeze the state; later entries are rejected.
    Finalize {
        #[command(flatten)]
        ledger: LedgerArg,
    },
    /// Verify reveals against the frozen state.
    Tally {
        #[command(flatten)]
        ledger: LedgerArg,
        #[arg(long = "reveals", required = true)]
        reveals: Vec<PathBuf>,
        #[arg(long, env = "LLV_REGISTRY")]
        registry: PathBuf,
    },
    /// Replay the ledger from slot 0; exit 0 iff consistent.
    Verify {
        #[command(flatten)]
        ledger: LedgerArg,
    },
    /// Sorted live unit identifiers.
    State {
        #[command(flatten)]
        ledger: LedgerArg,
    },
    /// Scenario simulator.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
}

#[derive(Debug, Subcommand)]
enum SimCommand {
    /// Run a scenario file and its games.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cmd::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
