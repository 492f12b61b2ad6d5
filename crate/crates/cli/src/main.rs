//! `ssi`: wallets, DIDs, credentials, consent, authentication, consensus
//! simulation and scenario replays from the command line.

mod cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ssi", version, about = "Self-sovereign identity toolkit")]
struct Cli {
    /// Print machine-readable canonical JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Ledger clock in seconds; defaults to the system clock.
    #[arg(long, global = true)]
    now: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Consensus simulation runs.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Encrypted wallet management. The unlock secret comes from WALLET_SECRET.
    #[command(subcommand)]
    Wallet(WalletCmd),
    /// Pairwise DIDs.
    #[command(subcommand)]
    Did(DidCmd),
    /// Credential schemas.
    #[command(subcommand)]
    Schema(SchemaCmd),
    /// Credential definitions, issuance, presentation and revocation.
    #[command(subcommand)]
    Cred(CredCmd),
    /// Consent receipts.
    #[command(subcommand)]
    Consent(ConsentCmd),
    /// Challenge-response authentication.
    #[command(subcommand)]
    Auth(AuthCmd),
    /// Local ledger files.
    #[command(subcommand)]
    Ledger(LedgerCmd),
    /// Scripted end-to-end use cases.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
}

#[derive(Subcommand)]
enum SimCmd {
    /// Runs a simulation and writes its report and event log.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Workload file; without it a DID registration workload is generated.
        #[arg(long)]
        workload: Option<PathBuf>,
        /// Size of the generated workload.
        #[arg(long, default_value_t = 40)]
        count: usize,
        /// Report path; the event log goes next to it as <out>.events.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generates a DID registration workload file.
    Workload {
        #[arg(long, default_value_t = 40)]
        count: usize,
        #[arg(long, default_value_t = 10)]
        interval_ms: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1_700_000_000)]
        start_time_s: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct WalletArg {
    #[arg(long)]
    wallet: PathBuf,
}

#[derive(Args)]
struct LedgerArg {
    /// Ledger file (JSON lines, one block per line).
    #[arg(long)]
    ledger: PathBuf,
}

#[derive(Subcommand)]
enum WalletCmd {
    Create {
        #[command(flatten)]
        w: WalletArg,
        #[arg(long)]
        label: String,
    },
    /// Checks the unlock secret.
    Unlock {
        #[command(flatten)]
        w: WalletArg,
    },
    /// Lists relations and stored credentials.
    List {
        #[command(flatten)]
        w: WalletArg,
    },
}

#[derive(Subcommand)]
enum DidCmd {
    /// Creates a pairwise DID for a relation and registers it.
    New {
        #[command(flatten)]
        w: WalletArg,
        #[arg(long)]
        relation: String,
        #[command(flatten)]
        l: LedgerArg,
    },
}

#[derive(Subcommand)]
enum SchemaCmd {
    Publish {
        #[command(flatten)]
        w: WalletArg,
        #[arg(long)]
        relation: String,
        #[command(flatten)]
        l: LedgerArg,
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "1.0")]
        version: String,
        /// name:type, type one of string, integer, date, boolean.
        #[arg(long = "attr", required = true)]
        attrs: Vec<String>,
    },
}

#[derive(Subcommand)]
enum CredCmd {
    /// Publishes a credential definition over a schema.
    Define {
        #[command(flatten)]
        w: WalletArg,
        #[arg(long)]
        relation: String,
        #[command(flatten)]
        l: LedgerArg,
        #[arg(long)]
        schema: String,
        #[arg(long, default_value = "default")]
        tag: String,
    },
    Issue {
        #[command(flatten)]
        w: WalletArg,
        #[arg(long)]
        relation: String,
        #[command(flatten)]
        l: LedgerArg,
        #[arg(long)]
        cred_def: String,
        #[arg(long)]
        subject: String,
        /// name=value
        #[arg(long = "attr", required = true)]
        attrs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    Verify {
        file: PathBuf,
        #[command(flatten)]
        l: LedgerArg,
    },
    Revoke {
        file: PathBuf,
        #[command(flatten)]
        w: WalletArg,
        #[command(flatten)]
        l: LedgerArg,
    },
    /// Verifies a received credential and keeps it in the wallet.
    Store {
        file: PathBuf,
        #[command(flatten)]
        w: WalletArg,
        #[command(flatten)]
        l: LedgerArg,
    },
    Present {
        #[command(flatten)]
        w: WalletArg,
        /// Holder relation.
        #[arg(long)]
        relation: String,
        #[arg(long)]
        audience: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        credentials: Vec<PathBuf>,
    },
    VerifyPresentation {
        file: PathBuf,
        #[arg(long)]
        audience: String,
        #[command(flatten)]
        l: LedgerArg,
    },
}

#[derive(Subcommand)]
enum ConsentCmd {
    /// Signs a receipt on both sides and publishes its hash. The verifier
    /// wallet secret comes from VERIFIER_WALLET_SECRET, else WALLET_SECRET.
    Record {
        #[command(flatten)]
        w: WalletArg,
        #[arg(long)]
        relation: String,
        #[arg(long)]
        verifier_wallet: PathBuf,
        #[arg(long)]
        verifier_relation: String,
        /// name:type of each shared attribute.
        #[arg(long = "attr", required = true)]
        attrs: Vec<String>,
        #[arg(long)]
        purpose: String,
        #[command(flatten)]
        l: LedgerArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Checks a receipt's signatures and that its hash is on the ledger.
    Check {
        file: PathBuf,
        #[command(flatten)]
        l: LedgerArg,
    },
}

#[derive(Subcommand)]
enum AuthCmd {
    /// Encrypts a fresh nonce to the DID's agreement key.
    Challenge {
        #[arg(long)]
        did: String,
        #[command(flatten)]
        l: LedgerArg,
        /// Verifier bookkeeping file, created if missing.
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        verifier_did: String,
        #[arg(long, default_value_t = ssi_core::auth::DEFAULT_CHALLENGE_TTL)]
        ttl: u64,
        #[arg(long)]
        out: PathBuf,
    },
    Respond {
        file: PathBuf,
        #[command(flatten)]
        w: WalletArg,
        #[arg(long)]
        relation: String,
        #[arg(long)]
        out: PathBuf,
    },
    Check {
        file: PathBuf,
        #[arg(long)]
        state: PathBuf,
    },
}

#[derive(Subcommand)]
enum LedgerCmd {
    /// Validates the chain and prints its height and digest.
    Info {
        #[command(flatten)]
        l: LedgerArg,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    Run {
        name: ssi_core::scenario::ScenarioName,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Runs consent flows without publishing the consent proof.
        #[arg(long)]
        skip_consent: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { cmd::USAGE } else { 0 });
        }
    };
    match cmd::dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
