use std::path::PathBuf;
use std::process::exit;

use clap::{Parser, Subcommand};

use recledger_cli::commands::{cmd_attack, cmd_audit, cmd_run, cmd_verify, Format};

/// Certificate-ledger simulator, chain verifier, and audit tool.
#[derive(Parser)]
#[command(name = "recledger", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario (a file path or a bundled name) and export its
    /// event log, report, participant roster, and per-node chains.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        scenario: String,
        /// Directory the artifacts are written into.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the scenario's random seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Re-verify an exported chain; prints `Valid` or `InvalidAt(..)`.
    Verify {
        /// Chain export produced by `run`.
        chain: PathBuf,
        /// Participant roster; defaults to participants.tsv next to the chain.
        #[arg(long)]
        participants: Option<PathBuf>,
    },
    /// Replay a chain and event log into a period audit report.
    Audit {
        /// Chain export produced by `run`.
        chain: PathBuf,
        /// Event log produced by `run`.
        events: PathBuf,
        /// Tick window as <start>:<end>; defaults to the whole log.
        #[arg(long)]
        period: Option<String>,
        /// Control-map file; defaults to the built-in map.
        #[arg(long)]
        control_map: Option<PathBuf>,
        /// Participant roster; defaults to participants.tsv next to the chain.
        #[arg(long)]
        participants: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Run a named adversarial scenario and check the defense held.
    Attack {
        /// One of: double-spend, equivocate, tamper, replay, partition.
        name: String,
        /// Override the scenario's random seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            format,
        } => cmd_run(&scenario, &out, seed, format),
        Command::Verify {
            chain,
            participants,
        } => cmd_verify(&chain, participants.as_deref()),
        Command::Audit {
            chain,
            events,
            period,
            control_map,
            participants,
            format,
        } => cmd_audit(
            &chain,
            &events,
            period.as_deref(),
            control_map.as_deref(),
            participants.as_deref(),
            format,
        ),
        Command::Attack { name, seed, format } => cmd_attack(&name, seed, format),
    };
    match result {
        Ok(code) => exit(code),
        Err(e) => {
            eprintln!("recledger: {e}");
            exit(e.exit_code());
        }
    }
}
