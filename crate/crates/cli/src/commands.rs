//! The four subcommands: `run`, `verify`, `audit`, `attack`.
//!
//! Each returns the process exit code (`0` success, `1` invariant
//! violation) or a [`CliError`] for unusable input (`2`) and rejected
//! simulation configs (`3`). Diagnostics go to standard error; report
//! output goes to standard out, either as a human summary (`--format
//! text`) or as the stable machine rendering (`--format machine`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;

use recledger_core::audit::{annual_audit, replay, AuditReport, ControlMap, Period, DEFAULT_CONTROL_MAP};
use recledger_core::consensus::QuorumConfig;
use recledger_core::crypto::Keypair;
use recledger_core::ledger::{Chain, ChainVerdict};
use recledger_core::netsim::{
    parse_log, run_with_artifacts, EventKind, NodeArtifacts, NodeConfig, SimReport,
};
use recledger_core::rec::{Participant, ParticipantId, ParticipantTable};

use crate::bundled;
use crate::roster;
use crate::scenario::{self, Scenario};

// ---------------------------------------------------------------------------
// Errors and shared plumbing
// ---------------------------------------------------------------------------

/// Failures that end the command before any verdict is reached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// A file, flag, or input format could not be read or parsed.
    Parse(String),
    /// The core library rejected the simulation configuration.
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Config(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(msg) => write!(f, "{msg}"),
            CliError::Config(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

/// How report output is rendered on standard out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Human-oriented summary lines.
    Text,
    /// The stable structured rendering (parseable, byte-reproducible).
    Machine,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content)
        .map_err(|e| CliError::Parse(format!("cannot write {}: {e}", path.display())))
}

/// The participant table a scenario's nodes register as, under the
/// deterministic per-id test keys the simulator signs with.
fn table_for(nodes: &[NodeConfig]) -> Result<ParticipantTable, CliError> {
    let mut table = ParticipantTable::new();
    for n in nodes {
        let p = Participant::new(
            n.id.clone(),
            n.role,
            n.der_level,
            Keypair::derived(n.id.as_str()).public(),
            n.is_validator,
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        table.insert(p).map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(table)
}

fn load_roster(chain_path: &Path, flag: Option<&Path>) -> Result<roster::Roster, CliError> {
    let path: PathBuf = match flag {
        Some(p) => p.to_path_buf(),
        None => chain_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("participants.tsv"),
    };
    let text = read(&path)?;
    roster::parse(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

/// Load a scenario (file path or bundled name), run it, and write the
/// event log, report, participants sidecar, and per-node chain and state
/// exports into `out`. Exit 0 unless a safety or conservation invariant
/// broke.
pub fn cmd_run(
    scenario_ref: &str,
    out: &Path,
    seed: Option<u64>,
    format: Format,
) -> Result<i32, CliError> {
    let (source, text) = load_scenario(scenario_ref)?;
    let mut scenario =
        scenario::parse(&text).map_err(|e| CliError::Parse(format!("{source}: {e}")))?;
    if let Some(seed) = seed {
        scenario.sim.seed = seed;
    }
    let (report, artifacts) =
        run_with_artifacts(&scenario.sim).map_err(|e| CliError::Config(e.to_string()))?;

    fs::create_dir_all(out)
        .map_err(|e| CliError::Parse(format!("cannot create {}: {e}", out.display())))?;
    write(&out.join("events.log"), &report.log_text())?;
    write(&out.join("report.txt"), &report.render())?;
    write(
        &out.join("participants.tsv"),
        &roster::render(&scenario.sim.nodes, scenario.sim.f),
    )?;
    for (id, node) in &artifacts {
        write(&out.join(format!("chain-{id}.txt")), &node.chain)?;
        write(&out.join(format!("state-{id}.txt")), &format!("{}\n", node.state))?;
    }
    eprintln!(
        "wrote {} files to {}",
        3 + 2 * artifacts.len(),
        out.display()
    );

    match format {
        Format::Machine => print!("{}", report.render()),
        Format::Text => print!("{}", run_summary(scenario_ref, &report)),
    }
    Ok(violation_code(&report))
}

fn load_scenario(scenario_ref: &str) -> Result<(String, String), CliError> {
    let path = Path::new(scenario_ref);
    if path.exists() {
        return Ok((scenario_ref.to_string(), read(path)?));
    }
    if let Some(text) = bundled::get(scenario_ref) {
        return Ok((format!("bundled scenario {scenario_ref}"), text.to_string()));
    }
    let names: Vec<&str> = bundled::ALL.iter().map(|(n, _)| *n).collect();
    Err(CliError::Parse(format!(
        "`{scenario_ref}` is neither a scenario file nor a bundled scenario (bundled: {})",
        names.join(", ")
    )))
}

fn violation_code(report: &SimReport) -> i32 {
    if report.honest_agree && report.conservation_ok {
        0
    } else {
        1
    }
}

fn yes_no(ok: bool) -> &'static str {
    if ok {
        "yes"
    } else {
        "NO"
    }
}

fn run_summary(scenario_ref: &str, report: &SimReport) -> String {
    let flagged = if report.flagged.is_empty() {
        "-".to_string()
    } else {
        report
            .flagged
            .iter()
            .map(|id| id.as_str())
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = String::new();
    out.push_str(&format!("scenario: {scenario_ref} (seed {})\n", report.seed));
    out.push_str(&format!("ticks run: {}\n", report.ticks_run));
    out.push_str(&format!(
        "workload committed: {} of {}\n",
        report.committed_count(),
        report.commits.len()
    ));
    out.push_str(&format!(
        "honest digests agree: {}\n",
        yes_no(report.honest_agree)
    ));
    out.push_str(&format!(
        "conservation holds: {}\n",
        yes_no(report.conservation_ok)
    ));
    out.push_str(&format!(
        "guarantees in force: {}\n",
        yes_no(!report.guarantees_void)
    ));
    out.push_str(&format!("flagged validators: {flagged}\n"));
    out.push_str(&format!("detections: {}\n", report.detections.len()));
    for d in &report.detections {
        out.push_str(&format!("  {}\n", d.render()));
    }
    out
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

/// Re-verify an exported chain against its participants sidecar. Prints
/// `Valid` or `InvalidAt(height, Code)`; exits 0 only for a valid chain.
pub fn cmd_verify(chain_path: &Path, participants: Option<&Path>) -> Result<i32, CliError> {
    let roster = load_roster(chain_path, participants)?;
    let text = read(chain_path)?;
    let chain = Chain::import(&text)
        .map_err(|e| CliError::Parse(format!("{}: {e}", chain_path.display())))?;
    let rules = QuorumConfig::from_table(&roster.table, roster.f)
        .map_err(|e| CliError::Config(e.to_string()))?;
    match chain.verify(&roster.table, &rules) {
        ChainVerdict::Valid => {
            println!("Valid");
            Ok(0)
        }
        ChainVerdict::InvalidAt { height, reason } => {
            println!("InvalidAt({height}, {})", reason.code());
            Ok(1)
        }
    }
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

/// Replay a chain, mine the event log, and print the period report.
pub fn cmd_audit(
    chain_path: &Path,
    events_path: &Path,
    period: Option<&str>,
    control_map: Option<&Path>,
    participants: Option<&Path>,
    format: Format,
) -> Result<i32, CliError> {
    let roster = load_roster(chain_path, participants)?;
    let chain = Chain::import(&read(chain_path)?)
        .map_err(|e| CliError::Parse(format!("{}: {e}", chain_path.display())))?;
    let events = parse_log(&read(events_path)?).map_err(|(line, e)| {
        CliError::Parse(format!("{}: line {line}: {e}", events_path.display()))
    })?;
    let controls = match control_map {
        Some(path) => ControlMap::parse(&read(path)?)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?,
        None => ControlMap::parse(DEFAULT_CONTROL_MAP)
            .expect("the built-in control map is complete by construction"),
    };
    let period = match period {
        Some(text) => parse_period(text)?,
        None => Period {
            start: 0,
            end: events.iter().map(|e| e.tick).max().unwrap_or(0),
        },
    };
    let rules = QuorumConfig::from_table(&roster.table, roster.f)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let report = annual_audit(&chain, &roster.table, &rules, period, &events, &controls);
    match format {
        Format::Machine => print!("{}", report.render()),
        Format::Text => print!("{}", audit_summary(&report)),
    }
    Ok(0)
}

fn parse_period(text: &str) -> Result<Period, CliError> {
    let parsed = text.split_once(':').and_then(|(s, e)| {
        Some(Period {
            start: s.parse().ok()?,
            end: e.parse().ok()?,
        })
    });
    match parsed {
        Some(p) if p.start <= p.end => Ok(p),
        Some(p) => Err(CliError::Parse(format!(
            "period starts after it ends: {}:{}",
            p.start, p.end
        ))),
        None => Err(CliError::Parse(format!(
            "period must be <start>:<end> in ticks, got `{text}`"
        ))),
    }
}

fn audit_summary(report: &AuditReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "period: ticks {}..{}\n",
        report.period.start, report.period.end
    ));
    out.push_str(&format!(
        "issued: {} certificates, {} MWh\n",
        report.issued_count, report.issued_mwh
    ));
    out.push_str(&format!(
        "standing: {} active, {} aggregated, {} retired\n",
        report.active_count,
        report.aggregated_count,
        report.retired.total()
    ));
    out.push_str(&format!(
        "retired by reason: statutory {}, public-claim {}, attribute {}\n",
        report.retired.statutory_or_regulatory, report.retired.public_claim, report.retired.attribute
    ));
    out.push_str(&format!("swaps on period certificates: {}\n", report.swap_total));
    out.push_str(&format!(
        "issuance balanced: {}\n",
        yes_no(report.issuance_balanced)
    ));
    out.push_str(&format!(
        "conservation holds: {}\n",
        yes_no(report.conservation_ok)
    ));
    out.push_str(&format!(
        "control coverage: {} of {} event kinds\n",
        report.control_coverage.0, report.control_coverage.1
    ));
    out.push_str(&format!("anomalies: {}\n", report.anomalies.len()));
    for a in &report.anomalies {
        out.push_str(&format!(
            "  - {}: {} [{}]\n",
            a.kind.label(),
            a.detail,
            a.evidence.render()
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

/// Run one named adversarial scenario from the built-in suite and check
/// whether the defense it targets actually held. Exit 0 iff it did.
pub fn cmd_attack(name: &str, seed: Option<u64>, format: Format) -> Result<i32, CliError> {
    let Some((_, scenario_name)) = bundled::ATTACKS.iter().find(|(n, _)| *n == name) else {
        let names: Vec<&str> = bundled::ATTACKS.iter().map(|(n, _)| *n).collect();
        return Err(CliError::Parse(format!(
            "unknown attack `{name}` (one of: {})",
            names.join(", ")
        )));
    };
    let text = bundled::get(scenario_name).expect("attack table names bundled scenarios");
    let mut scenario = scenario::parse(text)
        .map_err(|e| CliError::Parse(format!("bundled scenario {scenario_name}: {e}")))?;
    if let Some(seed) = seed {
        scenario.sim.seed = seed;
    }
    let (report, artifacts) =
        run_with_artifacts(&scenario.sim).map_err(|e| CliError::Config(e.to_string()))?;

    let verdict = defense_held(name, &scenario, &report, &artifacts);
    match format {
        Format::Machine => print!("{}", report.render()),
        Format::Text => print!("{}", run_summary(name, &report)),
    }
    match verdict {
        Ok(()) => {
            println!("defense: held");
            Ok(0)
        }
        Err(reason) => {
            println!("defense: breached");
            eprintln!("attack {name}: {reason}");
            Ok(1)
        }
    }
}

/// The chain as committed by honest nodes — any honest node's copy, since
/// a defense check first requires that they all agree.
fn honest_chain(
    report: &SimReport,
    artifacts: &BTreeMap<ParticipantId, NodeArtifacts>,
) -> Result<Chain, String> {
    let id = report
        .nodes
        .iter()
        .find(|(_, n)| n.behavior == "honest")
        .map(|(id, _)| id.clone())
        .ok_or("no honest node in the run")?;
    Chain::import(&artifacts[&id].chain).map_err(|e| format!("chain export of {id}: {e}"))
}

/// Decide whether the named attack's defense held. Each check knows the
/// bundled scenario's cast: who attacks, and what the ledger must show.
fn defense_held(
    name: &str,
    scenario: &Scenario,
    report: &SimReport,
    artifacts: &BTreeMap<ParticipantId, NodeArtifacts>,
) -> Result<(), String> {
    if report.guarantees_void {
        return Err("fault budget exceeded: guarantees void".into());
    }
    if !report.honest_agree {
        return Err("honest nodes committed diverging histories".into());
    }
    if !report.conservation_ok {
        return Err("megawatt-hour conservation violated".into());
    }

    match name {
        // Exactly one of the broker's two conflicting transactions — the
        // retirement or the resale, raced under one nonce — may commit.
        "double-spend" => {
            let attacker = ParticipantId::from("Br1");
            let chain = honest_chain(report, artifacts)?;
            let committed: usize = chain
                .blocks()
                .flat_map(|b| b.transactions.iter())
                .filter(|tx| tx.signer == attacker)
                .count();
            if committed != 1 {
                return Err(format!(
                    "{committed} of the conflicting transactions committed (expected exactly 1)"
                ));
            }
            Ok(())
        }
        // The equivocating validator must be flagged by honest nodes, and
        // its double votes must not have stalled the workload.
        "equivocate" => {
            let culprit = ParticipantId::from("T1");
            if !report.flagged.contains(&culprit) {
                return Err(format!("{culprit} was not flagged for equivocation"));
            }
            if report.committed_count() != report.commits.len() {
                return Err(format!(
                    "only {} of {} workload transactions committed",
                    report.committed_count(),
                    report.commits.len()
                ));
            }
            Ok(())
        }
        // The rewritten block must fail the tamperer's integrity sweep at
        // the doctored height; everyone else's store must stay valid.
        "tamper" => {
            let culprit = ParticipantId::from("G1");
            let tampered = &report.nodes[&culprit];
            if !tampered.integrity.starts_with("invalid-at:1:") {
                return Err(format!(
                    "tampered store passed the sweep: {}",
                    tampered.integrity
                ));
            }
            if !report
                .detections
                .iter()
                .any(|d| d.kind == EventKind::TamperDetected && d.node == culprit.as_str())
            {
                return Err("no tamper detection was recorded".into());
            }
            for (id, node) in &report.nodes {
                if *id != culprit && node.integrity != "valid" {
                    return Err(format!("{id} failed the sweep: {}", node.integrity));
                }
            }
            Ok(())
        }
        // The replayed transaction must be refused as stale and the chain
        // must stay free of duplicates.
        "replay" => {
            if !report.events.iter().any(|e| {
                e.kind == EventKind::Reject && e.detail("code") == Some("StaleNonce")
            }) {
                return Err("no stale-nonce rejection was recorded".into());
            }
            let chain = honest_chain(report, artifacts)?;
            let mut seen = BTreeSet::new();
            for block in chain.blocks() {
                for tx in &block.transactions {
                    if !seen.insert(tx.digest()) {
                        return Err("a transaction committed twice".into());
                    }
                }
            }
            let table = table_for(&scenario.sim.nodes).map_err(|e| e.to_string())?;
            replay(&chain, &table).map_err(|e| format!("chain does not replay: {e}"))?;
            Ok(())
        }
        // After the heal, every node must converge on one height and the
        // workload submitted during the split must have landed.
        "partition" => {
            let split = report.events.iter().any(|e| e.kind == EventKind::Partition);
            let healed = report.events.iter().any(|e| e.kind == EventKind::Heal);
            if !split || !healed {
                return Err("the scenario did not split and heal the network".into());
            }
            let heights: BTreeSet<u64> = report.nodes.values().map(|n| n.height).collect();
            if heights.len() != 1 {
                return Err(format!("nodes ended at different heights: {heights:?}"));
            }
            if report.committed_count() != report.commits.len() {
                return Err(format!(
                    "only {} of {} workload transactions committed",
                    report.committed_count(),
                    report.commits.len()
                ));
            }
            Ok(())
        }
        other => Err(format!("no defense check for `{other}`")),
    }
}

// ---------------------------------------------------------------------------
