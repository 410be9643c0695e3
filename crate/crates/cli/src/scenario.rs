//! The scenario file format: one simulation described as line-oriented,
//! diffable text.
//!
//! Blank lines are skipped and `#` starts a comment (whole-line or
//! trailing). Every other line is a whitespace-separated directive:
//!
//! ```text
//! seed <u64>                         run seed (default 0)
//! ticks <u64>                        tick limit (default 1000)
//! latency <min> <max>                message latency range (default 1 3)
//! timeout <ticks>                    round timeout (default 10)
//! f <n>                              fault budget (default 1)
//!
//! levels <level>:<count> ...         expand the five-tier topology template
//! node <id> <role> <level> <validator|client> [<behavior>]
//! behavior <id> <behavior>           override a declared node's behavior
//!
//! fault <tick> partition <a,b|c,d>   split the network into groups
//! fault <tick> heal                  dissolve the partition
//! fault <tick> inject <id> <behavior>
//!
//! submit <tick> <signer> <action...> [via <id,id>]
//! ```
//!
//! Actions name certificates through aliases bound by `issue`:
//!
//! ```text
//! issue <alias> <source> <compliance|voluntary> <project-name>
//! aggregate <alias> ...
//! trade <alias> <new-owner>
//! trade-aggregate <new-owner> <alias> ...     members in aggregation order
//! swap <alias> <new-owner>
//! consume <alias> <mwh>
//! retire <alias> <reason>
//! checkpoint <period-start> <period-end>
//! ```
//!
//! Directives take effect in file order, and a line may only refer to
//! nodes and aliases declared above it — which is also what lets
//! `behavior Br1 double-spend:c1` resolve the alias `c1` to its tracking
//! id. Workload transactions are signed at parse time with each
//! participant's deterministic test key; per-signer nonces count up in
//! file order, so submissions by one signer must be spaced further apart
//! than the maximum latency or the higher nonce can land first and
//! permanently stale the lower one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use recledger_core::crypto::Keypair;
use recledger_core::ledger::SignedTransaction;
use recledger_core::netsim::{
    topology_template, Behavior, FaultEvent, FaultKind, LatencyRange, NodeConfig, SimRun,
    Submission,
};
use recledger_core::rec::{
    derive_aggregate_id, derive_tracking_id, CertificateType, EnergySource, ParticipantId,
    RetirementReason, Role, TrackingId, TradeTarget, TransactionPayload,
};
use recledger_core::Tick;

// ---------------------------------------------------------------------------
// Result types
// ---------------------------------------------------------------------------

/// A parse failure, always tied to the line that caused it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioError {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

impl std::error::Error for ScenarioError {}

/// A parsed scenario: the run description plus the alias table, kept so
/// tooling can refer to certificates symbolically after the parse.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub sim: SimRun,
    pub aliases: BTreeMap<String, TrackingId>,
}

/// Parse one scenario file.
pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
    let mut p = Parser::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        p.directive(line, &tokens)?;
    }
    p.finish()
}

// ---------------------------------------------------------------------------
// The parser
// ---------------------------------------------------------------------------

#[derive(Default)]
struct Parser {
    seed: Option<u64>,
    ticks: Option<Tick>,
    latency: Option<LatencyRange>,
    timeout: Option<Tick>,
    f: Option<usize>,
    nodes: Vec<NodeConfig>,
    ids: BTreeSet<ParticipantId>,
    aliases: BTreeMap<String, TrackingId>,
    issue_seq: u64,
    nonces: BTreeMap<ParticipantId, u64>,
    faults: Vec<FaultEvent>,
    workload: Vec<Submission>,
}

fn err<T>(line: usize, reason: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError {
        line,
        reason: reason.into(),
    })
}

fn num<T: std::str::FromStr>(line: usize, token: &str, what: &str) -> Result<T, ScenarioError> {
    token
        .parse()
        .map_err(|_| ScenarioError {
            line,
            reason: format!("{what} must be a number, got `{token}`"),
        })
}

impl Parser {
    fn directive(&mut self, line: usize, tokens: &[&str]) -> Result<(), ScenarioError> {
        let args = &tokens[1..];
        match tokens[0] {
            "seed" => self.seed = Some(self.one_num(line, args, "seed")?),
            "ticks" => self.ticks = Some(self.one_num(line, args, "ticks")?),
            "timeout" => self.timeout = Some(self.one_num(line, args, "timeout")?),
            "f" => self.f = Some(self.one_num(line, args, "f")?),
            "latency" => {
                if args.len() != 2 {
                    return err(line, "latency takes two arguments: min max");
                }
                self.latency = Some(LatencyRange {
                    min: num(line, args[0], "latency min")?,
                    max: num(line, args[1], "latency max")?,
                });
            }
            "levels" => self.levels(line, args)?,
            "node" => self.node(line, args)?,
            "behavior" => self.behavior(line, args)?,
            "fault" => self.fault(line, args)?,
            "submit" => self.submit(line, args)?,
            other => return err(line, format!("unknown directive `{other}`")),
        }
        Ok(())
    }

    fn one_num<T: std::str::FromStr>(
        &self,
        line: usize,
        args: &[&str],
        what: &str,
    ) -> Result<T, ScenarioError> {
        if args.len() != 1 {
            return err(line, format!("{what} takes exactly one argument"));
        }
        num(line, args[0], what)
    }

    fn levels(&mut self, line: usize, args: &[&str]) -> Result<(), ScenarioError> {
        if args.is_empty() {
            return err(line, "levels needs at least one <level>:<count> pair");
        }
        let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
        for pair in args {
            let Some((l, c)) = pair.split_once(':') else {
                return err(line, format!("expected <level>:<count>, got `{pair}`"));
            };
            let level: u8 = num(line, l, "level")?;
            let count: usize = num(line, c, "count")?;
            if counts.insert(level, count).is_some() {
                return err(line, format!("level {level} listed twice"));
            }
        }
        let expanded = topology_template(&counts).map_err(|e| ScenarioError {
            line,
            reason: e.to_string(),
        })?;
        for cfg in expanded {
            self.add_node(line, cfg)?;
        }
        Ok(())
    }

    fn node(&mut self, line: usize, args: &[&str]) -> Result<(), ScenarioError> {
        if args.len() < 4 || args.len() > 5 {
            return err(
                line,
                "node takes: <id> <role> <level> <validator|client> [<behavior>]",
            );
        }
        let role = Role::parse(args[1])
            .ok_or_else(|| ScenarioError {
                line,
                reason: format!("unknown role `{}`", args[1]),
            })?;
        let der_level: u8 = num(line, args[2], "level")?;
        let is_validator = match args[3] {
            "validator" => true,
            "client" => false,
            other => return err(line, format!("expected validator or client, got `{other}`")),
        };
        let behavior = match args.get(4) {
            Some(text) => self.parse_behavior(line, text)?,
            None => Behavior::Honest,
        };
        self.add_node(
            line,
            NodeConfig {
                id: ParticipantId::from(args[0]),
                role,
                der_level,
                is_validator,
                behavior,
            },
        )
    }

    fn add_node(&mut self, line: usize, cfg: NodeConfig) -> Result<(), ScenarioError> {
        if !self.ids.insert(cfg.id.clone()) {
            return err(line, format!("node {} already declared", cfg.id));
        }
        self.nodes.push(cfg);
        Ok(())
    }

    fn behavior(&mut self, line: usize, args: &[&str]) -> Result<(), ScenarioError> {
        if args.len() != 2 {
            return err(line, "behavior takes: <id> <behavior>");
        }
        let behavior = self.parse_behavior(line, args[1])?;
        let id = self.known_node(line, args[0])?;
        self.nodes
            .iter_mut()
            .find(|n| n.id == id)
            .expect("id checked against the declared set")
            .behavior = behavior;
        Ok(())
    }

    /// Behavior labels as in the core library, with one extension: the
    /// double-spend argument may be a certificate alias instead of a
    /// 64-hex tracking id.
    fn parse_behavior(&self, line: usize, text: &str) -> Result<Behavior, ScenarioError> {
        if let Some(b) = Behavior::parse(text) {
            return Ok(b);
        }
        if let Some(name) = text.strip_prefix("double-spend:") {
            if let Some(tid) = self.aliases.get(name) {
                return Ok(Behavior::DoubleSpendAttempt(*tid));
            }
        }
        err(line, format!("unknown behavior `{text}`"))
    }

    fn known_node(&self, line: usize, token: &str) -> Result<ParticipantId, ScenarioError> {
        let id = ParticipantId::from(token);
        if !self.ids.contains(&id) {
            return err(line, format!("unknown node `{token}`"));
        }
        Ok(id)
    }

    fn fault(&mut self, line: usize, args: &[&str]) -> Result<(), ScenarioError> {
        if args.len() < 2 {
            return err(line, "fault takes: <tick> partition|heal|inject ...");
        }
        let tick: Tick = num(line, args[0], "fault tick")?;
        let kind = match args[1] {
            "heal" => {
                if args.len() != 2 {
                    return err(line, "heal takes no arguments");
                }
                FaultKind::Heal
            }
            "partition" => {
                if args.len() != 3 {
                    return err(line, "partition takes one argument: <a,b|c,d>");
                }
                let mut groups = Vec::new();
                for group in args[2].split('|') {
                    let mut members = BTreeSet::new();
                    for token in group.split(',').filter(|t| !t.is_empty()) {
                        members.insert(self.known_node(line, token)?);
                    }
                    if members.is_empty() {
                        return err(line, "partition group is empty");
                    }
                    groups.push(members);
                }
                FaultKind::Partition(groups)
            }
            "inject" => {
                if args.len() != 4 {
                    return err(line, "inject takes: <id> <behavior>");
                }
                let behavior = self.parse_behavior(line, args[3])?;
                FaultKind::Inject {
                    node: self.known_node(line, args[2])?,
                    behavior,
                }
            }
            other => return err(line, format!("unknown fault kind `{other}`")),
        };
        self.faults.push(FaultEvent { tick, kind });
        Ok(())
    }

    fn alias(&self, line: usize, token: &str) -> Result<TrackingId, ScenarioError> {
        self.aliases
            .get(token)
            .copied()
            .ok_or_else(|| ScenarioError {
                line,
                reason: format!("unknown certificate alias `{token}`"),
            })
    }

    fn submit(&mut self, line: usize, args: &[&str]) -> Result<(), ScenarioError> {
        if args.len() < 3 {
            return err(line, "submit takes: <tick> <signer> <action...> [via <id,id>]");
        }
        let tick: Tick = num(line, args[0], "submit tick")?;
        let signer = self.known_node(line, args[1])?;

        // Split off a trailing `via <id,id>` before reading the action.
        let (action, via) = match args.iter().position(|t| *t == "via") {
            Some(pos) => {
                if pos + 2 != args.len() {
                    return err(line, "via takes one comma-separated validator list");
                }
                let mut targets = Vec::new();
                for token in args[pos + 1].split(',').filter(|t| !t.is_empty()) {
                    let id = self.known_node(line, token)?;
                    let node = self.nodes.iter().find(|n| n.id == id).expect("known");
                    if !node.is_validator {
                        return err(line, format!("via target `{token}` is not a validator"));
                    }
                    targets.push(id);
                }
                (&args[2..pos], targets)
            }
            None => (&args[2..], Vec::new()),
        };
        if action.is_empty() {
            return err(line, "submit is missing an action");
        }

        let payload = self.action(line, tick, &signer, action[0], &action[1..])?;
        let nonce = self.nonces.entry(signer.clone()).or_insert(0);
        *nonce += 1;
        let key = Keypair::derived(signer.as_str());
        let tx = SignedTransaction::sign(payload, signer, *nonce, &key);
        self.workload.push(Submission { tick, tx, via });
        Ok(())
    }

    fn action(
        &mut self,
        line: usize,
        tick: Tick,
        signer: &ParticipantId,
        verb: &str,
        args: &[&str],
    ) -> Result<TransactionPayload, ScenarioError> {
        match verb {
            "issue" => {
                if args.len() != 4 {
                    return err(line, "issue takes: <alias> <source> <type> <project-name>");
                }
                let source = EnergySource::parse(args[1])
                    .ok_or_else(|| ScenarioError {
                        line,
                        reason: format!("unknown energy source `{}`", args[1]),
                    })?;
                let certificate_type = CertificateType::parse(args[2])
                    .ok_or_else(|| ScenarioError {
                        line,
                        reason: format!("unknown certificate type `{}`", args[2]),
                    })?;
                if self.aliases.contains_key(args[0]) {
                    return err(line, format!("alias `{}` already bound", args[0]));
                }
                self.issue_seq += 1;
                let tid = derive_tracking_id(signer, &source, tick, self.issue_seq);
                self.aliases.insert(args[0].to_string(), tid);
                Ok(TransactionPayload::Issue {
                    project_name: args[3].to_string(),
                    certificate_type,
                    source,
                    energy_mwh: 1,
                    issued_at: tick,
                    nonce: self.issue_seq,
                })
            }
            "aggregate" => {
                if args.is_empty() {
                    return err(line, "aggregate takes: <alias> ...");
                }
                let members = args
                    .iter()
                    .map(|a| self.alias(line, a))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(TransactionPayload::Aggregate {
                    broker: signer.clone(),
                    members,
                })
            }
            "trade" => {
                if args.len() != 2 {
                    return err(line, "trade takes: <alias> <new-owner>");
                }
                Ok(TransactionPayload::Trade {
                    target: TradeTarget::Certificate(self.alias(line, args[0])?),
                    new_owner: self.known_node(line, args[1])?,
                })
            }
            "trade-aggregate" => {
                if args.len() < 2 {
                    return err(line, "trade-aggregate takes: <new-owner> <alias> ...");
                }
                let members = args[1..]
                    .iter()
                    .map(|a| self.alias(line, a))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(TransactionPayload::Trade {
                    target: TradeTarget::Aggregate(derive_aggregate_id(&members)),
                    new_owner: self.known_node(line, args[0])?,
                })
            }
            "swap" => {
                if args.len() != 2 {
                    return err(line, "swap takes: <alias> <new-owner>");
                }
                Ok(TransactionPayload::Swap {
                    tracking_id: self.alias(line, args[0])?,
                    new_owner: self.known_node(line, args[1])?,
                })
            }
            "consume" => {
                if args.len() != 2 {
                    return err(line, "consume takes: <alias> <mwh>");
                }
                Ok(TransactionPayload::ConsumptionReport {
                    tracking_id: self.alias(line, args[0])?,
                    consumer: signer.clone(),
                    mwh_used: num(line, args[1], "mwh")?,
                })
            }
            "retire" => {
                if args.len() != 2 {
                    return err(line, "retire takes: <alias> <reason>");
                }
                let reason = RetirementReason::parse(args[1])
                    .ok_or_else(|| ScenarioError {
                        line,
                        reason: format!("unknown retirement reason `{}`", args[1]),
                    })?;
                Ok(TransactionPayload::Retire {
                    tracking_id: self.alias(line, args[0])?,
                    reason,
                })
            }
            "checkpoint" => {
                if args.len() != 2 {
                    return err(line, "checkpoint takes: <period-start> <period-end>");
                }
                Ok(TransactionPayload::AuditCheckpoint {
                    period_start: num(line, args[0], "period start")?,
                    period_end: num(line, args[1], "period end")?,
                })
            }
            other => err(line, format!("unknown action `{other}`")),
        }
    }

    fn finish(self) -> Result<Scenario, ScenarioError> {
        if self.nodes.is_empty() {
            return err(0, "scenario declares no nodes");
        }
        let defaults = SimRun::new(Vec::new());
        let sim = SimRun {
            seed: self.seed.unwrap_or(defaults.seed),
            tick_limit: self.ticks.unwrap_or(defaults.tick_limit),
            latency: self.latency.unwrap_or(defaults.latency),
            round_timeout: self.timeout.unwrap_or(defaults.round_timeout),
            f: self.f.unwrap_or(defaults.f),
            nodes: self.nodes,
            faults: self.faults,
            workload: self.workload,
        };
        Ok(Scenario {
            sim,
            aliases: self.aliases,
        })
    }
}

// ---------------------------------------------------------------------------
