//! Simulation inputs: node configs, fault scripts, workloads, topology.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::consensus;
use crate::ledger::SignedTransaction;
use crate::rec::{ParticipantId, Role, TrackingId};
use crate::Tick;

// ---------------------------------------------------------------------------
// Node behavior
// ---------------------------------------------------------------------------

/// What a node does with its keys and its copy of the ledger. Exactly one
/// behavior per node; everything except `Honest` is adversarial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Behavior {
    /// Follows the protocol.
    Honest,
    /// Silently rewrites the given height in its own chain store once the
    /// block exists. Covert: detection comes from the integrity sweep.
    TamperStoredBlock(u64),
    /// Votes twice per proposal — once for the real block, once for a
    /// fabricated hash — handing the leader equivocation evidence.
    EquivocateVotes,
    /// Submits (and, as leader, stuffs a proposal with) a transaction whose
    /// signature was produced by the wrong key.
    ForgeTransaction,
    /// Re-broadcasts a transaction that is already committed, verbatim.
    ReplayTransaction,
    /// Races a retirement and a trade of the same certificate under one
    /// nonce through two different validators.
    DoubleSpendAttempt(TrackingId),
}

impl Behavior {
    pub fn is_honest(&self) -> bool {
        matches!(self, Behavior::Honest)
    }

    /// Stable label used in event logs and scenario files.
    pub fn label(&self) -> String {
        match self {
            Behavior::Honest => "honest".into(),
            Behavior::TamperStoredBlock(h) => format!("tamper-stored-block:{h}"),
            Behavior::EquivocateVotes => "equivocate-votes".into(),
            Behavior::ForgeTransaction => "forge-transaction".into(),
            Behavior::ReplayTransaction => "replay-transaction".into(),
            Behavior::DoubleSpendAttempt(tid) => format!("double-spend:{}", tid.to_hex()),
        }
    }

    pub fn parse(text: &str) -> Option<Behavior> {
        match text {
            "honest" => return Some(Behavior::Honest),
            "equivocate-votes" => return Some(Behavior::EquivocateVotes),
            "forge-transaction" => return Some(Behavior::ForgeTransaction),
            "replay-transaction" => return Some(Behavior::ReplayTransaction),
            _ => {}
        }
        if let Some(h) = text.strip_prefix("tamper-stored-block:") {
            return h.parse().ok().map(Behavior::TamperStoredBlock);
        }
        if let Some(hex) = text.strip_prefix("double-spend:") {
            return TrackingId::from_hex(hex).ok().map(Behavior::DoubleSpendAttempt);
        }
        None
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// One simulated node: a ledger participant plus its scripted behavior.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeConfig {
    pub id: ParticipantId,
    pub role: Role,
    pub der_level: u8,
    pub is_validator: bool,
    pub behavior: Behavior,
}

// ---------------------------------------------------------------------------
// Fault script
// ---------------------------------------------------------------------------

/// A change to the network or to one node, fired at a fixed tick.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultKind {
    /// Split the network into the given groups. Nodes absent from every
    /// group are isolated. Replaces any partition already in force.
    Partition(Vec<BTreeSet<ParticipantId>>),
    /// Dissolve the current partition.
    Heal,
    /// Switch one node's behavior mid-run.
    Inject {
        node: ParticipantId,
        behavior: Behavior,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultEvent {
    pub tick: Tick,
    pub kind: FaultKind,
}

// ---------------------------------------------------------------------------
// Workload
// ---------------------------------------------------------------------------

/// One pre-signed transaction submitted at a fixed tick, either broadcast
/// to every validator (empty `via`) or handed only to the named ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub tick: Tick,
    pub tx: SignedTransaction,
    pub via: Vec<ParticipantId>,
}

// ---------------------------------------------------------------------------
// The full run description
// ---------------------------------------------------------------------------

/// Message latency: uniform integer ticks in `[min, max]`, drawn from the
/// run's seeded generator. The only source of randomness in a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyRange {
    pub min: Tick,
    pub max: Tick,
}

impl Default for LatencyRange {
    fn default() -> Self {
        LatencyRange { min: 1, max: 3 }
    }
}

/// Everything that determines a simulation. Two runs built from equal
/// `SimRun` values produce byte-identical event logs and reports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimRun {
    pub seed: u64,
    pub tick_limit: Tick,
    pub latency: LatencyRange,
    /// Ticks a validator waits on a height/round before advancing the round.
    pub round_timeout: Tick,
    /// Fault budget the validator set is sized for.
    pub f: usize,
    pub nodes: Vec<NodeConfig>,
    pub faults: Vec<FaultEvent>,
    pub workload: Vec<Submission>,
}

impl SimRun {
    /// A run over the given nodes with library defaults: seed 0, 1000
    /// ticks, latency 1–3, round timeout 10, f=1.
    pub fn new(nodes: Vec<NodeConfig>) -> Self {
        SimRun {
            seed: 0,
            tick_limit: 1000,
            latency: LatencyRange::default(),
            round_timeout: 10,
            f: 1,
            nodes,
            faults: Vec::new(),
            workload: Vec::new(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("a simulation needs at least one node")]
    NoNodes,
    #[error("node id {0} appears twice")]
    DuplicateNode(ParticipantId),
    #[error("topology yields no validators")]
    NoValidators,
    #[error("{0}")]
    Quorum(consensus::ConfigError),
    #[error("latency range inverted: min {min} > max {max}")]
    BadLatency { min: Tick, max: Tick },
    #[error("round timeout must be at least 1 tick")]
    BadTimeout,
    #[error("{what} references unknown node {node}")]
    UnknownNode { what: &'static str, node: ParticipantId },
    #[error("node {role} at level {level} violates the level template")]
    BadLevel { role: Role, level: u8 },
}

// ---------------------------------------------------------------------------
// Topology template
// ---------------------------------------------------------------------------

/// Expand per-level node counts into concrete node configs along the
/// five-level DER hierarchy:
///
/// * level 1 → generators (autonomous DER sites), ids `G1..`
/// * level 2 → brokers (FDEMS aggregators), ids `Br1..`
/// * level 3 → trading platforms / tracking systems, ids `T1..`
/// * level 4 → utilities, ids `U1..`
/// * level 5 → alternating regulators (`R1..`) and market platforms (`M1..`)
///
/// Levels 1–2 are clients that submit transactions; every node at levels
/// 3–5 is a validator. All behaviors start `Honest`; scenarios override
/// per node afterwards.
pub fn topology_template(
    level_counts: &BTreeMap<u8, usize>,
) -> Result<Vec<NodeConfig>, ConfigError> {
    let mut nodes = Vec::new();
    for (&level, &count) in level_counts {
        for i in 1..=count {
            let (id, role) = match level {
                1 => (format!("G{i}"), Role::Generator),
                2 => (format!("Br{i}"), Role::Broker),
                3 => (format!("T{i}"), Role::TradingPlatform),
                4 => (format!("U{i}"), Role::Utility),
                5 if i % 2 == 1 => (format!("R{}", i.div_ceil(2)), Role::Regulator),
                5 => (format!("M{}", i / 2), Role::TradingPlatform),
                _ => {
                    return Err(ConfigError::BadLevel {
                        role: Role::Validator,
                        level,
                    })
                }
            };
            nodes.push(NodeConfig {
                id: ParticipantId::from(id.as_str()),
                role,
                der_level: level,
                is_validator: level >= 3,
                behavior: Behavior::Honest,
            });
        }
    }
    if nodes.is_empty() {
        return Err(ConfigError::NoNodes);
    }
    if !nodes.iter().any(|n| n.is_validator) {
        return Err(ConfigError::NoValidators);
    }
    Ok(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(pairs: &[(u8, usize)]) -> BTreeMap<u8, usize> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn the_seven_node_template_expands_as_documented() {
        let nodes =
            topology_template(&counts(&[(1, 2), (2, 1), (3, 1), (4, 1), (5, 2)])).unwrap();
        let ids: Vec<&str> = nodes.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["G1", "G2", "Br1", "T1", "U1", "R1", "M1"]);
        let validators: Vec<&str> = nodes
            .iter()
            .filter(|n| n.is_validator)
            .map(|n| n.id.as_str())
            .collect();
        assert_eq!(validators, ["T1", "U1", "R1", "M1"]);
        assert!(nodes.iter().all(|n| n.behavior.is_honest()));
        assert_eq!(nodes[3].role, Role::TradingPlatform);
        assert_eq!(nodes[4].role, Role::Utility);
        assert_eq!(nodes[5].role, Role::Regulator);
    }

    #[test]
    fn clientless_and_validatorless_topologies_are_refused() {
        assert_eq!(topology_template(&counts(&[])), Err(ConfigError::NoNodes));
        assert_eq!(
            topology_template(&counts(&[(1, 0), (3, 0)])),
            Err(ConfigError::NoNodes)
        );
        assert_eq!(
            topology_template(&counts(&[(1, 3)])),
            Err(ConfigError::NoValidators)
        );
    }

    #[test]
    fn out_of_range_levels_are_refused() {
        assert!(matches!(
            topology_template(&counts(&[(6, 1)])),
            Err(ConfigError::BadLevel { level: 6, .. })
        ));
    }

    #[test]
    fn behavior_labels_round_trip() {
        let tid = crate::rec::derive_tracking_id(
            &ParticipantId::from("G1"),
            &crate::rec::EnergySource::Solar,
            0,
            0,
        );
        let all = [
            Behavior::Honest,
            Behavior::TamperStoredBlock(2),
            Behavior::EquivocateVotes,
            Behavior::ForgeTransaction,
            Behavior::ReplayTransaction,
            Behavior::DoubleSpendAttempt(tid),
        ];
        for b in all {
            assert_eq!(Behavior::parse(&b.label()), Some(b.clone()), "{b}");
        }
        assert_eq!(Behavior::parse("tamper-stored-block:x"), None);
        assert_eq!(Behavior::parse("double-spend:zz"), None);
        assert_eq!(Behavior::parse("sleep"), None);
    }
}
