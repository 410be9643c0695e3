//! Deterministic multi-node network simulation.
//!
//! A [`SimRun`] describes everything about a run: the node roster (usually
//! from [`topology_template`]), the latency band, the fault script, and the
//! transaction workload. [`run`] executes it on a discrete-event loop —
//! every node's ledger, registry, and consensus state lives in one process,
//! messages travel through one seeded queue — and returns a [`SimReport`]
//! plus a full event log. Equal inputs give byte-identical outputs, so a
//! failing seed is a complete reproduction recipe.
//!
//! Misbehavior is scripted per node with [`Behavior`] and can be switched
//! on mid-run through [`FaultKind::Inject`]; network splits are
//! [`FaultKind::Partition`] / [`FaultKind::Heal`]. The report records which
//! defense caught each attack: rejection codes in the log, flagged voters,
//! the end-of-run integrity sweep, and the cross-node agreement checks.

mod config;
mod engine;
mod event;
mod report;

pub use config::{
    topology_template, Behavior, ConfigError, FaultEvent, FaultKind, LatencyRange, NodeConfig,
    SimRun, Submission,
};
pub use engine::{run, run_with_artifacts, NodeArtifacts};
pub use event::{parse_log, render_log, EventKind, EventParseError, EventRecord};
pub use report::{CommitRecord, NodeSummary, SimReport};
