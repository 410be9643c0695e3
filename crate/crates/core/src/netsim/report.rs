//! The run summary: what every node ended up with, what was detected,
//! and how long commits took.

use std::collections::BTreeMap;

use crate::rec::ParticipantId;
use crate::Tick;

use super::event::{render_log, EventRecord};

/// Where one node finished: chain tip, integrity verdict, behavior it ran.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSummary {
    pub behavior: String,
    /// Committed height of the chain tip (genesis = 0).
    pub height: u64,
    /// Hex digest of the chain tip.
    pub digest: String,
    /// `valid`, or `invalid-at:<height>:<code>` from the end-of-run sweep.
    pub integrity: String,
}

/// One workload transaction's fate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitRecord {
    /// First 12 hex chars of the transaction digest.
    pub tx: String,
    pub submitted: Tick,
    /// Tick of the first commit anywhere in the network, if any.
    pub committed: Option<Tick>,
}

/// Everything a simulation run reports. [`SimReport::render`] is stable:
/// equal reports render to identical bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimReport {
    pub seed: u64,
    pub ticks_run: Tick,
    /// False once Byzantine validators outnumber the fault budget.
    pub guarantees_void: bool,
    /// True while every committed block preserved the MWh identity.
    pub conservation_ok: bool,
    /// True when every honest node's chain is a prefix of the longest
    /// honest chain (single linear history).
    pub honest_agree: bool,
    pub nodes: BTreeMap<ParticipantId, NodeSummary>,
    /// One record per workload transaction, in submission order.
    pub commits: Vec<CommitRecord>,
    /// Validators flagged by at least one honest node.
    pub flagged: Vec<ParticipantId>,
    /// Detection lines: equivocation-detected, tamper-detected,
    /// guarantees-void.
    pub detections: Vec<EventRecord>,
    /// The full event log.
    pub events: Vec<EventRecord>,
}

impl SimReport {
    /// The event log as text, one line per event.
    pub fn log_text(&self) -> String {
        render_log(&self.events)
    }

    pub fn committed_count(&self) -> usize {
        self.commits.iter().filter(|c| c.committed.is_some()).count()
    }

    /// Stable structured rendering (the machine format). Excludes the raw
    /// event log, which ships as its own artifact.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut line = |s: String| {
            out.push_str(&s);
            out.push('\n');
        };
        line(format!("seed: {}", self.seed));
        line(format!("ticks-run: {}", self.ticks_run));
        line(format!("guarantees-void: {}", self.guarantees_void));
        line(format!("conservation-ok: {}", self.conservation_ok));
        line(format!("honest-digests-agree: {}", self.honest_agree));
        let flagged = if self.flagged.is_empty() {
            "-".to_string()
        } else {
            self.flagged
                .iter()
                .map(|id| id.as_str())
                .collect::<Vec<_>>()
                .join(",")
        };
        line(format!("flagged: {flagged}"));
        line("nodes:".to_string());
        for (id, n) in &self.nodes {
            line(format!("  {id}:"));
            line(format!("    behavior: {}", n.behavior));
            line(format!("    height: {}", n.height));
            line(format!("    digest: {}", n.digest));
            line(format!("    integrity: {}", n.integrity));
        }
        line("commits:".to_string());
        for c in &self.commits {
            match c.committed {
                Some(t) => line(format!(
                    "  {} submitted={} committed={} latency={}",
                    c.tx,
                    c.submitted,
                    t,
                    t.saturating_sub(c.submitted)
                )),
                None => line(format!(
                    "  {} submitted={} committed=- latency=-",
                    c.tx, c.submitted
                )),
            }
        }
        line("detections:".to_string());
        for d in &self.detections {
            line(format!("  {}", d.render()));
        }
        out
    }
}
