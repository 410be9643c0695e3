//! The simulation event log: one line per event, tab-separated, stable
//! field order, so logs diff cleanly and byte-compare across runs.

use std::fmt;

use thiserror::Error;

use crate::Tick;

/// Every kind of line a simulation can emit. The set is closed: control
/// mapping in the audit module is checked for completeness against
/// [`EventKind::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    /// A workload transaction enters the network.
    Submit,
    /// A node refuses a transaction or a proposal; details carry `code=`.
    Reject,
    /// A leader broadcasts a block proposal.
    Propose,
    /// A validator signs a vote for a proposal.
    Vote,
    /// A node appends a certified block to its chain.
    Commit,
    /// A validator's round timer expired and the round advanced.
    Timeout,
    /// The network split into groups.
    Partition,
    /// The partition dissolved.
    Heal,
    /// A scripted behavior change took effect on a node.
    Inject,
    /// A node accepted proof that a validator signed conflicting votes.
    EquivocationDetected,
    /// The end-of-run integrity sweep found a corrupted local chain.
    TamperDetected,
    /// More Byzantine validators than the configured fault budget.
    GuaranteesVoid,
}

impl EventKind {
    pub const ALL: [EventKind; 12] = [
        EventKind::Submit,
        EventKind::Reject,
        EventKind::Propose,
        EventKind::Vote,
        EventKind::Commit,
        EventKind::Timeout,
        EventKind::Partition,
        EventKind::Heal,
        EventKind::Inject,
        EventKind::EquivocationDetected,
        EventKind::TamperDetected,
        EventKind::GuaranteesVoid,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            EventKind::Submit => "submit",
            EventKind::Reject => "reject",
            EventKind::Propose => "propose",
            EventKind::Vote => "vote",
            EventKind::Commit => "commit",
            EventKind::Timeout => "timeout",
            EventKind::Partition => "partition",
            EventKind::Heal => "heal",
            EventKind::Inject => "inject",
            EventKind::EquivocationDetected => "equivocation-detected",
            EventKind::TamperDetected => "tamper-detected",
            EventKind::GuaranteesVoid => "guarantees-void",
        }
    }

    pub fn parse(text: &str) -> Option<EventKind> {
        EventKind::ALL.iter().copied().find(|k| k.label() == text)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One log line: `tick<TAB>node<TAB>kind<TAB>details`. Network-level
/// events (partition, heal, guarantees-void) use the pseudo-node `net`.
/// Details are `key=value` pairs joined by single spaces, in an order
/// fixed at the emission site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub tick: Tick,
    pub node: String,
    pub kind: EventKind,
    pub details: String,
}

impl EventRecord {
    pub fn render(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.tick, self.node, self.kind, self.details)
    }

    pub fn parse(line: &str) -> Result<EventRecord, EventParseError> {
        let mut parts = line.splitn(4, '\t');
        let tick = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or(EventParseError::BadTick)?;
        let node = parts.next().ok_or(EventParseError::MissingField)?;
        let kind_text = parts.next().ok_or(EventParseError::MissingField)?;
        let kind = EventKind::parse(kind_text)
            .ok_or_else(|| EventParseError::UnknownKind(kind_text.to_string()))?;
        let details = parts.next().ok_or(EventParseError::MissingField)?;
        Ok(EventRecord {
            tick,
            node: node.to_string(),
            kind,
            details: details.to_string(),
        })
    }

    /// Pull one `key=value` pair out of the details.
    pub fn detail(&self, key: &str) -> Option<&str> {
        self.details.split(' ').find_map(|pair| {
            let (k, v) = pair.split_once('=')?;
            (k == key).then_some(v)
        })
    }
}

/// Render a whole log, one line per event, trailing newline.
pub fn render_log(events: &[EventRecord]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.render());
        out.push('\n');
    }
    out
}

/// Parse a rendered log; the error carries the 1-based line number.
pub fn parse_log(text: &str) -> Result<Vec<EventRecord>, (usize, EventParseError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| EventRecord::parse(l).map_err(|e| (i + 1, e)))
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EventParseError {
    #[error("first field is not a tick")]
    BadTick,
    #[error("expected tick, node, kind, details separated by tabs")]
    MissingField,
    #[error("unknown event kind {0:?}")]
    UnknownKind(String),
}
