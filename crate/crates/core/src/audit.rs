//! Offline audit: replay a chain into registry state, balance the
//! certificate books for a reporting period, and mine the event log for
//! misbehavior that the network defeated along the way.
//!
//! The auditor trusts nothing but bytes it can recompute. [`replay`] folds
//! every committed transaction through the same pure transition the nodes
//! ran, so a doctored ledger cannot present books that its own history does
//! not produce. [`annual_audit`] layers three sweeps on top: a cryptographic
//! verification of the chain, a transaction scan for lifecycle violations
//! that should never have committed, and an event-log scan for attempts the
//! validators rejected in flight. Every finding carries evidence a reader
//! can resolve — a block height and transaction index, or a node and tick.
//!
//! [`ControlMap`] ties event kinds to the security-control families they
//! exercise, so a run's log doubles as control-coverage evidence. The map
//! is loaded from text and must account for every event kind the simulator
//! can emit; partial maps are a load-time error, not a silent gap.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::ledger::{Chain, ChainVerdict, QuorumRules};
use crate::netsim::{EventKind, EventRecord};
use crate::rec::{
    apply, derive_tracking_id, CertStatus, LifecycleError, ParticipantTable, RegistryState,
    RetirementReason, TrackingId, TradeTarget, TransactionPayload,
};
use crate::Tick;

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("height {height} tx {index}: {source}")]
pub struct ReplayError {
    pub height: u64,
    pub index: usize,
    pub source: LifecycleError,
}

/// Rebuild registry state from a chain by replaying every transaction
/// through the lifecycle transition, in commit order. Fails on the first
/// transaction that does not apply — on a chain produced by honest quorum
/// that cannot happen, so an error here is evidence in itself.
pub fn replay(chain: &Chain, participants: &ParticipantTable) -> Result<RegistryState, ReplayError> {
    let mut state = RegistryState::new();
    for block in chain.blocks() {
        for (index, tx) in block.transactions.iter().enumerate() {
            state = apply(&state, &tx.payload, &tx.signer, participants, block.proposed_at)
                .map_err(|source| ReplayError {
                    height: block.height,
                    index,
                    source,
                })?;
        }
    }
    Ok(state)
}

// ---------------------------------------------------------------------------
// Periods and findings
// ---------------------------------------------------------------------------

/// A reporting window over issuance timestamps and event ticks, inclusive
/// on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Period {
    pub start: Tick,
    pub end: Tick,
}

impl Period {
    pub fn contains(&self, t: Tick) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Where a finding can be checked: a position in the chain itself, or a
/// node's event log entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Evidence {
    Chain { height: u64, index: usize },
    Node { node: String, tick: Tick },
}

impl Evidence {
    pub fn render(&self) -> String {
        match self {
            Evidence::Chain { height, index } => format!("chain:{height}:{index}"),
            Evidence::Node { node, tick } => format!("node:{node}:{tick}"),
        }
    }

    fn parse(text: &str) -> Option<Evidence> {
        let mut parts = text.splitn(3, ':');
        match (parts.next()?, parts.next()?, parts.next()?) {
            ("chain", h, i) => Some(Evidence::Chain {
                height: h.parse().ok()?,
                index: i.parse().ok()?,
            }),
            ("node", id, t) => Some(Evidence::Node {
                node: id.to_string(),
                tick: t.parse().ok()?,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnomalyKind {
    /// A retirement of an already-retired certificate — committed, or
    /// attempted and rejected.
    DoubleRetireAttempt,
    /// A trade, swap, or consumption report against a retired certificate.
    TradeAfterRetire,
    /// Two issuances deriving the same tracking id.
    DuplicateTrackingId,
    /// A validator provably voted two ways in one consensus round.
    EquivocationObserved,
    /// A stored block fails re-verification, or a committed transaction
    /// does not replay.
    ChainIntegrityFailure(u64),
}

impl AnomalyKind {
    pub fn label(&self) -> String {
        match self {
            AnomalyKind::DoubleRetireAttempt => "double-retire-attempt".into(),
            AnomalyKind::TradeAfterRetire => "trade-after-retire".into(),
            AnomalyKind::DuplicateTrackingId => "duplicate-tracking-id".into(),
            AnomalyKind::EquivocationObserved => "equivocation-observed".into(),
            AnomalyKind::ChainIntegrityFailure(h) => format!("chain-integrity-failure:{h}"),
        }
    }

    pub fn parse(text: &str) -> Option<AnomalyKind> {
        match text {
            "double-retire-attempt" => Some(AnomalyKind::DoubleRetireAttempt),
            "trade-after-retire" => Some(AnomalyKind::TradeAfterRetire),
            "duplicate-tracking-id" => Some(AnomalyKind::DuplicateTrackingId),
            "equivocation-observed" => Some(AnomalyKind::EquivocationObserved),
            _ => {
                let height = text.strip_prefix("chain-integrity-failure:")?;
                Some(AnomalyKind::ChainIntegrityFailure(height.parse().ok()?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnomalyFinding {
    pub kind: AnomalyKind,
    pub evidence: Evidence,
    /// Free-form specifics: the tracking id, the voter, the failure code.
    pub detail: String,
}

// ---------------------------------------------------------------------------
// Control map
// ---------------------------------------------------------------------------

/// Maps event kinds to the security-control families they exercise.
///
/// Text format, one mapping per line (`#` comments and blank lines
/// allowed):
///
/// ```text
/// commit: integrity, accountability
/// reject: access-control
/// reject:BadSignature: authentication, integrity
/// ```
///
/// A `reject:<Code>` key refines the base `reject` mapping for events
/// whose details carry that code. Loading fails unless every event kind
/// the simulator emits has a base mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlMap {
    base: BTreeMap<String, Vec<String>>,
    refined: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControlMapError {
    #[error("line {line}: expected `event-kind: family[, family...]`")]
    BadLine { line: usize },
    #[error("line {line}: {kind} is not an event kind")]
    UnknownKind { line: usize, kind: String },
    #[error("line {line}: no families listed")]
    EmptyFamilies { line: usize },
    #[error("line {line}: {key} mapped twice")]
    DuplicateKey { line: usize, key: String },
    #[error("event kind {0} has no control mapping")]
    UnmappedEventKind(String),
}

impl ControlMap {
    pub fn parse(text: &str) -> Result<ControlMap, ControlMapError> {
        let mut base = BTreeMap::new();
        let mut refined = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            // `reject:BadSignature: auth` splits at the LAST ": " so the
            // refinement code stays with the key.
            let (key, families) = trimmed
                .rsplit_once(": ")
                .ok_or(ControlMapError::BadLine { line })?;
            let key = key.trim();
            let families: Vec<String> = families
                .split(',')
                .map(|f| f.trim().to_string())
                .filter(|f| !f.is_empty())
                .collect();
            if families.is_empty() {
                return Err(ControlMapError::EmptyFamilies { line });
            }
            if let Some(code) = key.strip_prefix("reject:") {
                if code.is_empty() {
                    return Err(ControlMapError::BadLine { line });
                }
                if refined.insert(key.to_string(), families).is_some() {
                    return Err(ControlMapError::DuplicateKey {
                        line,
                        key: key.to_string(),
                    });
                }
            } else {
                if EventKind::parse(key).is_none() {
                    return Err(ControlMapError::UnknownKind {
                        line,
                        kind: key.to_string(),
                    });
                }
                if base.insert(key.to_string(), families).is_some() {
                    return Err(ControlMapError::DuplicateKey {
                        line,
                        key: key.to_string(),
                    });
                }
            }
        }
        for kind in EventKind::ALL {
            if !base.contains_key(kind.label()) {
                return Err(ControlMapError::UnmappedEventKind(kind.label().to_string()));
            }
        }
        Ok(ControlMap { base, refined })
    }

    /// The families an event exercises. Reject events with a `code=`
    /// detail use their refinement when one exists.
    pub fn families_for(&self, event: &EventRecord) -> &[String] {
        if event.kind == EventKind::Reject {
            if let Some(code) = event.detail("code") {
                if let Some(families) = self.refined.get(&format!("reject:{code}")) {
                    return families;
                }
            }
        }
        self.base
            .get(event.kind.label())
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// Every event line annotated with its families, tab-separated.
    pub fn tag_events(&self, events: &[EventRecord]) -> Vec<String> {
        events
            .iter()
            .map(|e| format!("{}\t{}", e.render(), self.families_for(e).join(",")))
            .collect()
    }

    /// How many events exercised each family.
    pub fn family_counts(&self, events: &[EventRecord]) -> BTreeMap<String, u64> {
        let mut counts = BTreeMap::new();
        for event in events {
            for family in self.families_for(event) {
                *counts.entry(family.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    /// (covered, distinct) event kinds among the given events. A map that
    /// loaded successfully covers everything, so covered == distinct.
    pub fn coverage(&self, events: &[EventRecord]) -> (usize, usize) {
        let kinds: BTreeSet<&'static str> = events.iter().map(|e| e.kind.label()).collect();
        let covered = kinds
            .iter()
            .filter(|k| self.base.contains_key(**k))
            .count();
        (covered, kinds.len())
    }
}

/// The control mapping shipped with the simulator: every event kind tied
/// to the families it gives evidence for.
pub const DEFAULT_CONTROL_MAP: &str = "\
# Families: integrity, authentication, access-control, replay-protection,
# consensus-safety, availability, accountability, adversary-simulation.
submit: accountability
reject: access-control, integrity
reject:BadSignature: authentication, integrity
reject:StaleNonce: replay-protection, integrity
reject:Locked: consensus-safety
reject:WrongLeader: consensus-safety
reject:BadQuorumCert: consensus-safety, integrity
reject:CertificateRetired: integrity, access-control
reject:NotOwner: access-control
reject:UnauthorizedRole: access-control
propose: consensus-safety
vote: consensus-safety
commit: integrity, accountability
timeout: availability
partition: availability
heal: availability
inject: adversary-simulation
equivocation-detected: consensus-safety, accountability
tamper-detected: integrity, accountability
guarantees-void: availability, consensus-safety
";

// ---------------------------------------------------------------------------
// The audit report
// ---------------------------------------------------------------------------

/// Retirements within the period, split by declared reason.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RetirementTally {
    pub statutory_or_regulatory: u64,
    pub public_claim: u64,
    pub attribute: u64,
}

impl RetirementTally {
    pub fn total(&self) -> u64 {
        self.statutory_or_regulatory + self.public_claim + self.attribute
    }

    fn bump(&mut self, reason: RetirementReason) {
        match reason {
            RetirementReason::StatutoryOrRegulatoryUse => self.statutory_or_regulatory += 1,
            RetirementReason::PublicClaimPurchase => self.public_claim += 1,
            RetirementReason::AttributePurchase => self.attribute += 1,
        }
    }
}

/// What a period audit found: certificate census, books balance,
/// conservation, control coverage, and every anomaly with its evidence.
///
/// The census covers certificates whose issuance timestamp falls in the
/// period, bucketed by their status at the chain head, so
/// `issued_count == active_count + aggregated_count + retired.total()`
/// whenever the books balance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    pub period: Period,
    pub issued_count: u64,
    pub issued_mwh: u64,
    pub active_count: u64,
    pub aggregated_count: u64,
    pub retired: RetirementTally,
    /// Ownership swaps accumulated by period-issued certificates.
    pub swap_total: u64,
    /// The census identity above, tallied independently and rechecked.
    pub issuance_balanced: bool,
    /// The megawatt-hour conservation identity over the whole registry.
    pub conservation_ok: bool,
    /// (covered, distinct) event kinds seen in the period's log.
    pub control_coverage: (usize, usize),
    pub anomalies: Vec<AnomalyFinding>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReportParseError {
    #[error("line {line}: expected `{expected}`")]
    Expected { line: usize, expected: &'static str },
    #[error("line {line}: bad value")]
    BadValue { line: usize },
    #[error("report ended early; expected `{0}`")]
    Truncated(&'static str),
}

impl AuditReport {
    /// Stable text form: fixed key order, two-space indentation for the
    /// nested sections, one `- ` line per anomaly. [`AuditReport::parse`]
    /// inverts it exactly.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("period: {}..{}\n", self.period.start, self.period.end));
        out.push_str(&format!("issued-count: {}\n", self.issued_count));
        out.push_str(&format!("issued-mwh: {}\n", self.issued_mwh));
        out.push_str(&format!("active-count: {}\n", self.active_count));
        out.push_str(&format!("aggregated-count: {}\n", self.aggregated_count));
        out.push_str(&format!("retired-count: {}\n", self.retired.total()));
        out.push_str("retired-by-reason:\n");
        out.push_str(&format!(
            "  statutory-or-regulatory-use: {}\n",
            self.retired.statutory_or_regulatory
        ));
        out.push_str(&format!(
            "  public-claim-purchase: {}\n",
            self.retired.public_claim
        ));
        out.push_str(&format!(
            "  attribute-purchase: {}\n",
            self.retired.attribute
        ));
        out.push_str(&format!("swap-total: {}\n", self.swap_total));
        out.push_str(&format!("issuance-balanced: {}\n", self.issuance_balanced));
        out.push_str(&format!("conservation-ok: {}\n", self.conservation_ok));
        out.push_str(&format!(
            "control-coverage: {}/{}\n",
            self.control_coverage.0, self.control_coverage.1
        ));
        out.push_str(&format!("anomalies: {}\n", self.anomalies.len()));
        for finding in &self.anomalies {
            out.push_str(&format!(
                "  - kind={} evidence={} detail={}\n",
                finding.kind.label(),
                finding.evidence.render(),
                finding.detail
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<AuditReport, ReportParseError> {
        type Cursor<'a> = std::iter::Enumerate<std::str::Lines<'a>>;
        fn take<'a>(
            lines: &mut Cursor<'a>,
            expected: &'static str,
        ) -> Result<(usize, &'a str), ReportParseError> {
            lines
                .next()
                .map(|(i, l)| (i + 1, l))
                .ok_or(ReportParseError::Truncated(expected))
        }
        fn field(
            lines: &mut Cursor<'_>,
            key: &'static str,
        ) -> Result<(usize, String), ReportParseError> {
            let (line, raw) = take(lines, key)?;
            // Nested keys render indented; indentation is not significant
            // when reading back.
            raw.trim_start()
                .strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(": "))
                .map(|v| (line, v.to_string()))
                .ok_or(ReportParseError::Expected {
                    line,
                    expected: key,
                })
        }
        let mut lines: Cursor<'_> = text.lines().enumerate();
        fn num((line, value): (usize, String)) -> Result<u64, ReportParseError> {
            value
                .trim()
                .parse()
                .map_err(|_| ReportParseError::BadValue { line })
        }
        fn flag((line, value): (usize, String)) -> Result<bool, ReportParseError> {
            match value.trim() {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(ReportParseError::BadValue { line }),
            }
        }

        let (line, raw) = field(&mut lines, "period")?;
        let (start, end) = raw
            .split_once("..")
            .ok_or(ReportParseError::BadValue { line })?;
        let period = Period {
            start: start
                .parse()
                .map_err(|_| ReportParseError::BadValue { line })?,
            end: end
                .parse()
                .map_err(|_| ReportParseError::BadValue { line })?,
        };
        let issued_count = num(field(&mut lines, "issued-count")?)?;
        let issued_mwh = num(field(&mut lines, "issued-mwh")?)?;
        let active_count = num(field(&mut lines, "active-count")?)?;
        let aggregated_count = num(field(&mut lines, "aggregated-count")?)?;
        let (retired_line, retired_raw) = field(&mut lines, "retired-count")?;
        let retired_count: u64 = retired_raw
            .trim()
            .parse()
            .map_err(|_| ReportParseError::BadValue { line: retired_line })?;
        let (line, rest) = take(&mut lines, "retired-by-reason:")?;
        if rest != "retired-by-reason:" {
            return Err(ReportParseError::Expected {
                line,
                expected: "retired-by-reason:",
            });
        }
        let tally = RetirementTally {
            statutory_or_regulatory: num(field(&mut lines, "statutory-or-regulatory-use")?)?,
            public_claim: num(field(&mut lines, "public-claim-purchase")?)?,
            attribute: num(field(&mut lines, "attribute-purchase")?)?,
        };
        if tally.total() != retired_count {
            return Err(ReportParseError::BadValue { line: retired_line });
        }
        let swap_total = num(field(&mut lines, "swap-total")?)?;
        let issuance_balanced = flag(field(&mut lines, "issuance-balanced")?)?;
        let conservation_ok = flag(field(&mut lines, "conservation-ok")?)?;
        let (line, coverage_raw) = field(&mut lines, "control-coverage")?;
        let (covered, emitted) = coverage_raw
            .split_once('/')
            .ok_or(ReportParseError::BadValue { line })?;
        let control_coverage = (
            covered
                .parse()
                .map_err(|_| ReportParseError::BadValue { line })?,
            emitted
                .parse()
                .map_err(|_| ReportParseError::BadValue { line })?,
        );
        let anomaly_count = num(field(&mut lines, "anomalies")?)? as usize;
        let mut anomalies = Vec::with_capacity(anomaly_count);
        for _ in 0..anomaly_count {
            let (line, raw) = take(&mut lines, "anomaly line")?;
            let body = raw.strip_prefix("  - ").ok_or(ReportParseError::Expected {
                line,
                expected: "  - kind=...",
            })?;
            let (kind_text, rest) = body
                .strip_prefix("kind=")
                .and_then(|r| r.split_once(" evidence="))
                .ok_or(ReportParseError::BadValue { line })?;
            let (evidence_text, detail) = rest
                .split_once(" detail=")
                .ok_or(ReportParseError::BadValue { line })?;
            anomalies.push(AnomalyFinding {
                kind: AnomalyKind::parse(kind_text).ok_or(ReportParseError::BadValue { line })?,
                evidence: Evidence::parse(evidence_text)
                    .ok_or(ReportParseError::BadValue { line })?,
                detail: detail.to_string(),
            });
        }

        Ok(AuditReport {
            period,
            issued_count,
            issued_mwh,
            active_count,
            aggregated_count,
            retired: tally,
            swap_total,
            issuance_balanced,
            conservation_ok,
            control_coverage,
            anomalies,
        })
    }
}

// ---------------------------------------------------------------------------
// The audit itself
// ---------------------------------------------------------------------------

/// Which tracking id a transaction acts on, for the after-retirement scan.
fn acts_on(payload: &TransactionPayload) -> Option<(&TrackingId, bool)> {
    match payload {
        TransactionPayload::Trade {
            target: TradeTarget::Certificate(tid),
            ..
        } => Some((tid, false)),
        TransactionPayload::Swap { tracking_id, .. } => Some((tracking_id, false)),
        TransactionPayload::ConsumptionReport { tracking_id, .. } => Some((tracking_id, false)),
        TransactionPayload::Retire { tracking_id, .. } => Some((tracking_id, true)),
        _ => None,
    }
}

/// Run the full period audit over a chain and the event log of the run
/// that produced it.
///
/// The chain is re-verified cryptographically, replayed transaction by
/// transaction with lifecycle checks, and censused for the period; the
/// event log contributes the attempts that never reached the chain
/// because a validator refused them.
pub fn annual_audit(
    chain: &Chain,
    participants: &ParticipantTable,
    rules: &dyn QuorumRules,
    period: Period,
    events: &[EventRecord],
    controls: &ControlMap,
) -> AuditReport {
    let mut anomalies: Vec<AnomalyFinding> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut push = |anomalies: &mut Vec<AnomalyFinding>, finding: AnomalyFinding| {
        // One finding per distinct (kind, detail): four validators
        // refusing one doctored transaction is one anomaly, not four.
        let key = format!("{}|{}", finding.kind.label(), finding.detail);
        if seen.insert(key) {
            anomalies.push(finding);
        }
    };

    // -- sweep 1: the chain's own cryptography --
    if let ChainVerdict::InvalidAt { height, reason } = chain.verify(participants, rules) {
        push(
            &mut anomalies,
            AnomalyFinding {
                kind: AnomalyKind::ChainIntegrityFailure(height),
                evidence: Evidence::Chain { height, index: 0 },
                detail: format!("code={}", reason.code()),
            },
        );
    }

    // -- sweep 2: replay with lifecycle scanning --
    let mut state = RegistryState::new();
    for block in chain.blocks() {
        for (index, tx) in block.transactions.iter().enumerate() {
            let evidence = Evidence::Chain {
                height: block.height,
                index,
            };
            let mut explained = false;
            if let TransactionPayload::Issue {
                source,
                issued_at,
                nonce,
                ..
            } = &tx.payload
            {
                let tid = derive_tracking_id(&tx.signer, source, *issued_at, *nonce);
                if state.certificate(&tid).is_some() {
                    push(
                        &mut anomalies,
                        AnomalyFinding {
                            kind: AnomalyKind::DuplicateTrackingId,
                            evidence: evidence.clone(),
                            detail: format!("tid={}", tid.to_hex()),
                        },
                    );
                    explained = true;
                }
            }
            if let Some((tid, is_retire)) = acts_on(&tx.payload) {
                let retired = state
                    .certificate(tid)
                    .is_some_and(|c| c.status == CertStatus::Retired);
                if retired {
                    push(
                        &mut anomalies,
                        AnomalyFinding {
                            kind: if is_retire {
                                AnomalyKind::DoubleRetireAttempt
                            } else {
                                AnomalyKind::TradeAfterRetire
                            },
                            evidence: evidence.clone(),
                            detail: format!("tid={} committed", tid.to_hex()),
                        },
                    );
                    explained = true;
                }
            }
            match apply(&state, &tx.payload, &tx.signer, participants, block.proposed_at) {
                Ok(next) => state = next,
                Err(e) => {
                    if !explained {
                        push(
                            &mut anomalies,
                            AnomalyFinding {
                                kind: AnomalyKind::ChainIntegrityFailure(block.height),
                                evidence,
                                detail: format!("code={}", e.code()),
                            },
                        );
                    }
                    // Keep replaying: later periods still deserve a census.
                }
            }
        }
    }

    // -- sweep 3: rejected attempts and detections from the log --
    let in_period: Vec<&EventRecord> =
        events.iter().filter(|e| period.contains(e.tick)).collect();
    for event in &in_period {
        match event.kind {
            EventKind::Reject => {
                let code = event.detail("code");
                let tx = event.detail("tx").unwrap_or("?");
                let kind = event.detail("kind");
                match (code, kind) {
                    (Some("CertificateRetired"), Some("retire")) => push(
                        &mut anomalies,
                        AnomalyFinding {
                            kind: AnomalyKind::DoubleRetireAttempt,
                            evidence: Evidence::Node {
                                node: event.node.clone(),
                                tick: event.tick,
                            },
                            detail: format!("tx={tx} rejected"),
                        },
                    ),
                    (Some("CertificateRetired"), Some(_)) => push(
                        &mut anomalies,
                        AnomalyFinding {
                            kind: AnomalyKind::TradeAfterRetire,
                            evidence: Evidence::Node {
                                node: event.node.clone(),
                                tick: event.tick,
                            },
                            detail: format!("tx={tx} rejected"),
                        },
                    ),
                    (Some("DuplicateTrackingId"), _) => push(
                        &mut anomalies,
                        AnomalyFinding {
                            kind: AnomalyKind::DuplicateTrackingId,
                            evidence: Evidence::Node {
                                node: event.node.clone(),
                                tick: event.tick,
                            },
                            detail: format!("tx={tx} rejected"),
                        },
                    ),
                    _ => {}
                }
            }
            EventKind::EquivocationDetected => {
                let voter = event.detail("voter").unwrap_or("?");
                push(
                    &mut anomalies,
                    AnomalyFinding {
                        kind: AnomalyKind::EquivocationObserved,
                        evidence: Evidence::Node {
                            node: event.node.clone(),
                            tick: event.tick,
                        },
                        detail: format!("voter={voter}"),
                    },
                );
            }
            EventKind::TamperDetected => {
                let height: u64 = event
                    .detail("height")
                    .and_then(|h| h.parse().ok())
                    .unwrap_or(0);
                let code = event.detail("code").unwrap_or("?");
                push(
                    &mut anomalies,
                    AnomalyFinding {
                        kind: AnomalyKind::ChainIntegrityFailure(height),
                        evidence: Evidence::Node {
                            node: event.node.clone(),
                            tick: event.tick,
                        },
                        detail: format!("node={} code={code}", event.node),
                    },
                );
            }
            _ => {}
        }
    }

    // -- census: period-issued certificates by head status --
    let mut issued_count = 0;
    let mut issued_mwh = 0;
    let mut active_count = 0;
    let mut aggregated_count = 0;
    let mut retired = RetirementTally::default();
    let mut swap_total = 0;
    for cert in state.certificates() {
        if !period.contains(cert.issued_at) {
            continue;
        }
        issued_count += 1;
        issued_mwh += cert.energy_mwh;
        swap_total += cert.swap_count;
        match cert.status {
            CertStatus::Issued | CertStatus::Owned => active_count += 1,
            CertStatus::Aggregated(_) => aggregated_count += 1,
            CertStatus::Retired => {
                let reason = cert
                    .retirement
                    .as_ref()
                    .map(|r| r.reason)
                    .unwrap_or(RetirementReason::StatutoryOrRegulatoryUse);
                retired.bump(reason);
            }
        }
    }

    let owned_events: Vec<EventRecord> = in_period.iter().map(|e| (*e).clone()).collect();
    AuditReport {
        period,
        issued_count,
        issued_mwh,
        active_count,
        aggregated_count,
        retired,
        swap_total,
        issuance_balanced: issued_count == active_count + aggregated_count + retired.total(),
        conservation_ok: state.conservation().holds(),
        control_coverage: controls.coverage(&owned_events),
        anomalies,
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Keypair;
    use crate::ledger::{merkle_root, LedgerBlock, QuorumCertificate, SignedTransaction, Vote};
    use crate::netsim::parse_log;
    use crate::rec::{
        CertificateType, EnergySource, Participant, ParticipantId, Role,
    };
    use crate::consensus::QuorumConfig;

    fn pid(s: &str) -> ParticipantId {
        ParticipantId::new(s)
    }

    fn table() -> ParticipantTable {
        let mut t = ParticipantTable::new();
        let entries = [
            ("G1", Role::Generator, 1, false),
            ("B1", Role::Buyer, 4, false),
            ("V1", Role::Validator, 3, true),
            ("V2", Role::Validator, 4, true),
            ("V3", Role::Validator, 5, true),
            ("V4", Role::Validator, 5, true),
        ];
        for (id, role, level, validator) in entries {
            t.insert(
                Participant::new(
                    pid(id),
                    role,
                    level,
                    Keypair::derived(id).public(),
                    validator,
                )
                .unwrap(),
            )
            .unwrap();
        }
        t
    }

    fn config(t: &ParticipantTable) -> QuorumConfig {
        QuorumConfig::from_table(t, 1).unwrap()
    }

    fn signed(payload: TransactionPayload, signer: &str, nonce: u64) -> SignedTransaction {
        SignedTransaction::sign(payload, pid(signer), nonce, &Keypair::derived(signer))
    }

    fn issue(issued_at: Tick, issue_nonce: u64) -> TransactionPayload {
        TransactionPayload::Issue {
            project_name: "mesa-wind".into(),
            certificate_type: CertificateType::Voluntary,
            source: EnergySource::Wind,
            energy_mwh: 1,
            issued_at,
            nonce: issue_nonce,
        }
    }

    /// Seal a block over the previous one with a 3-of-4 certificate.
    fn seal(prev: &LedgerBlock, txs: Vec<SignedTransaction>, proposed_at: Tick) -> LedgerBlock {
        let mut block = LedgerBlock {
            height: prev.height + 1,
            prev_hash: prev.hash(),
            tx_root: merkle_root(&txs),
            transactions: txs,
            proposer: pid("V1"),
            proposed_at,
            quorum_cert: None,
        };
        let hash = block.hash();
        let votes: Vec<Vote> = ["V1", "V2", "V3"]
            .iter()
            .map(|v| Vote::sign(pid(v), block.height, 0, hash, &Keypair::derived(v)))
            .collect();
        block.quorum_cert = Some(QuorumCertificate::new(block.height, 0, hash, votes));
        block
    }

    /// Issue two certs, trade one to B1, report consumption, retire it.
    fn lifecycle_chain(t: &ParticipantTable) -> (Chain, TrackingId, TrackingId) {
        let cfg = config(t);
        let tid1 = derive_tracking_id(&pid("G1"), &EnergySource::Wind, 3, 0);
        let tid2 = derive_tracking_id(&pid("G1"), &EnergySource::Wind, 3, 1);
        let mut chain = Chain::with_genesis();
        let b1 = seal(
            chain.head().unwrap(),
            vec![signed(issue(3, 0), "G1", 1), signed(issue(3, 1), "G1", 2)],
            3,
        );
        chain.append_block(b1, t, &cfg).unwrap();
        let b2 = seal(
            chain.head().unwrap(),
            vec![
                signed(
                    TransactionPayload::Trade {
                        target: TradeTarget::Certificate(tid1),
                        new_owner: pid("B1"),
                    },
                    "G1",
                    3,
                ),
                signed(
                    TransactionPayload::ConsumptionReport {
                        tracking_id: tid1,
                        consumer: pid("B1"),
                        mwh_used: 1,
                    },
                    "B1",
                    1,
                ),
                signed(
                    TransactionPayload::Retire {
                        tracking_id: tid1,
                        reason: RetirementReason::PublicClaimPurchase,
                    },
                    "B1",
                    2,
                ),
            ],
            8,
        );
        chain.append_block(b2, t, &cfg).unwrap();
        (chain, tid1, tid2)
    }

    #[test]
    fn replay_rebuilds_the_registry() {
        let t = table();
        let (chain, tid1, tid2) = lifecycle_chain(&t);
        let state = replay(&chain, &t).unwrap();
        assert_eq!(state.certificate(&tid1).unwrap().status, CertStatus::Retired);
        assert_eq!(state.certificate(&tid2).unwrap().status, CertStatus::Issued);
        assert!(state.conservation().holds());
    }

    #[test]
    fn replay_reports_the_failing_position() {
        let t = table();
        let cfg = config(&t);
        let mut chain = Chain::with_genesis();
        // Retiring a certificate that was never issued cannot replay.
        let tid = derive_tracking_id(&pid("G1"), &EnergySource::Wind, 9, 9);
        let bad = seal(
            chain.head().unwrap(),
            vec![signed(
                TransactionPayload::Retire {
                    tracking_id: tid,
                    reason: RetirementReason::AttributePurchase,
                },
                "B1",
                1,
            )],
            4,
        );
        chain.append_block(bad, &t, &cfg).unwrap();
        let err = replay(&chain, &t).unwrap_err();
        assert_eq!((err.height, err.index), (1, 0));
        assert_eq!(err.source, LifecycleError::UnknownCertificate);
    }

    #[test]
    fn clean_chain_audits_clean() {
        let t = table();
        let (chain, _, _) = lifecycle_chain(&t);
        let controls = ControlMap::parse(DEFAULT_CONTROL_MAP).unwrap();
        let report = annual_audit(
            &chain,
            &t,
            &config(&t),
            Period { start: 0, end: 100 },
            &[],
            &controls,
        );
        assert_eq!(report.issued_count, 2);
        assert_eq!(report.issued_mwh, 2);
        assert_eq!(report.active_count, 1);
        assert_eq!(report.retired.public_claim, 1);
        assert_eq!(report.retired.total(), 1);
        assert!(report.issuance_balanced);
        assert!(report.conservation_ok);
        assert!(report.anomalies.is_empty());
    }

    #[test]
    fn census_respects_the_period_window() {
        let t = table();
        let (chain, _, _) = lifecycle_chain(&t);
        let controls = ControlMap::parse(DEFAULT_CONTROL_MAP).unwrap();
        // Both certificates carry issuance timestamp 3; a window that
        // starts later must not count them.
        let report = annual_audit(
            &chain,
            &t,
            &config(&t),
            Period { start: 50, end: 100 },
            &[],
            &controls,
        );
        assert_eq!(report.issued_count, 0);
        assert!(report.issuance_balanced);
    }

    #[test]
    fn committed_double_retire_is_flagged_with_chain_evidence() {
        let t = table();
        let cfg = config(&t);
        let (mut chain, tid1, _) = lifecycle_chain(&t);
        // Quorum validation does not re-run lifecycle rules, so a block
        // carrying a second retirement appends cleanly; only the audit
        // replay can catch it.
        let again = seal(
            chain.head().unwrap(),
            vec![signed(
                TransactionPayload::Retire {
                    tracking_id: tid1,
                    reason: RetirementReason::AttributePurchase,
                },
                "B1",
                3,
            )],
            12,
        );
        chain.append_block(again, &t, &cfg).unwrap();
        let controls = ControlMap::parse(DEFAULT_CONTROL_MAP).unwrap();
        let report = annual_audit(
            &chain,
            &t,
            &cfg,
            Period { start: 0, end: 100 },
            &[],
            &controls,
        );
        assert_eq!(report.anomalies.len(), 1);
        let finding = &report.anomalies[0];
        assert_eq!(finding.kind, AnomalyKind::DoubleRetireAttempt);
        assert_eq!(finding.evidence, Evidence::Chain { height: 3, index: 0 });
        // The books still balance: the duplicate retirement changed nothing.
        assert!(report.issuance_balanced);
    }

    #[test]
    fn tampered_block_is_an_integrity_failure() {
        let t = table();
        let (mut chain, _, _) = lifecycle_chain(&t);
        chain.tamper_block(1, |b| b.proposed_at += 1);
        let controls = ControlMap::parse(DEFAULT_CONTROL_MAP).unwrap();
        let report = annual_audit(
            &chain,
            &t,
            &config(&t),
            Period { start: 0, end: 100 },
            &[],
            &controls,
        );
        assert!(report
            .anomalies
            .iter()
            .any(|a| a.kind == AnomalyKind::ChainIntegrityFailure(1)));
    }

    #[test]
    fn rejected_attempts_are_mined_from_the_log() {
        let t = table();
        let (chain, _, _) = lifecycle_chain(&t);
        let log = "44\tV1\treject\tcode=CertificateRetired tx=abc123abc123 kind=retire\n\
                   45\tV2\treject\tcode=CertificateRetired tx=abc123abc123 kind=retire\n\
                   46\tV1\treject\tcode=CertificateRetired tx=def456def456 kind=trade\n\
                   50\tV3\tequivocation-detected\tvoter=V4\n";
        let events = parse_log(log).unwrap();
        let controls = ControlMap::parse(DEFAULT_CONTROL_MAP).unwrap();
        let report = annual_audit(
            &chain,
            &t,
            &config(&t),
            Period { start: 0, end: 100 },
            &events,
            &controls,
        );
        let kinds: Vec<&AnomalyKind> = report.anomalies.iter().map(|a| &a.kind).collect();
        assert!(kinds.contains(&&AnomalyKind::DoubleRetireAttempt));
        assert!(kinds.contains(&&AnomalyKind::TradeAfterRetire));
        assert!(kinds.contains(&&AnomalyKind::EquivocationObserved));
        // Two validators rejecting one transaction is one finding.
        assert_eq!(
            report
                .anomalies
                .iter()
                .filter(|a| a.kind == AnomalyKind::DoubleRetireAttempt)
                .count(),
            1
        );
        // Events outside the period are ignored.
        let late = annual_audit(
            &chain,
            &t,
            &config(&t),
            Period { start: 60, end: 100 },
            &events,
            &controls,
        );
        assert!(late.anomalies.is_empty());
    }

    #[test]
    fn report_text_round_trips() {
        let t = table();
        let (mut chain, tid1, _) = lifecycle_chain(&t);
        let cfg = config(&t);
        let again = seal(
            chain.head().unwrap(),
            vec![signed(
                TransactionPayload::Retire {
                    tracking_id: tid1,
                    reason: RetirementReason::AttributePurchase,
                },
                "B1",
                3,
            )],
            12,
        );
        chain.append_block(again, &t, &cfg).unwrap();
        let log = "50\tV3\tequivocation-detected\tvoter=V4\n";
        let events = parse_log(log).unwrap();
        let controls = ControlMap::parse(DEFAULT_CONTROL_MAP).unwrap();
        let report = annual_audit(
            &chain,
            &t,
            &cfg,
            Period { start: 0, end: 100 },
            &events,
            &controls,
        );
        assert!(!report.anomalies.is_empty());
        let text = report.render();
        let parsed = AuditReport::parse(&text).unwrap();
        assert_eq!(parsed, report);
        assert_eq!(parsed.render(), text);
    }

    #[test]
    fn default_control_map_loads_and_is_complete() {
        let controls = ControlMap::parse(DEFAULT_CONTROL_MAP).unwrap();
        for kind in EventKind::ALL {
            let probe = EventRecord {
                tick: 0,
                node: "x".into(),
                kind,
                details: String::new(),
            };
            assert!(
                !controls.families_for(&probe).is_empty(),
                "{} unmapped",
                kind.label()
            );
        }
    }

    #[test]
    fn control_map_rejects_gaps_and_junk() {
        assert!(matches!(
            ControlMap::parse("commit: integrity\n"),
            Err(ControlMapError::UnmappedEventKind(_))
        ));
        assert!(matches!(
            ControlMap::parse("not-a-kind: integrity\n"),
            Err(ControlMapError::UnknownKind { .. })
        ));
        assert!(matches!(
            ControlMap::parse("commit:\n"),
            Err(ControlMapError::BadLine { .. } | ControlMapError::EmptyFamilies { .. })
        ));
        let doubled = format!("{DEFAULT_CONTROL_MAP}commit: integrity\n");
        assert!(matches!(
            ControlMap::parse(&doubled),
            Err(ControlMapError::DuplicateKey { .. })
        ));
    }

    #[test]
    fn reject_refinements_override_the_base_mapping() {
        let controls = ControlMap::parse(DEFAULT_CONTROL_MAP).unwrap();
        let refined = EventRecord {
            tick: 1,
            node: "V1".into(),
            kind: EventKind::Reject,
            details: "code=BadSignature tx=aaa kind=issue".into(),
        };
        assert!(controls
            .families_for(&refined)
            .contains(&"authentication".to_string()));
        let base = EventRecord {
            tick: 1,
            node: "V1".into(),
            kind: EventKind::Reject,
            details: "code=SomethingNew tx=aaa".into(),
        };
        assert_eq!(
            controls.families_for(&base),
            &["access-control".to_string(), "integrity".to_string()][..]
        );
    }

    #[test]
    fn tagging_appends_families_and_counts_are_stable() {
        let controls = ControlMap::parse(DEFAULT_CONTROL_MAP).unwrap();
        let log = "1\tG1\tsubmit\ttx=abc kind=issue signer=G1\n\
                   3\tV1\tcommit\theight=1 txs=1 hash=abc\n";
        let events = parse_log(log).unwrap();
        let tagged = controls.tag_events(&events);
        assert_eq!(tagged.len(), 2);
        assert!(tagged[0].ends_with("\taccountability"));
        assert!(tagged[1].ends_with("\tintegrity,accountability"));
        let counts = controls.family_counts(&events);
        assert_eq!(counts["accountability"], 2);
        assert_eq!(counts["integrity"], 1);
        assert_eq!(controls.coverage(&events), (2, 2));
    }
}
