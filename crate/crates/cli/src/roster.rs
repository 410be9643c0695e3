//! The participants sidecar (`participants.tsv`): everything `verify` and
//! `audit` need to check an exported chain offline.
//!
//! Chains carry signatures and quorum certificates but not public keys, so
//! a run writes its participant table next to the chain exports. The
//! format is one tab-separated row per participant —
//! `id  role  level  validator|client  pubkey-hex` — preceded by a single
//! `f <n>` line recording the fault budget the validator set was sized
//! for, which fixes the quorum size a certificate must meet.

use std::fmt;

use recledger_core::crypto::{Keypair, PublicKey};
use recledger_core::netsim::NodeConfig;
use recledger_core::rec::{Participant, ParticipantTable, Role};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RosterError {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for RosterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

impl std::error::Error for RosterError {}

/// A parsed sidecar: the table plus the fault budget.
#[derive(Debug, Clone)]
pub struct Roster {
    pub table: ParticipantTable,
    pub f: usize,
}

/// Render the sidecar for a run's nodes. Keys are the deterministic
/// per-participant test keys, the same ones the simulator signs with.
pub fn render(nodes: &[NodeConfig], f: usize) -> String {
    let mut out = format!("f\t{f}\n");
    for n in nodes {
        let kind = if n.is_validator { "validator" } else { "client" };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            n.id,
            n.role.label(),
            n.der_level,
            kind,
            Keypair::derived(n.id.as_str()).public().to_hex()
        ));
    }
    out
}

fn fail<T>(line: usize, reason: impl Into<String>) -> Result<T, RosterError> {
    Err(RosterError {
        line,
        reason: reason.into(),
    })
}

/// Parse a sidecar back into a participant table.
pub fn parse(text: &str) -> Result<Roster, RosterError> {
    let mut lines = text.lines().enumerate();
    let f = loop {
        let Some((i, raw)) = lines.next() else {
            return fail(1, "expected an `f <n>` line");
        };
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('\t') {
            Some(("f", n)) => match n.trim().parse() {
                Ok(f) => break f,
                Err(_) => return fail(i + 1, format!("fault budget must be a number, got `{n}`")),
            },
            _ => return fail(i + 1, "expected an `f <n>` line before the participant rows"),
        }
    };

    let mut table = ParticipantTable::new();
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim_end();
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return fail(line_no, format!("expected 5 columns, got {}", cols.len()));
        }
        let role = Role::parse(cols[1])
            .ok_or_else(|| RosterError {
                line: line_no,
                reason: format!("unknown role `{}`", cols[1]),
            })?;
        let level: u8 = cols[2].parse().map_err(|_| RosterError {
            line: line_no,
            reason: format!("level must be a number, got `{}`", cols[2]),
        })?;
        let validator = match cols[3] {
            "validator" => true,
            "client" => false,
            other => return fail(line_no, format!("expected validator or client, got `{other}`")),
        };
        let key = PublicKey::from_hex(cols[4]).map_err(|e| RosterError {
            line: line_no,
            reason: format!("bad public key: {e}"),
        })?;
        let participant = Participant::new(cols[0].into(), role, level, key, validator)
            .map_err(|e| RosterError {
                line: line_no,
                reason: e.to_string(),
            })?;
        table.insert(participant).map_err(|e| RosterError {
            line: line_no,
            reason: e.to_string(),
        })?;
    }
    if table.is_empty() {
        return fail(1, "sidecar lists no participants");
    }
    Ok(Roster { table, f })
}

// ---------------------------------------------------------------------------
