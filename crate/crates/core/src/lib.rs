//! A permissioned distributed ledger for renewable energy certificates (RECs),
//! paired with a deterministic network simulator and adversary harness.
//!
//! The crate is organized in layers, each usable on its own:
//!
//! - [`canon`] — the canonical byte encoding underneath every digest and
//!   signature. Normative and bit-exact; an independent implementation must
//!   reproduce it to interoperate.
//! - [`crypto`] — SHA-256 digests and Ed25519 keys/signatures.
//! - [`rec`] — certificate domain types and the pure lifecycle transition
//!   function (issue, aggregate, trade, swap, consume, retire).
//! - [`ledger`] — hash-chained blocks with Merkle transaction roots,
//!   signature and nonce verification, inclusion proofs, and a line-oriented
//!   export format.
//! - [`consensus`] — single-shot quorum voting among permissioned validators
//!   with round-robin leaders, vote locking, and equivocation detection.
//! - [`netsim`] — a seeded discrete-event simulator that runs a whole
//!   network of nodes, injects faults and Byzantine behaviors, and emits a
//!   deterministic event log.
//! - [`audit`] — regulator-side replay, conservation checking, anomaly
//!   findings, and control-family tagging of ledger events.
//!
//! Everything is deterministic by construction: timestamps are simulation
//! ticks, randomness comes from a seeded generator, and all map iteration
//! is over ordered containers.

pub mod audit;
pub mod canon;
pub mod consensus;
pub mod crypto;
pub mod ledger;
pub mod netsim;
pub mod rec;

/// Simulation-time instant. All timestamps in the system are ticks of the
/// discrete-event clock, never wall-clock time.
pub type Tick = u64;
