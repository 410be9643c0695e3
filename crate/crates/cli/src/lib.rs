//! Command implementations behind the `recledger` binary.
//!
//! Everything here is a thin, deterministic layer over the core library:
//! the scenario parser turns a text file into a [`recledger_core::netsim::SimRun`],
//! the roster module round-trips the participants sidecar that `verify`
//! and `audit` need to work offline, and the command functions map
//! outcomes onto the exit-code contract:
//!
//! * `0` — success, every checked invariant held
//! * `1` — an invariant violation (safety breach, conservation failure,
//!   failed verification, a defense that did not hold)
//! * `2` — unreadable or unparseable input (diagnostics carry line numbers)
//! * `3` — the simulation configuration was rejected

pub mod bundled;
pub mod commands;
pub mod roster;
pub mod scenario;
