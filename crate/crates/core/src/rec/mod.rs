//! Certificate domain model and the pure lifecycle transition function.
//!
//! A renewable energy certificate (REC) attests one megawatt-hour of
//! renewable generation. Certificates are issued by generators, optionally
//! bundled into larger blocks by brokers, traded peer-to-peer, swapped
//! without retirement, and finally retired when their environmental claim is
//! used. Retirement is absorbing: a retired certificate can never change
//! hands or status again.
//!
//! The module is a pure functional core. [`apply`] takes a [`RegistryState`]
//! and returns a new one (or a [`LifecycleError`]); nothing here performs
//! I/O, consults a clock, or mutates shared state. The ledger and consensus
//! layers replay the same transitions on every node, so purity is what makes
//! replicated state machines byte-identical.

mod registry;
mod types;

pub use registry::{
    apply, validate_issuance, IssueReject, LifecycleError, RegistryState, ValidationResult,
};
pub use types::{
    derive_aggregate_id, derive_tracking_id, AggregateBlock, AggregateId, Certificate,
    CertificateType, CertStatus, ConsumptionEntry, EnergySource, Participant, ParticipantError,
    ParticipantId, ParticipantTable, RetirementReason, RetirementRecord, Role, TrackingId,
    TradeTarget, TransactionPayload,
};
