//! The registry state machine: every lifecycle rule lives in [`apply`].

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::canon::{Canon, CanonEncode};
use crate::Tick;

use super::types::{
    derive_aggregate_id, derive_tracking_id, AggregateBlock, AggregateId, CertStatus, Certificate,
    ConsumptionEntry, ParticipantId, ParticipantTable, RetirementRecord, Role, TrackingId,
    TradeTarget, TransactionPayload,
};

/// Why a transaction was refused. Rejection is a value, not a panic: the
/// consensus layer turns these into vote refusals and the simulator logs
/// them as `reject` events.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum LifecycleError {
    #[error("actor or referenced participant is not registered")]
    UnknownParticipant,
    #[error("no certificate with that tracking id")]
    UnknownCertificate,
    #[error("no aggregate with that id")]
    UnknownAggregate,
    #[error("certificate is retired and cannot be sold, donated, or transferred")]
    CertificateRetired,
    #[error("actor does not own the certificate or aggregate")]
    NotOwner,
    #[error("actor's role does not permit this action")]
    UnauthorizedRole,
    #[error("certificate status does not permit this action")]
    WrongStatus,
    #[error("aggregate member is not in Issued status")]
    MemberNotIssued,
    #[error("aggregate member list contains a duplicate")]
    DuplicateMember,
    #[error("aggregate member list is empty")]
    EmptyAggregate,
    #[error("buyer retirement requires a prior consumption report")]
    MissingConsumptionReport,
    #[error("consumption must be reported by the consumer it names")]
    ConsumerMismatch,
    #[error("tracking id already exists in the registry")]
    DuplicateTrackingId,
    #[error("energy quantity must be exactly one megawatt-hour")]
    BadEnergyQuantity,
    #[error("energy source is not well-formed")]
    UnknownSource,
}

impl LifecycleError {
    /// Stable reason code used in event logs and control-map keys.
    pub fn code(&self) -> &'static str {
        match self {
            LifecycleError::UnknownParticipant => "UnknownParticipant",
            LifecycleError::UnknownCertificate => "UnknownCertificate",
            LifecycleError::UnknownAggregate => "UnknownAggregate",
            LifecycleError::CertificateRetired => "CertificateRetired",
            LifecycleError::NotOwner => "NotOwner",
            LifecycleError::UnauthorizedRole => "UnauthorizedRole",
            LifecycleError::WrongStatus => "WrongStatus",
            LifecycleError::MemberNotIssued => "MemberNotIssued",
            LifecycleError::DuplicateMember => "DuplicateMember",
            LifecycleError::EmptyAggregate => "EmptyAggregate",
            LifecycleError::MissingConsumptionReport => "MissingConsumptionReport",
            LifecycleError::ConsumerMismatch => "ConsumerMismatch",
            LifecycleError::DuplicateTrackingId => "DuplicateTrackingId",
            LifecycleError::BadEnergyQuantity => "BadEnergyQuantity",
            LifecycleError::UnknownSource => "UnknownSource",
        }
    }

    /// Every reason code, for control-map completeness checks.
    pub const ALL_CODES: [&'static str; 15] = [
        "UnknownParticipant",
        "UnknownCertificate",
        "UnknownAggregate",
        "CertificateRetired",
        "NotOwner",
        "UnauthorizedRole",
        "WrongStatus",
        "MemberNotIssued",
        "DuplicateMember",
        "EmptyAggregate",
        "MissingConsumptionReport",
        "ConsumerMismatch",
        "DuplicateTrackingId",
        "BadEnergyQuantity",
        "UnknownSource",
    ];
}

/// Issuance pre-checks, separated out because validation happens at the
/// market edge ("once a REC is validated") before anything reaches a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueReject {
    DuplicateId,
    BadEnergyQuantity,
    UnknownSource,
    UnauthorizedRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationResult {
    Accepted,
    Rejected(IssueReject),
}

/// All certificates, aggregates, and consumption reports known to a node.
///
/// The maps are ordered so that canonical serialization — and therefore
/// cross-node state comparison — is deterministic.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RegistryState {
    certificates: BTreeMap<TrackingId, Certificate>,
    aggregates: BTreeMap<AggregateId, AggregateBlock>,
    consumption_log: Vec<ConsumptionEntry>,
}

impl RegistryState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn certificate(&self, id: &TrackingId) -> Option<&Certificate> {
        self.certificates.get(id)
    }

    pub fn aggregate(&self, id: &AggregateId) -> Option<&AggregateBlock> {
        self.aggregates.get(id)
    }

    pub fn certificates(&self) -> impl Iterator<Item = &Certificate> {
        self.certificates.values()
    }

    pub fn aggregates(&self) -> impl Iterator<Item = &AggregateBlock> {
        self.aggregates.values()
    }

    pub fn consumption_log(&self) -> &[ConsumptionEntry] {
        &self.consumption_log
    }

    pub fn has_consumption_report(&self, id: &TrackingId, consumer: &ParticipantId) -> bool {
        self.consumption_log
            .iter()
            .any(|e| &e.tracking_id == id && &e.consumer == consumer)
    }

    /// Megawatt-hour totals by status. `holds()` is the conservation
    /// identity: everything ever issued is still accounted for, exactly.
    pub fn conservation(&self) -> Conservation {
        let mut c = Conservation::default();
        for cert in self.certificates.values() {
            c.issued_mwh += cert.energy_mwh;
            match cert.status {
                CertStatus::Issued => c.unsold_mwh += cert.energy_mwh,
                CertStatus::Aggregated(_) => c.aggregated_mwh += cert.energy_mwh,
                CertStatus::Owned => c.owned_mwh += cert.energy_mwh,
                CertStatus::Retired => c.retired_mwh += cert.energy_mwh,
            }
        }
        c.aggregate_total_mwh = self.aggregates.values().map(|a| a.total_mwh).sum();
        c
    }
}

/// Snapshot of the MWh identity.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Conservation {
    pub issued_mwh: u64,
    pub unsold_mwh: u64,
    pub aggregated_mwh: u64,
    pub owned_mwh: u64,
    pub retired_mwh: u64,
    /// Sum of `total_mwh` over live aggregates; must equal `aggregated_mwh`.
    pub aggregate_total_mwh: u64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.issued_mwh == self.unsold_mwh + self.aggregated_mwh + self.owned_mwh + self.retired_mwh
            && self.aggregate_total_mwh == self.aggregated_mwh
    }
}

impl CanonEncode for RegistryState {
    fn encode(&self, out: &mut Canon) {
        out.put_u64(self.certificates.len() as u64);
        for cert in self.certificates.values() {
            cert.encode(out);
        }
        out.put_u64(self.aggregates.len() as u64);
        for agg in self.aggregates.values() {
            agg.encode(out);
        }
        out.put_u64(self.consumption_log.len() as u64);
        for e in &self.consumption_log {
            out.put_str(&e.tracking_id.to_hex())
                .put_str(e.consumer.as_str())
                .put_u64(e.tick);
        }
    }
}

/// Check an issuance against the registry and role table.
///
/// Checks run in a fixed order (role, quantity, source, duplicate) so a
/// payload that is wrong in several ways always reports the same reason.
pub fn validate_issuance(
    payload: &TransactionPayload,
    registry: &RegistryState,
    participants: &ParticipantTable,
    issuer: &ParticipantId,
) -> ValidationResult {
    let TransactionPayload::Issue {
        source,
        energy_mwh,
        issued_at,
        nonce,
        ..
    } = payload
    else {
        panic!("validate_issuance called with a non-issue payload");
    };

    match participants.get(issuer) {
        Some(p) if p.role == Role::Generator => {}
        _ => return ValidationResult::Rejected(IssueReject::UnauthorizedRole),
    }
    if *energy_mwh != 1 {
        return ValidationResult::Rejected(IssueReject::BadEnergyQuantity);
    }
    if !source.is_well_formed() {
        return ValidationResult::Rejected(IssueReject::UnknownSource);
    }
    let tid = derive_tracking_id(issuer, source, *issued_at, *nonce);
    if registry.certificate(&tid).is_some() {
        return ValidationResult::Rejected(IssueReject::DuplicateId);
    }
    ValidationResult::Accepted
}

/// Apply one transaction to the registry, returning the successor state.
///
/// The input state is never mutated; on error the caller keeps the old
/// state. `now` is the tick recorded for retirements and consumption
/// reports — when replaying a chain it is the containing block's proposal
/// tick, so every node stamps the same value.
pub fn apply(
    state: &RegistryState,
    payload: &TransactionPayload,
    actor: &ParticipantId,
    participants: &ParticipantTable,
    now: Tick,
) -> Result<RegistryState, LifecycleError> {
    let actor_entry = participants
        .get(actor)
        .ok_or(LifecycleError::UnknownParticipant)?;

    match payload {
        TransactionPayload::Issue {
            project_name,
            certificate_type,
            source,
            energy_mwh,
            issued_at,
            nonce,
        } => {
            match validate_issuance(payload, state, participants, actor) {
                ValidationResult::Accepted => {}
                ValidationResult::Rejected(r) => {
                    return Err(match r {
                        IssueReject::DuplicateId => LifecycleError::DuplicateTrackingId,
                        IssueReject::BadEnergyQuantity => LifecycleError::BadEnergyQuantity,
                        IssueReject::UnknownSource => LifecycleError::UnknownSource,
                        IssueReject::UnauthorizedRole => LifecycleError::UnauthorizedRole,
                    })
                }
            }
            let tid = derive_tracking_id(actor, source, *issued_at, *nonce);
            let mut next = state.clone();
            next.certificates.insert(
                tid,
                Certificate {
                    tracking_id: tid,
                    project_name: project_name.clone(),
                    certificate_type: *certificate_type,
                    source: source.clone(),
                    energy_mwh: *energy_mwh,
                    generator: actor.clone(),
                    issued_at: *issued_at,
                    status: CertStatus::Issued,
                    owner: actor.clone(),
                    retirement: None,
                    swap_count: 0,
                },
            );
            Ok(next)
        }

        TransactionPayload::Aggregate { broker, members } => {
            if actor_entry.role != Role::Broker || broker != actor {
                return Err(LifecycleError::UnauthorizedRole);
            }
            if members.is_empty() {
                return Err(LifecycleError::EmptyAggregate);
            }
            let distinct: BTreeSet<_> = members.iter().collect();
            if distinct.len() != members.len() {
                return Err(LifecycleError::DuplicateMember);
            }
            for m in members {
                let cert = state
                    .certificate(m)
                    .ok_or(LifecycleError::UnknownCertificate)?;
                if cert.status != CertStatus::Issued {
                    return Err(LifecycleError::MemberNotIssued);
                }
            }
            let agg_id = derive_aggregate_id(members);
            let mut next = state.clone();
            for m in members {
                next.certificates.get_mut(m).expect("member checked above").status =
                    CertStatus::Aggregated(agg_id);
            }
            next.aggregates.insert(
                agg_id,
                AggregateBlock {
                    id: agg_id,
                    members: members.clone(),
                    broker: actor.clone(),
                    total_mwh: members.len() as u64,
                },
            );
            Ok(next)
        }

        TransactionPayload::Trade { target, new_owner } => {
            if !participants.contains(new_owner) {
                return Err(LifecycleError::UnknownParticipant);
            }
            match target {
                TradeTarget::Certificate(tid) => {
                    let cert = state
                        .certificate(tid)
                        .ok_or(LifecycleError::UnknownCertificate)?;
                    if cert.status == CertStatus::Retired {
                        return Err(LifecycleError::CertificateRetired);
                    }
                    if &cert.owner != actor {
                        return Err(LifecycleError::NotOwner);
                    }
                    let mut next = state.clone();
                    // Selling a still-aggregated certificate withdraws it
                    // from its aggregate first.
                    if let CertStatus::Aggregated(agg_id) = cert.status {
                        let agg = next.aggregates.get_mut(&agg_id).expect(
                            "aggregated status always points at a live aggregate",
                        );
                        agg.members.retain(|m| m != tid);
                        agg.total_mwh -= 1;
                        if agg.members.is_empty() {
                            next.aggregates.remove(&agg_id);
                        }
                    }
                    let cert = next.certificates.get_mut(tid).expect("looked up above");
                    cert.status = CertStatus::Owned;
                    cert.owner = new_owner.clone();
                    Ok(next)
                }
                TradeTarget::Aggregate(aid) => {
                    let agg = state
                        .aggregate(aid)
                        .ok_or(LifecycleError::UnknownAggregate)?;
                    if &agg.broker != actor {
                        return Err(LifecycleError::NotOwner);
                    }
                    let mut next = state.clone();
                    // Selling the block dissolves it: each member becomes an
                    // individually owned certificate of the buyer, so later
                    // retirement stays per-certificate.
                    for m in &agg.members {
                        let cert = next.certificates.get_mut(m).expect(
                            "aggregate members always exist in the registry",
                        );
                        cert.status = CertStatus::Owned;
                        cert.owner = new_owner.clone();
                    }
                    next.aggregates.remove(aid);
                    Ok(next)
                }
            }
        }

        TransactionPayload::Swap {
            tracking_id,
            new_owner,
        } => {
            if !participants.contains(new_owner) {
                return Err(LifecycleError::UnknownParticipant);
            }
            let cert = state
                .certificate(tracking_id)
                .ok_or(LifecycleError::UnknownCertificate)?;
            if cert.status == CertStatus::Retired {
                return Err(LifecycleError::CertificateRetired);
            }
            if cert.status != CertStatus::Owned {
                return Err(LifecycleError::WrongStatus);
            }
            if &cert.owner != actor {
                return Err(LifecycleError::NotOwner);
            }
            let mut next = state.clone();
            let cert = next.certificates.get_mut(tracking_id).expect("looked up above");
            cert.owner = new_owner.clone();
            cert.swap_count += 1;
            Ok(next)
        }

        TransactionPayload::ConsumptionReport {
            tracking_id,
            consumer,
            mwh_used,
        } => {
            if consumer != actor {
                return Err(LifecycleError::ConsumerMismatch);
            }
            let cert = state
                .certificate(tracking_id)
                .ok_or(LifecycleError::UnknownCertificate)?;
            if cert.status == CertStatus::Retired {
                return Err(LifecycleError::CertificateRetired);
            }
            if cert.status != CertStatus::Owned {
                return Err(LifecycleError::WrongStatus);
            }
            if &cert.owner != actor {
                return Err(LifecycleError::NotOwner);
            }
            if *mwh_used != cert.energy_mwh {
                return Err(LifecycleError::BadEnergyQuantity);
            }
            let mut next = state.clone();
            next.consumption_log.push(ConsumptionEntry {
                tracking_id: *tracking_id,
                consumer: consumer.clone(),
                tick: now,
            });
            Ok(next)
        }

        TransactionPayload::Retire {
            tracking_id,
            reason,
        } => {
            let cert = state
                .certificate(tracking_id)
                .ok_or(LifecycleError::UnknownCertificate)?;
            if cert.status == CertStatus::Retired {
                return Err(LifecycleError::CertificateRetired);
            }
            if cert.status != CertStatus::Owned {
                return Err(LifecycleError::WrongStatus);
            }
            if &cert.owner != actor {
                return Err(LifecycleError::NotOwner);
            }
            // Buyers must have reported consumption before retiring for use;
            // statutory/regulatory retirement is the exception.
            if actor_entry.role == Role::Buyer
                && *reason != super::types::RetirementReason::StatutoryOrRegulatoryUse
                && !state.has_consumption_report(tracking_id, actor)
            {
                return Err(LifecycleError::MissingConsumptionReport);
            }
            let mut next = state.clone();
            let cert = next.certificates.get_mut(tracking_id).expect("looked up above");
            cert.status = CertStatus::Retired;
            cert.retirement = Some(RetirementRecord {
                reason: *reason,
                retired_by: actor.clone(),
                retired_at: now,
            });
            Ok(next)
        }

        TransactionPayload::AuditCheckpoint { .. } => {
            if actor_entry.role != Role::Regulator {
                return Err(LifecycleError::UnauthorizedRole);
            }
            // The checkpoint is a chain marker for auditors; the registry
            // itself does not change.
            Ok(state.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Keypair;
    use crate::rec::types::{CertificateType, EnergySource, RetirementReason};

    fn table() -> ParticipantTable {
        let mut t = ParticipantTable::new();
        let entries = [
            ("G1", Role::Generator, 1),
            ("G2", Role::Generator, 1),
            ("Br1", Role::Broker, 2),
            ("B1", Role::Buyer, 4),
            ("B2", Role::Buyer, 4),
            ("M1", Role::Marketer, 3),
            ("R1", Role::Regulator, 5),
        ];
        for (id, role, level) in entries {
            t.insert(
                super::super::types::Participant::new(
                    ParticipantId::from(id),
                    role,
                    level,
                    Keypair::derived(id).public(),
                    false,
                )
                .unwrap(),
            )
            .unwrap();
        }
        t
    }

    fn issue_payload(nonce: u64) -> TransactionPayload {
        TransactionPayload::Issue {
            project_name: "test-array".into(),
            certificate_type: CertificateType::Voluntary,
            source: EnergySource::Solar,
            energy_mwh: 1,
            issued_at: 0,
            nonce,
        }
    }

    fn pid(s: &str) -> ParticipantId {
        ParticipantId::from(s)
    }

    /// Issue one cert and return (state, tracking id).
    fn issued() -> (RegistryState, TrackingId) {
        let state = apply(&RegistryState::new(), &issue_payload(0), &pid("G1"), &table(), 0).unwrap();
        let tid = derive_tracking_id(&pid("G1"), &EnergySource::Solar, 0, 0);
        (state, tid)
    }

    /// Issue and trade to B1, so the cert is Owned.
    fn owned_by_b1() -> (RegistryState, TrackingId) {
        let (state, tid) = issued();
        let state = apply(
            &state,
            &TransactionPayload::Trade {
                target: TradeTarget::Certificate(tid),
                new_owner: pid("B1"),
            },
            &pid("G1"),
            &table(),
            1,
        )
        .unwrap();
        (state, tid)
    }

    #[test]
    fn issue_creates_an_issued_cert_owned_by_its_generator() {
        let (state, tid) = issued();
        let cert = state.certificate(&tid).unwrap();
        assert_eq!(cert.status, CertStatus::Issued);
        assert_eq!(cert.owner, pid("G1"));
        assert_eq!(cert.energy_mwh, 1);
        assert_eq!(cert.swap_count, 0);
    }

    #[test]
    fn duplicate_issue_is_rejected() {
        let (state, _) = issued();
        assert_eq!(
            apply(&state, &issue_payload(0), &pid("G1"), &table(), 0),
            Err(LifecycleError::DuplicateTrackingId)
        );
        // validate_issuance reports the same thing as a value.
        assert_eq!(
            validate_issuance(&issue_payload(0), &state, &table(), &pid("G1")),
            ValidationResult::Rejected(IssueReject::DuplicateId)
        );
    }

    #[test]
    fn zero_mwh_issue_is_rejected() {
        let payload = TransactionPayload::Issue {
            project_name: "p".into(),
            certificate_type: CertificateType::Compliance,
            source: EnergySource::Wind,
            energy_mwh: 0,
            issued_at: 0,
            nonce: 0,
        };
        assert_eq!(
            validate_issuance(&payload, &RegistryState::new(), &table(), &pid("G1")),
            ValidationResult::Rejected(IssueReject::BadEnergyQuantity)
        );
    }

    #[test]
    fn non_generator_cannot_issue() {
        assert_eq!(
            apply(&RegistryState::new(), &issue_payload(0), &pid("B1"), &table(), 0),
            Err(LifecycleError::UnauthorizedRole)
        );
    }

    #[test]
    fn nameless_other_source_is_rejected() {
        let payload = TransactionPayload::Issue {
            project_name: "p".into(),
            certificate_type: CertificateType::Voluntary,
            source: EnergySource::Other(String::new()),
            energy_mwh: 1,
            issued_at: 0,
            nonce: 0,
        };
        assert_eq!(
            validate_issuance(&payload, &RegistryState::new(), &table(), &pid("G1")),
            ValidationResult::Rejected(IssueReject::UnknownSource)
        );
    }

    #[test]
    fn fresh_wellformed_issue_is_accepted() {
        assert_eq!(
            validate_issuance(&issue_payload(0), &RegistryState::new(), &table(), &pid("G1")),
            ValidationResult::Accepted
        );
    }

    #[test]
    fn trade_of_retired_cert_is_refused() {
        let (state, tid) = owned_by_b1();
        let state = apply(
            &state,
            &TransactionPayload::Retire {
                tracking_id: tid,
                reason: RetirementReason::StatutoryOrRegulatoryUse,
            },
            &pid("B1"),
            &table(),
            2,
        )
        .unwrap();
        let verdict = apply(
            &state,
            &TransactionPayload::Trade {
                target: TradeTarget::Certificate(tid),
                new_owner: pid("B2"),
            },
            &pid("B1"),
            &table(),
            3,
        );
        assert_eq!(verdict, Err(LifecycleError::CertificateRetired));
    }

    #[test]
    fn swap_transfers_ownership_without_retiring() {
        let (state, tid) = owned_by_b1();
        let state = apply(
            &state,
            &TransactionPayload::Swap {
                tracking_id: tid,
                new_owner: pid("B2"),
            },
            &pid("B1"),
            &table(),
            2,
        )
        .unwrap();
        let cert = state.certificate(&tid).unwrap();
        assert_eq!(cert.owner, pid("B2"));
        assert_eq!(cert.status, CertStatus::Owned);
        assert_eq!(cert.swap_count, 1);
        assert!(cert.retirement.is_none());
    }

    #[test]
    fn buyer_retirement_needs_a_consumption_report() {
        let (state, tid) = owned_by_b1();
        let retire = TransactionPayload::Retire {
            tracking_id: tid,
            reason: RetirementReason::PublicClaimPurchase,
        };
        assert_eq!(
            apply(&state, &retire, &pid("B1"), &table(), 2),
            Err(LifecycleError::MissingConsumptionReport)
        );

        let state = apply(
            &state,
            &TransactionPayload::ConsumptionReport {
                tracking_id: tid,
                consumer: pid("B1"),
                mwh_used: 1,
            },
            &pid("B1"),
            &table(),
            2,
        )
        .unwrap();
        let state = apply(&state, &retire, &pid("B1"), &table(), 3).unwrap();
        let cert = state.certificate(&tid).unwrap();
        assert_eq!(cert.status, CertStatus::Retired);
        let record = cert.retirement.as_ref().unwrap();
        assert_eq!(record.reason, RetirementReason::PublicClaimPurchase);
        assert_eq!(record.retired_by, pid("B1"));
        assert_eq!(record.retired_at, 3);
    }

    #[test]
    fn statutory_retirement_skips_the_report_requirement() {
        let (state, tid) = owned_by_b1();
        let state = apply(
            &state,
            &TransactionPayload::Retire {
                tracking_id: tid,
                reason: RetirementReason::StatutoryOrRegulatoryUse,
            },
            &pid("B1"),
            &table(),
            2,
        )
        .unwrap();
        assert_eq!(state.certificate(&tid).unwrap().status, CertStatus::Retired);
    }

    #[test]
    fn non_buyer_owner_retires_without_report() {
        // A marketer that bought the cert may retire it directly.
        let (state, tid) = issued();
        let state = apply(
            &state,
            &TransactionPayload::Trade {
                target: TradeTarget::Certificate(tid),
                new_owner: pid("M1"),
            },
            &pid("G1"),
            &table(),
            1,
        )
        .unwrap();
        let state = apply(
            &state,
            &TransactionPayload::Retire {
                tracking_id: tid,
                reason: RetirementReason::AttributePurchase,
            },
            &pid("M1"),
            &table(),
            2,
        )
        .unwrap();
        assert_eq!(state.certificate(&tid).unwrap().status, CertStatus::Retired);
    }

    #[test]
    fn three_issued_certs_aggregate_to_three_mwh() {
        let t = table();
        let mut state = RegistryState::new();
        let mut members = Vec::new();
        for nonce in 0..3 {
            state = apply(&state, &issue_payload(nonce), &pid("G1"), &t, 0).unwrap();
            members.push(derive_tracking_id(&pid("G1"), &EnergySource::Solar, 0, nonce));
        }
        let state = apply(
            &state,
            &TransactionPayload::Aggregate {
                broker: pid("Br1"),
                members: members.clone(),
            },
            &pid("Br1"),
            &t,
            1,
        )
        .unwrap();
        let agg_id = derive_aggregate_id(&members);
        let agg = state.aggregate(&agg_id).unwrap();
        assert_eq!(agg.total_mwh, 3);
        for m in &members {
            assert_eq!(
                state.certificate(m).unwrap().status,
                CertStatus::Aggregated(agg_id)
            );
        }
    }

    #[test]
    fn member_already_aggregated_cannot_join_another() {
        let t = table();
        let mut state = RegistryState::new();
        for nonce in 0..2 {
            state = apply(&state, &issue_payload(nonce), &pid("G1"), &t, 0).unwrap();
        }
        let t1 = derive_tracking_id(&pid("G1"), &EnergySource::Solar, 0, 0);
        let t2 = derive_tracking_id(&pid("G1"), &EnergySource::Solar, 0, 1);
        let state = apply(
            &state,
            &TransactionPayload::Aggregate {
                broker: pid("Br1"),
                members: vec![t1],
            },
            &pid("Br1"),
            &t,
            1,
        )
        .unwrap();
        assert_eq!(
            apply(
                &state,
                &TransactionPayload::Aggregate {
                    broker: pid("Br1"),
                    members: vec![t1, t2],
                },
                &pid("Br1"),
                &t,
                2,
            ),
            Err(LifecycleError::MemberNotIssued)
        );
    }

    #[test]
    fn empty_member_list_is_its_own_error() {
        assert_eq!(
            apply(
                &RegistryState::new(),
                &TransactionPayload::Aggregate {
                    broker: pid("Br1"),
                    members: vec![],
                },
                &pid("Br1"),
                &table(),
                0,
            ),
            Err(LifecycleError::EmptyAggregate)
        );
    }

    #[test]
    fn duplicate_members_are_rejected() {
        let (state, tid) = issued();
        assert_eq!(
            apply(
                &state,
                &TransactionPayload::Aggregate {
                    broker: pid("Br1"),
                    members: vec![tid, tid],
                },
                &pid("Br1"),
                &table(),
                1,
            ),
            Err(LifecycleError::DuplicateMember)
        );
    }

    #[test]
    fn selling_an_aggregate_dissolves_it() {
        let t = table();
        let mut state = RegistryState::new();
        let mut members = Vec::new();
        for nonce in 0..2 {
            state = apply(&state, &issue_payload(nonce), &pid("G1"), &t, 0).unwrap();
            members.push(derive_tracking_id(&pid("G1"), &EnergySource::Solar, 0, nonce));
        }
        let state = apply(
            &state,
            &TransactionPayload::Aggregate {
                broker: pid("Br1"),
                members: members.clone(),
            },
            &pid("Br1"),
            &t,
            1,
        )
        .unwrap();
        let agg_id = derive_aggregate_id(&members);
        let state = apply(
            &state,
            &TransactionPayload::Trade {
                target: TradeTarget::Aggregate(agg_id),
                new_owner: pid("B1"),
            },
            &pid("Br1"),
            &t,
            2,
        )
        .unwrap();
        assert!(state.aggregate(&agg_id).is_none());
        for m in &members {
            let cert = state.certificate(m).unwrap();
            assert_eq!(cert.status, CertStatus::Owned);
            assert_eq!(cert.owner, pid("B1"));
        }
        assert!(state.conservation().holds());
    }

    #[test]
    fn owner_can_withdraw_one_cert_from_an_aggregate() {
        let t = table();
        let mut state = RegistryState::new();
        let mut members = Vec::new();
        for nonce in 0..3 {
            state = apply(&state, &issue_payload(nonce), &pid("G1"), &t, 0).unwrap();
            members.push(derive_tracking_id(&pid("G1"), &EnergySource::Solar, 0, nonce));
        }
        let state = apply(
            &state,
            &TransactionPayload::Aggregate {
                broker: pid("Br1"),
                members: members.clone(),
            },
            &pid("Br1"),
            &t,
            1,
        )
        .unwrap();
        let agg_id = derive_aggregate_id(&members);
        // The generator still owns the aggregated certs and may sell one
        // individually, shrinking the block.
        let state = apply(
            &state,
            &TransactionPayload::Trade {
                target: TradeTarget::Certificate(members[1]),
                new_owner: pid("B1"),
            },
            &pid("G1"),
            &t,
            2,
        )
        .unwrap();
        let agg = state.aggregate(&agg_id).unwrap();
        assert_eq!(agg.total_mwh, 2);
        assert_eq!(agg.members, vec![members[0], members[2]]);
        assert_eq!(state.certificate(&members[1]).unwrap().owner, pid("B1"));
        assert!(state.conservation().holds());
    }

    #[test]
    fn swap_requires_owned_status() {
        let (state, tid) = issued();
        assert_eq!(
            apply(
                &state,
                &TransactionPayload::Swap {
                    tracking_id: tid,
                    new_owner: pid("B1"),
                },
                &pid("G1"),
                &table(),
                1,
            ),
            Err(LifecycleError::WrongStatus)
        );
    }

    #[test]
    fn consumption_quantity_must_match_the_certificate() {
        let (state, tid) = owned_by_b1();
        assert_eq!(
            apply(
                &state,
                &TransactionPayload::ConsumptionReport {
                    tracking_id: tid,
                    consumer: pid("B1"),
                    mwh_used: 2,
                },
                &pid("B1"),
                &table(),
                2,
            ),
            Err(LifecycleError::BadEnergyQuantity)
        );
    }

    #[test]
    fn checkpoint_is_regulator_only_and_leaves_state_alone() {
        let (state, _) = issued();
        let checkpoint = TransactionPayload::AuditCheckpoint {
            period_start: 0,
            period_end: 10,
        };
        assert_eq!(
            apply(&state, &checkpoint, &pid("B1"), &table(), 5),
            Err(LifecycleError::UnauthorizedRole)
        );
        let next = apply(&state, &checkpoint, &pid("R1"), &table(), 5).unwrap();
        assert_eq!(next.canonical_bytes(), state.canonical_bytes());
    }

    #[test]
    fn unknown_actor_and_unknown_new_owner_are_both_caught() {
        let (state, tid) = issued();
        let trade = TransactionPayload::Trade {
            target: TradeTarget::Certificate(tid),
            new_owner: pid("nobody"),
        };
        assert_eq!(
            apply(&state, &trade, &pid("G1"), &table(), 1),
            Err(LifecycleError::UnknownParticipant)
        );
        assert_eq!(
            apply(&state, &issue_payload(9), &pid("ghost"), &table(), 1),
            Err(LifecycleError::UnknownParticipant)
        );
    }

    #[test]
    fn apply_never_mutates_its_input() {
        let (state, tid) = issued();
        let before = state.canonical_bytes();
        let _ = apply(
            &state,
            &TransactionPayload::Trade {
                target: TradeTarget::Certificate(tid),
                new_owner: pid("B1"),
            },
            &pid("G1"),
            &table(),
            1,
        )
        .unwrap();
        let _ = apply(
            &state,
            &TransactionPayload::Swap {
                tracking_id: tid,
                new_owner: pid("B1"),
            },
            &pid("G1"),
            &table(),
            1,
        )
        .unwrap_err();
        assert_eq!(state.canonical_bytes(), before);
    }

    #[test]
    fn conservation_holds_across_a_full_lifecycle() {
        let t = table();
        let mut state = RegistryState::new();
        let mut members = Vec::new();
        for nonce in 0..4 {
            state = apply(&state, &issue_payload(nonce), &pid("G1"), &t, 0).unwrap();
            assert!(state.conservation().holds());
            members.push(derive_tracking_id(&pid("G1"), &EnergySource::Solar, 0, nonce));
        }
        state = apply(
            &state,
            &TransactionPayload::Aggregate {
                broker: pid("Br1"),
                members: members[..2].to_vec(),
            },
            &pid("Br1"),
            &t,
            1,
        )
        .unwrap();
        assert!(state.conservation().holds());
        state = apply(
            &state,
            &TransactionPayload::Trade {
                target: TradeTarget::Aggregate(derive_aggregate_id(&members[..2])),
                new_owner: pid("B1"),
            },
            &pid("Br1"),
            &t,
            2,
        )
        .unwrap();
        assert!(state.conservation().holds());
        state = apply(
            &state,
            &TransactionPayload::Retire {
                tracking_id: members[0],
                reason: RetirementReason::StatutoryOrRegulatoryUse,
            },
            &pid("B1"),
            &t,
            3,
        )
        .unwrap();
        let c = state.conservation();
        assert!(c.holds());
        assert_eq!(c.issued_mwh, 4);
        assert_eq!(c.retired_mwh, 1);
        assert_eq!(c.owned_mwh, 1);
        assert_eq!(c.unsold_mwh, 2);
    }

    #[test]
    fn retired_cert_is_frozen_against_every_move() {
        let (state, tid) = owned_by_b1();
        let state = apply(
            &state,
            &TransactionPayload::Retire {
                tracking_id: tid,
                reason: RetirementReason::StatutoryOrRegulatoryUse,
            },
            &pid("B1"),
            &table(),
            2,
        )
        .unwrap();
        let before = state.certificate(&tid).unwrap().clone();
        let attempts = [
            TransactionPayload::Trade {
                target: TradeTarget::Certificate(tid),
                new_owner: pid("B2"),
            },
            TransactionPayload::Swap {
                tracking_id: tid,
                new_owner: pid("B2"),
            },
            TransactionPayload::Retire {
                tracking_id: tid,
                reason: RetirementReason::AttributePurchase,
            },
        ];
        for (actor, payload) in ["G1", "Br1", "B1", "B2"]
            .iter()
            .flat_map(|a| attempts.iter().map(move |p| (*a, p)))
        {
            assert_eq!(
                apply(&state, payload, &pid(actor), &table(), 9),
                Err(LifecycleError::CertificateRetired),
                "actor {actor} payload {payload:?}"
            );
        }
        assert_eq!(state.certificate(&tid).unwrap(), &before);
    }
}
