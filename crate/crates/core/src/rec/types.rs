//! Identifier, certificate, participant, and transaction-payload types.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::canon::{Canon, CanonEncode};
use crate::crypto::{sha256, CryptoError, Digest, PublicKey};
use crate::Tick;

// --------------------------------------------------------------------------
// Identifiers
// --------------------------------------------------------------------------

/// Unique identifier of one certificate: a 256-bit digest of its canonical
/// issuance bytes, rendered as 64 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrackingId(Digest);

impl TrackingId {
    pub fn from_digest(d: Digest) -> Self {
        TrackingId(d)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        Digest::from_hex(s).map(TrackingId)
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }
}

impl fmt::Display for TrackingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for TrackingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TrackingId({})", &self.to_hex()[..12])
    }
}

/// Identifier of a broker-assembled certificate block, derived from the
/// member tracking ids.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AggregateId(Digest);

impl AggregateId {
    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        Digest::from_hex(s).map(AggregateId)
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }
}

impl fmt::Display for AggregateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for AggregateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AggregateId({})", &self.to_hex()[..12])
    }
}

/// Tracking ids are deterministic digests of the issuance facts, so two
/// independent nodes deriving an id for the same issuance always agree, and
/// an issuer cannot mint the same id twice with different metadata.
pub fn derive_tracking_id(
    generator: &ParticipantId,
    source: &EnergySource,
    issued_at: Tick,
    nonce: u64,
) -> TrackingId {
    let mut c = Canon::new();
    c.put_str(generator.as_str())
        .put_str(&source.label())
        .put_u64(issued_at)
        .put_u64(nonce);
    TrackingId(sha256(&c.finish()))
}

/// Aggregate ids commit to the ordered member list.
pub fn derive_aggregate_id(members: &[TrackingId]) -> AggregateId {
    let mut c = Canon::new();
    c.put_u64(members.len() as u64);
    for m in members {
        c.put_str(&m.to_hex());
    }
    AggregateId(sha256(&c.finish()))
}

// --------------------------------------------------------------------------
// Participants
// --------------------------------------------------------------------------

/// Opaque participant identifier, unique across a deployment.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParticipantId(String);

impl ParticipantId {
    pub fn new(id: impl Into<String>) -> Self {
        ParticipantId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ParticipantId({})", self.0)
    }
}

impl From<&str> for ParticipantId {
    fn from(s: &str) -> Self {
        ParticipantId(s.to_string())
    }
}

/// Business function of a participant in the certificate market.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Generator,
    Broker,
    Buyer,
    Marketer,
    Utility,
    TradingPlatform,
    Regulator,
    Validator,
}

impl Role {
    pub fn label(&self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Broker => "broker",
            Role::Buyer => "buyer",
            Role::Marketer => "marketer",
            Role::Utility => "utility",
            Role::TradingPlatform => "trading-platform",
            Role::Regulator => "regulator",
            Role::Validator => "validator",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        Some(match s {
            "generator" => Role::Generator,
            "broker" => Role::Broker,
            "buyer" => Role::Buyer,
            "marketer" => Role::Marketer,
            "utility" => Role::Utility,
            "trading-platform" => Role::TradingPlatform,
            "regulator" => Role::Regulator,
            "validator" => Role::Validator,
            _ => return None,
        })
    }

    /// Hierarchy levels a role may occupy.
    ///
    /// Generation equipment sits at level 1, facility aggregators at level
    /// 2, tracking/trading platforms at 3 and 5, utility systems at 4, and
    /// regulators at the top. Buyers and marketers are market participants
    /// anywhere above the device level; validator-role nodes belong to the
    /// platform levels.
    pub fn allowed_levels(&self) -> &'static [u8] {
        match self {
            Role::Generator => &[1],
            Role::Broker => &[2],
            Role::Buyer | Role::Marketer => &[2, 3, 4, 5],
            Role::Utility => &[4],
            Role::TradingPlatform => &[3, 5],
            Role::Regulator => &[5],
            Role::Validator => &[3, 4, 5],
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParticipantError {
    #[error("role {role} is not placed at hierarchy level {level}")]
    LevelRoleMismatch { role: Role, level: u8 },
    #[error("duplicate participant id {0}")]
    DuplicateId(ParticipantId),
}

/// A registered participant: identity, market role, position in the
/// five-level hierarchy, verification key, and whether the node takes part
/// in consensus voting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Participant {
    pub id: ParticipantId,
    pub role: Role,
    pub der_level: u8,
    pub public_key: PublicKey,
    pub validator: bool,
}

impl Participant {
    pub fn new(
        id: ParticipantId,
        role: Role,
        der_level: u8,
        public_key: PublicKey,
        validator: bool,
    ) -> Result<Self, ParticipantError> {
        if !role.allowed_levels().contains(&der_level) {
            return Err(ParticipantError::LevelRoleMismatch {
                role,
                level: der_level,
            });
        }
        Ok(Participant {
            id,
            role,
            der_level,
            public_key,
            validator,
        })
    }
}

/// The deployment's registered participants, keyed by id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParticipantTable {
    map: BTreeMap<ParticipantId, Participant>,
}

impl ParticipantTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, p: Participant) -> Result<(), ParticipantError> {
        if self.map.contains_key(&p.id) {
            return Err(ParticipantError::DuplicateId(p.id));
        }
        self.map.insert(p.id.clone(), p);
        Ok(())
    }

    pub fn get(&self, id: &ParticipantId) -> Option<&Participant> {
        self.map.get(id)
    }

    pub fn contains(&self, id: &ParticipantId) -> bool {
        self.map.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Participant> {
        self.map.values()
    }

    /// Consensus voters, in id order (the order leader rotation indexes).
    pub fn validators(&self) -> Vec<&Participant> {
        self.map.values().filter(|p| p.validator).collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

// --------------------------------------------------------------------------
// Certificates
// --------------------------------------------------------------------------

/// Technology that produced the energy behind a certificate.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EnergySource {
    Solar,
    Wind,
    Hydro,
    Biomass,
    Geothermal,
    Other(String),
}

impl EnergySource {
    pub fn label(&self) -> String {
        match self {
            EnergySource::Solar => "solar".into(),
            EnergySource::Wind => "wind".into(),
            EnergySource::Hydro => "hydro".into(),
            EnergySource::Biomass => "biomass".into(),
            EnergySource::Geothermal => "geothermal".into(),
            EnergySource::Other(name) => format!("other:{name}"),
        }
    }

    pub fn parse(s: &str) -> Option<EnergySource> {
        Some(match s {
            "solar" => EnergySource::Solar,
            "wind" => EnergySource::Wind,
            "hydro" => EnergySource::Hydro,
            "biomass" => EnergySource::Biomass,
            "geothermal" => EnergySource::Geothermal,
            other => {
                let name = other.strip_prefix("other:")?;
                EnergySource::Other(name.to_string())
            }
        })
    }

    /// An `Other` source must actually name something.
    pub fn is_well_formed(&self) -> bool {
        match self {
            EnergySource::Other(name) => !name.is_empty(),
            _ => true,
        }
    }
}

/// Compliance-market or voluntary-market certificate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CertificateType {
    Compliance,
    Voluntary,
}

impl CertificateType {
    pub fn label(&self) -> &'static str {
        match self {
            CertificateType::Compliance => "compliance",
            CertificateType::Voluntary => "voluntary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "compliance" => Some(CertificateType::Compliance),
            "voluntary" => Some(CertificateType::Voluntary),
            _ => None,
        }
    }
}

/// Where a certificate sits in its life.
///
/// The only legal moves are `Issued→Aggregated`, `Issued→Owned`,
/// `Aggregated→Owned`, `Owned→Owned` (trade or swap), and `Owned→Retired`.
/// Nothing leaves `Retired`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CertStatus {
    Issued,
    Aggregated(AggregateId),
    Owned,
    Retired,
}

impl CertStatus {
    pub fn label(&self) -> &'static str {
        match self {
            CertStatus::Issued => "issued",
            CertStatus::Aggregated(_) => "aggregated",
            CertStatus::Owned => "owned",
            CertStatus::Retired => "retired",
        }
    }
}

/// Why a certificate was taken out of circulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetirementReason {
    /// Used to satisfy a statutory or regulatory obligation.
    StatutoryOrRegulatoryUse,
    /// Bought and claimed publicly (e.g. a green-power claim).
    PublicClaimPurchase,
    /// Bought for the underlying environmental attributes.
    AttributePurchase,
}

impl RetirementReason {
    pub fn label(&self) -> &'static str {
        match self {
            RetirementReason::StatutoryOrRegulatoryUse => "statutory-or-regulatory-use",
            RetirementReason::PublicClaimPurchase => "public-claim-purchase",
            RetirementReason::AttributePurchase => "attribute-purchase",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "statutory-or-regulatory-use" => Some(RetirementReason::StatutoryOrRegulatoryUse),
            "public-claim-purchase" => Some(RetirementReason::PublicClaimPurchase),
            "attribute-purchase" => Some(RetirementReason::AttributePurchase),
            _ => None,
        }
    }

    pub const ALL: [RetirementReason; 3] = [
        RetirementReason::StatutoryOrRegulatoryUse,
        RetirementReason::PublicClaimPurchase,
        RetirementReason::AttributePurchase,
    ];
}

/// The permanent record attached to a retired certificate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetirementRecord {
    pub reason: RetirementReason,
    pub retired_by: ParticipantId,
    pub retired_at: Tick,
}

/// One REC. `energy_mwh` is always 1 for base certificates; aggregation is
/// expressed through [`AggregateBlock`], never by resizing a certificate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Certificate {
    pub tracking_id: TrackingId,
    pub project_name: String,
    pub certificate_type: CertificateType,
    pub source: EnergySource,
    pub energy_mwh: u64,
    pub generator: ParticipantId,
    pub issued_at: Tick,
    pub status: CertStatus,
    pub owner: ParticipantId,
    pub retirement: Option<RetirementRecord>,
    pub swap_count: u64,
}

impl CanonEncode for Certificate {
    fn encode(&self, out: &mut Canon) {
        out.put_str(&self.tracking_id.to_hex())
            .put_str(&self.project_name)
            .put_str(self.certificate_type.label())
            .put_str(&self.source.label())
            .put_u64(self.energy_mwh)
            .put_str(self.generator.as_str())
            .put_u64(self.issued_at)
            .put_str(self.status.label());
        if let CertStatus::Aggregated(agg) = &self.status {
            out.put_str(&agg.to_hex());
        }
        out.put_str(self.owner.as_str());
        match &self.retirement {
            None => {
                out.put_u64(0);
            }
            Some(r) => {
                out.put_u64(1)
                    .put_str(r.reason.label())
                    .put_str(r.retired_by.as_str())
                    .put_u64(r.retired_at);
            }
        }
        out.put_u64(self.swap_count);
    }
}

/// A broker-assembled block of certificates, tradable as a unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AggregateBlock {
    pub id: AggregateId,
    pub members: Vec<TrackingId>,
    pub broker: ParticipantId,
    pub total_mwh: u64,
}

impl CanonEncode for AggregateBlock {
    fn encode(&self, out: &mut Canon) {
        out.put_str(&self.id.to_hex());
        out.put_u64(self.members.len() as u64);
        for m in &self.members {
            out.put_str(&m.to_hex());
        }
        out.put_str(self.broker.as_str()).put_u64(self.total_mwh);
    }
}

/// One line in the consumption log: who reported using which certificate's
/// energy, and when.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConsumptionEntry {
    pub tracking_id: TrackingId,
    pub consumer: ParticipantId,
    pub tick: Tick,
}

// --------------------------------------------------------------------------
// Transaction payloads
// --------------------------------------------------------------------------

/// What a [`TransactionPayload::Trade`] is selling: a single certificate or
/// a whole aggregate block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TradeTarget {
    Certificate(TrackingId),
    Aggregate(AggregateId),
}

/// A lifecycle action, as carried inside a signed transaction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TransactionPayload {
    Issue {
        project_name: String,
        certificate_type: CertificateType,
        source: EnergySource,
        energy_mwh: u64,
        issued_at: Tick,
        nonce: u64,
    },
    Aggregate {
        broker: ParticipantId,
        members: Vec<TrackingId>,
    },
    Trade {
        target: TradeTarget,
        new_owner: ParticipantId,
    },
    Swap {
        tracking_id: TrackingId,
        new_owner: ParticipantId,
    },
    ConsumptionReport {
        tracking_id: TrackingId,
        consumer: ParticipantId,
        mwh_used: u64,
    },
    Retire {
        tracking_id: TrackingId,
        reason: RetirementReason,
    },
    AuditCheckpoint {
        period_start: Tick,
        period_end: Tick,
    },
}

impl TransactionPayload {
    /// Variant label, used both in the canonical encoding and in event-log
    /// details.
    pub fn kind(&self) -> &'static str {
        match self {
            TransactionPayload::Issue { .. } => "issue",
            TransactionPayload::Aggregate { .. } => "aggregate",
            TransactionPayload::Trade { .. } => "trade",
            TransactionPayload::Swap { .. } => "swap",
            TransactionPayload::ConsumptionReport { .. } => "consume",
            TransactionPayload::Retire { .. } => "retire",
            TransactionPayload::AuditCheckpoint { .. } => "audit-checkpoint",
        }
    }
}

impl CanonEncode for TransactionPayload {
    fn encode(&self, out: &mut Canon) {
        out.put_str(self.kind());
        match self {
            TransactionPayload::Issue {
                project_name,
                certificate_type,
                source,
                energy_mwh,
                issued_at,
                nonce,
            } => {
                out.put_str(project_name)
                    .put_str(certificate_type.label())
                    .put_str(&source.label())
                    .put_u64(*energy_mwh)
                    .put_u64(*issued_at)
                    .put_u64(*nonce);
            }
            TransactionPayload::Aggregate { broker, members } => {
                out.put_str(broker.as_str());
                out.put_u64(members.len() as u64);
                for m in members {
                    out.put_str(&m.to_hex());
                }
            }
            TransactionPayload::Trade { target, new_owner } => {
                match target {
                    TradeTarget::Certificate(tid) => {
                        out.put_str("cert").put_str(&tid.to_hex());
                    }
                    TradeTarget::Aggregate(aid) => {
                        out.put_str("aggregate").put_str(&aid.to_hex());
                    }
                }
                out.put_str(new_owner.as_str());
            }
            TransactionPayload::Swap {
                tracking_id,
                new_owner,
            } => {
                out.put_str(&tracking_id.to_hex())
                    .put_str(new_owner.as_str());
            }
            TransactionPayload::ConsumptionReport {
                tracking_id,
                consumer,
                mwh_used,
            } => {
                out.put_str(&tracking_id.to_hex())
                    .put_str(consumer.as_str())
                    .put_u64(*mwh_used);
            }
            TransactionPayload::Retire {
                tracking_id,
                reason,
            } => {
                out.put_str(&tracking_id.to_hex()).put_str(reason.label());
            }
            TransactionPayload::AuditCheckpoint {
                period_start,
                period_end,
            } => {
                out.put_u64(*period_start).put_u64(*period_end);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_issuance_inputs_give_identical_ids() {
        let g = ParticipantId::from("G1");
        let a = derive_tracking_id(&g, &EnergySource::Solar, 0, 0);
        let b = derive_tracking_id(&g, &EnergySource::Solar, 0, 0);
        assert_eq!(a, b);
    }

    #[test]
    fn nonce_alone_distinguishes_ids() {
        let g = ParticipantId::from("G1");
        let a = derive_tracking_id(&g, &EnergySource::Solar, 7, 0);
        let b = derive_tracking_id(&g, &EnergySource::Solar, 7, 1);
        assert_ne!(a, b);
    }

    #[test]
    fn aggregate_id_commits_to_member_order() {
        let g = ParticipantId::from("G1");
        let t1 = derive_tracking_id(&g, &EnergySource::Wind, 0, 0);
        let t2 = derive_tracking_id(&g, &EnergySource::Wind, 0, 1);
        assert_ne!(
            derive_aggregate_id(&[t1, t2]),
            derive_aggregate_id(&[t2, t1])
        );
    }

    #[test]
    fn source_labels_round_trip() {
        for src in [
            EnergySource::Solar,
            EnergySource::Wind,
            EnergySource::Hydro,
            EnergySource::Biomass,
            EnergySource::Geothermal,
            EnergySource::Other("tidal".into()),
        ] {
            assert_eq!(EnergySource::parse(&src.label()), Some(src));
        }
        assert_eq!(EnergySource::parse("nuclear"), None);
    }

    #[test]
    fn empty_other_source_is_malformed() {
        assert!(!EnergySource::Other(String::new()).is_well_formed());
        assert!(EnergySource::Other("tidal".into()).is_well_formed());
    }

    #[test]
    fn role_levels_are_enforced() {
        let key = crate::crypto::Keypair::derived("x").public();
        let err = Participant::new(ParticipantId::from("x"), Role::Generator, 3, key, false);
        assert_eq!(
            err,
            Err(ParticipantError::LevelRoleMismatch {
                role: Role::Generator,
                level: 3
            })
        );
        assert!(Participant::new(ParticipantId::from("x"), Role::Generator, 1, key, false).is_ok());
    }

    #[test]
    fn table_rejects_duplicate_ids() {
        let key = crate::crypto::Keypair::derived("x").public();
        let mut table = ParticipantTable::new();
        let p = Participant::new(ParticipantId::from("x"), Role::Buyer, 4, key, false).unwrap();
        table.insert(p.clone()).unwrap();
        assert_eq!(
            table.insert(p),
            Err(ParticipantError::DuplicateId(ParticipantId::from("x")))
        );
    }

    #[test]
    fn validators_come_back_in_id_order() {
        let mut table = ParticipantTable::new();
        for id in ["V3", "V1", "V2"] {
            let key = crate::crypto::Keypair::derived(id).public();
            table
                .insert(Participant::new(ParticipantId::from(id), Role::Validator, 3, key, true).unwrap())
                .unwrap();
        }
        let order: Vec<&str> = table.validators().iter().map(|p| p.id.as_str()).collect();
        assert_eq!(order, ["V1", "V2", "V3"]);
    }

    #[test]
    fn payload_encoding_starts_with_variant_label() {
        let p = TransactionPayload::AuditCheckpoint {
            period_start: 0,
            period_end: 10,
        };
        let bytes = p.canonical_bytes();
        // 4-byte length 16, then the label.
        assert_eq!(&bytes[..4], &[0, 0, 0, 16]);
        assert_eq!(&bytes[4..20], b"audit-checkpoint");
    }
}
