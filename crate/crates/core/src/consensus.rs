//! Leader-based quorum voting over proposed blocks.
//!
//! The validator set is fixed per run and known to everyone. For each
//! (height, round) a single leader may propose a block; every validator
//! independently re-checks the proposal — structure against its own chain,
//! then every transaction against its own registry state — and returns a
//! signed vote only when the whole proposal is acceptable. 2f+1 matching
//! votes form a quorum certificate, which travels inside the committed
//! block and is what later full-chain verification re-checks.
//!
//! Sizing the validator set as n ≥ 3f + 1 with quorum 2f + 1 gives the
//! usual intersection argument: two quorums overlap in at least f + 1
//! validators, so with at most f faulty there is an honest validator in
//! the overlap, and honest validators sign at most one block per
//! (height, round). Two conflicting certificates therefore imply a signed
//! pair of contradicting votes from one validator — exactly the evidence
//! an [`EquivocationProof`] packages.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::crypto::{Digest, Keypair, PublicKey};
use crate::ledger::{
    Chain, ChainError, LedgerBlock, QcError, QuorumCertificate, QuorumRules, Vote,
};
use crate::rec::{
    apply, LifecycleError, Participant, ParticipantId, ParticipantTable, RegistryState,
};

// ---------------------------------------------------------------------------
// Validator-set configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("a validator set needs at least one member")]
    EmptyValidatorSet,
    #[error("{n} validators cannot tolerate {f} faults (need at least {})", 3 * f + 1)]
    TooFewValidators { n: usize, f: usize },
    #[error("validator id {0} appears twice")]
    DuplicateValidator(ParticipantId),
}

/// The fixed validator set plus the fault budget `f` it is sized for.
///
/// Also the concrete [`QuorumRules`] implementation: a quorum certificate
/// passes only if it names the expected block hash and carries 2f+1
/// distinct validator votes whose signatures check out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuorumConfig {
    /// Validator ids in ascending order; the leader schedule indexes this.
    validators: Vec<ParticipantId>,
    keys: BTreeMap<ParticipantId, PublicKey>,
    f: usize,
}

impl QuorumConfig {
    pub fn new(members: &[Participant], f: usize) -> Result<Self, ConfigError> {
        if members.is_empty() {
            return Err(ConfigError::EmptyValidatorSet);
        }
        if members.len() < 3 * f + 1 {
            return Err(ConfigError::TooFewValidators {
                n: members.len(),
                f,
            });
        }
        let mut validators: Vec<ParticipantId> = Vec::with_capacity(members.len());
        let mut keys = BTreeMap::new();
        for m in members {
            if keys.insert(m.id.clone(), m.public_key).is_some() {
                return Err(ConfigError::DuplicateValidator(m.id.clone()));
            }
            validators.push(m.id.clone());
        }
        validators.sort();
        Ok(QuorumConfig { validators, keys, f })
    }

    /// Build from every participant flagged as a validator in the table.
    pub fn from_table(table: &ParticipantTable, f: usize) -> Result<Self, ConfigError> {
        let members: Vec<Participant> = table.validators().into_iter().cloned().collect();
        Self::new(&members, f)
    }

    pub fn n(&self) -> usize {
        self.validators.len()
    }

    pub fn f(&self) -> usize {
        self.f
    }

    /// Votes needed for a certificate: 2f + 1.
    pub fn quorum(&self) -> usize {
        2 * self.f + 1
    }

    pub fn validators(&self) -> &[ParticipantId] {
        &self.validators
    }

    pub fn is_validator(&self, id: &ParticipantId) -> bool {
        self.keys.contains_key(id)
    }

    pub fn key_of(&self, id: &ParticipantId) -> Option<&PublicKey> {
        self.keys.get(id)
    }

    /// Round-robin leader schedule over the sorted validator ids. Bumping
    /// the round moves the slot to the next validator, so a silent leader
    /// only costs one timeout.
    pub fn leader_for(&self, height: u64, round: u64) -> &ParticipantId {
        let idx = (height.wrapping_add(round) % self.validators.len() as u64) as usize;
        &self.validators[idx]
    }

    /// Validate one vote's provenance: known validator, consistent fields,
    /// genuine signature.
    fn check_vote(&self, vote: &Vote, height: u64, round: u64) -> Result<(), QcError> {
        let key = self.keys.get(&vote.voter).ok_or(QcError::UnknownVoter)?;
        if vote.height != height || vote.round != round {
            return Err(QcError::VoteMismatch);
        }
        if !vote.verify_signature(key) {
            return Err(QcError::BadVoteSignature);
        }
        Ok(())
    }
}

impl QuorumRules for QuorumConfig {
    fn check_qc(&self, block_hash: &Digest, qc: &QuorumCertificate) -> Result<(), QcError> {
        if qc.block_hash != *block_hash {
            return Err(QcError::WrongBlock);
        }
        if qc.votes.len() < self.quorum() {
            return Err(QcError::TooFewVoters);
        }
        for (voter, vote) in &qc.votes {
            if vote.voter != *voter || vote.block_hash != qc.block_hash {
                return Err(QcError::VoteMismatch);
            }
            self.check_vote(vote, qc.height, qc.round)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Proposal evaluation
// ---------------------------------------------------------------------------

/// Why a validator refused to vote on a proposal.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RejectReason {
    #[error("proposer is not the leader for this height and round (expected {expected})")]
    WrongLeader { expected: ParticipantId },
    #[error("{0}")]
    Structural(ChainError),
    #[error("transaction {index} is invalid: {error}")]
    InvalidTx {
        index: usize,
        error: LifecycleError,
    },
}

impl RejectReason {
    /// Stable reason code for event logs and control tagging.
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::WrongLeader { .. } => "WrongLeader",
            RejectReason::Structural(e) => e.code(),
            RejectReason::InvalidTx { .. } => "InvalidTx",
        }
    }

    /// Every code [`RejectReason::code`] can produce.
    pub const ALL_CODES: [&'static str; 9] = [
        "WrongLeader",
        "BadHeight",
        "BadGenesis",
        "BadPrevHash",
        "BadTxRoot",
        "BadSignature",
        "StaleNonce",
        "BadQuorumCert",
        "InvalidTx",
    ];
}

/// Re-check a proposal from scratch against this validator's own view and
/// sign a vote only when everything holds.
///
/// The checks, in order: the proposer owns this (height, round) slot; the
/// block extends the local chain structurally (link, Merkle root, every
/// signature, every nonce); and the transactions replay cleanly over the
/// local registry state. Nothing about the proposal is taken on trust.
pub fn evaluate_proposal(
    block: &LedgerBlock,
    round: u64,
    chain: &Chain,
    registry: &RegistryState,
    participants: &ParticipantTable,
    config: &QuorumConfig,
    voter: &ParticipantId,
    keypair: &Keypair,
) -> Result<Vote, RejectReason> {
    let expected = config.leader_for(block.height, round);
    if block.proposer != *expected {
        return Err(RejectReason::WrongLeader {
            expected: expected.clone(),
        });
    }

    chain
        .check_extension(block, participants)
        .map_err(RejectReason::Structural)?;

    let mut state = registry.clone();
    for (index, tx) in block.transactions.iter().enumerate() {
        state = apply(&state, &tx.payload, &tx.signer, participants, block.proposed_at)
            .map_err(|error| RejectReason::InvalidTx { index, error })?;
    }

    Ok(Vote::sign(
        voter.clone(),
        block.height,
        round,
        block.hash(),
        keypair,
    ))
}

// ---------------------------------------------------------------------------
// Vote collection and equivocation evidence
// ---------------------------------------------------------------------------

/// Two votes from the same validator for different blocks in the same
/// (height, round) slot — self-contained, transferable proof of misbehavior.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivocationProof {
    pub first: Vote,
    pub second: Vote,
}

impl EquivocationProof {
    pub fn voter(&self) -> &ParticipantId {
        &self.first.voter
    }

    /// Genuine evidence: same voter, same slot, different block hashes,
    /// both signatures valid under the voter's key.
    pub fn verify(&self, key: &PublicKey) -> bool {
        self.first.voter == self.second.voter
            && self.first.height == self.second.height
            && self.first.round == self.second.round
            && self.first.block_hash != self.second.block_hash
            && self.first.verify_signature(key)
            && self.second.verify_signature(key)
    }
}

/// What a pile of votes for one (height, round, block) slot amounts to.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CollectOutcome {
    /// A certificate, when 2f+1 clean votes match the expected block.
    pub quorum: Option<QuorumCertificate>,
    /// Evidence against every voter who signed two different blocks.
    pub equivocations: Vec<EquivocationProof>,
}

/// Sift raw votes for one slot: drop anything unverifiable, extract
/// equivocation evidence, and certify when enough clean votes back the
/// expected block.
///
/// An equivocator's votes never count toward the quorum — both of their
/// statements are suspect, so neither is usable.
pub fn collect_votes(
    votes: &[Vote],
    height: u64,
    round: u64,
    expected_hash: &Digest,
    config: &QuorumConfig,
) -> CollectOutcome {
    let mut seen: BTreeMap<ParticipantId, Vec<Vote>> = BTreeMap::new();
    for vote in votes {
        if config.check_vote(vote, height, round).is_err() {
            continue;
        }
        let pile = seen.entry(vote.voter.clone()).or_default();
        if pile.iter().all(|v| v.block_hash != vote.block_hash) {
            pile.push(vote.clone());
        }
    }

    let mut equivocations = Vec::new();
    let mut clean = Vec::new();
    for (_, pile) in seen {
        if pile.len() > 1 {
            equivocations.push(EquivocationProof {
                first: pile[0].clone(),
                second: pile[1].clone(),
            });
        } else if pile[0].block_hash == *expected_hash {
            clean.push(pile[0].clone());
        }
    }

    let quorum = if clean.len() >= config.quorum() {
        Some(QuorumCertificate::new(height, round, *expected_hash, clean))
    } else {
        None
    };

    CollectOutcome {
        quorum,
        equivocations,
    }
}

/// What [`VoteCollector::observe`] concluded about one incoming vote.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObserveOutcome {
    /// Counted toward its slot.
    Accepted,
    /// Same vote (or same-voter same-hash vote) already seen.
    Duplicate,
    /// Not a validator, wrong fields, or bad signature.
    Invalid(QcError),
    /// The voter was already flagged; the vote is ignored.
    Flagged,
    /// This vote contradicts an earlier one from the same voter.
    Equivocation(EquivocationProof),
}

/// Long-lived vote accounting across slots, with a persistent flag list.
///
/// Once a validator is flagged — locally detected equivocation or an
/// accepted proof relayed by someone else — every future vote from it is
/// ignored. Flags never reset within a run.
#[derive(Debug, Clone, Default)]
pub struct VoteCollector {
    /// (height, round) → voter → distinct votes seen (at most two kept).
    slots: BTreeMap<(u64, u64), BTreeMap<ParticipantId, Vec<Vote>>>,
    flagged: BTreeSet<ParticipantId>,
}

impl VoteCollector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn flagged(&self) -> &BTreeSet<ParticipantId> {
        &self.flagged
    }

    pub fn is_flagged(&self, id: &ParticipantId) -> bool {
        self.flagged.contains(id)
    }

    /// Flag a validator on outside evidence (a relayed proof that checked
    /// out). Returns false when already flagged.
    pub fn flag(&mut self, id: ParticipantId) -> bool {
        self.flagged.insert(id)
    }

    /// Account for one incoming vote.
    pub fn observe(&mut self, vote: Vote, config: &QuorumConfig) -> ObserveOutcome {
        if self.flagged.contains(&vote.voter) {
            return ObserveOutcome::Flagged;
        }
        if let Err(e) = config.check_vote(&vote, vote.height, vote.round) {
            return ObserveOutcome::Invalid(e);
        }
        let slot = self.slots.entry((vote.height, vote.round)).or_default();
        let pile = slot.entry(vote.voter.clone()).or_default();
        if pile.iter().any(|v| v.block_hash == vote.block_hash) {
            return ObserveOutcome::Duplicate;
        }
        pile.push(vote.clone());
        if pile.len() > 1 {
            let proof = EquivocationProof {
                first: pile[0].clone(),
                second: pile[1].clone(),
            };
            self.flagged.insert(vote.voter.clone());
            return ObserveOutcome::Equivocation(proof);
        }
        ObserveOutcome::Accepted
    }

    /// Certify a slot if 2f+1 unflagged voters back the expected hash.
    pub fn try_certify(
        &self,
        height: u64,
        round: u64,
        expected_hash: &Digest,
        config: &QuorumConfig,
    ) -> Option<QuorumCertificate> {
        let slot = self.slots.get(&(height, round))?;
        let clean: Vec<Vote> = slot
            .iter()
            .filter(|(voter, pile)| {
                !self.flagged.contains(*voter)
                    && pile.len() == 1
                    && pile[0].block_hash == *expected_hash
            })
            .map(|(_, pile)| pile[0].clone())
            .collect();
        if clean.len() >= config.quorum() {
            Some(QuorumCertificate::new(height, round, *expected_hash, clean))
        } else {
            None
        }
    }
}
