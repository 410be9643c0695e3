//! Signed transactions, votes, quorum certificates, and blocks.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::canon::{Canon, CanonEncode, Cursor, DecodeError};
use crate::crypto::{sha256, Digest, Keypair, PublicKey, Signature};
use crate::rec::{
    AggregateId, CertificateType, EnergySource, ParticipantId, RetirementReason, TrackingId,
    TradeTarget, TransactionPayload,
};
use crate::Tick;

// --------------------------------------------------------------------------
// Signed transactions
// --------------------------------------------------------------------------

/// A lifecycle action bound to its author.
///
/// The signature covers the signer id and nonce as well as the payload, so a
/// captured signature can be replayed neither under a different nonce nor on
/// behalf of a different signer; replaying the identical transaction is then
/// caught by the strictly-increasing nonce rule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedTransaction {
    pub payload: TransactionPayload,
    pub signer: ParticipantId,
    pub nonce: u64,
    pub signature: Signature,
}

impl SignedTransaction {
    /// Bytes the signature commits to.
    pub fn signing_preimage(
        payload: &TransactionPayload,
        signer: &ParticipantId,
        nonce: u64,
    ) -> Vec<u8> {
        let mut c = Canon::new();
        c.put_str(signer.as_str()).put_u64(nonce);
        c.put_raw(&payload.canonical_bytes());
        c.finish()
    }

    pub fn sign(
        payload: TransactionPayload,
        signer: ParticipantId,
        nonce: u64,
        key: &Keypair,
    ) -> Self {
        let signature = key.sign(&Self::signing_preimage(&payload, &signer, nonce));
        SignedTransaction {
            payload,
            signer,
            nonce,
            signature,
        }
    }

    pub fn verify_signature(&self, key: &PublicKey) -> bool {
        key.verify(
            &Self::signing_preimage(&self.payload, &self.signer, self.nonce),
            &self.signature,
        )
    }

    /// Digest of the canonical transaction bytes (the Merkle leaf input).
    pub fn digest(&self) -> Digest {
        sha256(&self.canonical_bytes())
    }
}

impl CanonEncode for SignedTransaction {
    fn encode(&self, out: &mut Canon) {
        out.put_raw(&self.payload.canonical_bytes());
        out.put_str(self.signer.as_str())
            .put_u64(self.nonce)
            .put_str(&self.signature.to_hex());
    }
}

// --------------------------------------------------------------------------
// Votes and quorum certificates
// --------------------------------------------------------------------------

/// One validator's signed endorsement of a block digest at a height/round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vote {
    pub voter: ParticipantId,
    pub height: u64,
    pub round: u64,
    pub block_hash: Digest,
    pub signature: Signature,
}

impl Vote {
    pub fn signing_preimage(height: u64, round: u64, block_hash: &Digest) -> Vec<u8> {
        let mut c = Canon::new();
        c.put_u64(height)
            .put_u64(round)
            .put_str(&block_hash.to_hex());
        c.finish()
    }

    pub fn sign(
        voter: ParticipantId,
        height: u64,
        round: u64,
        block_hash: Digest,
        key: &Keypair,
    ) -> Self {
        let signature = key.sign(&Self::signing_preimage(height, round, &block_hash));
        Vote {
            voter,
            height,
            round,
            block_hash,
            signature,
        }
    }

    pub fn verify_signature(&self, key: &PublicKey) -> bool {
        key.verify(
            &Self::signing_preimage(self.height, self.round, &self.block_hash),
            &self.signature,
        )
    }
}

impl CanonEncode for Vote {
    fn encode(&self, out: &mut Canon) {
        out.put_str(self.voter.as_str())
            .put_u64(self.height)
            .put_u64(self.round)
            .put_str(&self.block_hash.to_hex())
            .put_str(&self.signature.to_hex());
    }
}

/// Proof that a quorum of validators endorsed one block digest.
///
/// Votes are keyed by voter, which both deduplicates and fixes the
/// serialization order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuorumCertificate {
    pub height: u64,
    pub round: u64,
    pub block_hash: Digest,
    pub votes: BTreeMap<ParticipantId, Vote>,
}

impl QuorumCertificate {
    pub fn new(height: u64, round: u64, block_hash: Digest, votes: Vec<Vote>) -> Self {
        let votes = votes.into_iter().map(|v| (v.voter.clone(), v)).collect();
        QuorumCertificate {
            height,
            round,
            block_hash,
            votes,
        }
    }
}

impl CanonEncode for QuorumCertificate {
    fn encode(&self, out: &mut Canon) {
        out.put_u64(self.height)
            .put_u64(self.round)
            .put_str(&self.block_hash.to_hex());
        out.put_u64(self.votes.len() as u64);
        for vote in self.votes.values() {
            vote.encode(out);
        }
    }
}

/// Reasons a quorum certificate fails validation.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum QcError {
    #[error("block is missing its quorum certificate")]
    Missing,
    #[error("certificate does not reach the vote quorum")]
    TooFewVoters,
    #[error("certificate does not match the block it is attached to")]
    WrongBlock,
    #[error("certificate contains a vote with mismatched fields")]
    VoteMismatch,
    #[error("certificate contains a vote from a non-validator")]
    UnknownVoter,
    #[error("certificate contains a vote with a bad signature")]
    BadVoteSignature,
}

/// Validation of quorum certificates, supplied by the consensus layer so the
/// block store does not need to know quorum arithmetic.
pub trait QuorumRules {
    fn check_qc(&self, block_hash: &Digest, qc: &QuorumCertificate) -> Result<(), QcError>;
}

// --------------------------------------------------------------------------
// Blocks
// --------------------------------------------------------------------------

/// A hash-chained batch of transactions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerBlock {
    pub height: u64,
    pub prev_hash: Digest,
    pub tx_root: Digest,
    pub transactions: Vec<SignedTransaction>,
    pub proposer: ParticipantId,
    pub proposed_at: Tick,
    /// Absent only on the genesis block.
    pub quorum_cert: Option<QuorumCertificate>,
}

impl LedgerBlock {
    /// The bytes the block digest commits to. The quorum certificate is
    /// deliberately outside: its votes sign this digest.
    pub fn hashed_preimage(&self) -> Vec<u8> {
        let mut c = Canon::new();
        c.put_u64(self.height)
            .put_str(&self.prev_hash.to_hex())
            .put_str(&self.tx_root.to_hex());
        c.put_u64(self.transactions.len() as u64);
        for tx in &self.transactions {
            c.put_raw(&tx.canonical_bytes());
        }
        c.put_str(self.proposer.as_str()).put_u64(self.proposed_at);
        c.finish()
    }

    pub fn hash(&self) -> Digest {
        sha256(&self.hashed_preimage())
    }

    /// Decode one block from its full canonical bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut cur = Cursor::new(bytes);
        let block = decode_block(&mut cur)?;
        cur.expect_done()?;
        Ok(block)
    }
}

impl CanonEncode for LedgerBlock {
    fn encode(&self, out: &mut Canon) {
        out.put_raw(&self.hashed_preimage());
        match &self.quorum_cert {
            None => {
                out.put_u64(0);
            }
            Some(qc) => {
                out.put_u64(1);
                qc.encode(out);
            }
        }
    }
}

/// Digest of a block's canonical preimage.
pub fn hash_block(block: &LedgerBlock) -> Digest {
    block.hash()
}

/// The fixed genesis block every chain starts from: all-zero predecessor,
/// no transactions, proposer `genesis`, tick 0, no quorum certificate.
pub fn genesis_block() -> LedgerBlock {
    LedgerBlock {
        height: 0,
        prev_hash: Digest::ZERO,
        tx_root: super::merkle::merkle_root(&[]),
        transactions: Vec::new(),
        proposer: ParticipantId::from("genesis"),
        proposed_at: 0,
        quorum_cert: None,
    }
}

// --------------------------------------------------------------------------
// Decoding
// --------------------------------------------------------------------------

fn decode_tracking_id(cur: &mut Cursor) -> Result<TrackingId, DecodeError> {
    TrackingId::from_hex(&cur.take_str()?).map_err(|_| DecodeError::Malformed("tracking id"))
}

fn decode_digest(cur: &mut Cursor) -> Result<Digest, DecodeError> {
    Digest::from_hex(&cur.take_str()?).map_err(|_| DecodeError::Malformed("digest"))
}

fn decode_payload(cur: &mut Cursor) -> Result<TransactionPayload, DecodeError> {
    let kind = cur.take_str()?;
    Ok(match kind.as_str() {
        "issue" => TransactionPayload::Issue {
            project_name: cur.take_str()?,
            certificate_type: CertificateType::parse(&cur.take_str()?)
                .ok_or(DecodeError::Malformed("certificate type"))?,
            source: EnergySource::parse(&cur.take_str()?)
                .ok_or(DecodeError::Malformed("energy source"))?,
            energy_mwh: cur.take_u64()?,
            issued_at: cur.take_u64()?,
            nonce: cur.take_u64()?,
        },
        "aggregate" => {
            let broker = ParticipantId::new(cur.take_str()?);
            let count = cur.take_u64()?;
            let mut members = Vec::new();
            for _ in 0..count {
                members.push(decode_tracking_id(cur)?);
            }
            TransactionPayload::Aggregate { broker, members }
        }
        "trade" => {
            let target = match cur.take_str()?.as_str() {
                "cert" => TradeTarget::Certificate(decode_tracking_id(cur)?),
                "aggregate" => TradeTarget::Aggregate(
                    AggregateId::from_hex(&cur.take_str()?)
                        .map_err(|_| DecodeError::Malformed("aggregate id"))?,
                ),
                _ => return Err(DecodeError::Malformed("trade target")),
            };
            TransactionPayload::Trade {
                target,
                new_owner: ParticipantId::new(cur.take_str()?),
            }
        }
        "swap" => TransactionPayload::Swap {
            tracking_id: decode_tracking_id(cur)?,
            new_owner: ParticipantId::new(cur.take_str()?),
        },
        "consume" => TransactionPayload::ConsumptionReport {
            tracking_id: decode_tracking_id(cur)?,
            consumer: ParticipantId::new(cur.take_str()?),
            mwh_used: cur.take_u64()?,
        },
        "retire" => TransactionPayload::Retire {
            tracking_id: decode_tracking_id(cur)?,
            reason: RetirementReason::parse(&cur.take_str()?)
                .ok_or(DecodeError::Malformed("retirement reason"))?,
        },
        "audit-checkpoint" => TransactionPayload::AuditCheckpoint {
            period_start: cur.take_u64()?,
            period_end: cur.take_u64()?,
        },
        _ => return Err(DecodeError::Malformed("payload kind")),
    })
}

fn decode_tx(cur: &mut Cursor) -> Result<SignedTransaction, DecodeError> {
    let payload = decode_payload(cur)?;
    let signer = ParticipantId::new(cur.take_str()?);
    let nonce = cur.take_u64()?;
    let signature =
        Signature::from_hex(&cur.take_str()?).map_err(|_| DecodeError::Malformed("signature"))?;
    Ok(SignedTransaction {
        payload,
        signer,
        nonce,
        signature,
    })
}

fn decode_vote(cur: &mut Cursor) -> Result<Vote, DecodeError> {
    Ok(Vote {
        voter: ParticipantId::new(cur.take_str()?),
        height: cur.take_u64()?,
        round: cur.take_u64()?,
        block_hash: decode_digest(cur)?,
        signature: Signature::from_hex(&cur.take_str()?)
            .map_err(|_| DecodeError::Malformed("signature"))?,
    })
}

fn decode_block(cur: &mut Cursor) -> Result<LedgerBlock, DecodeError> {
    let height = cur.take_u64()?;
    let prev_hash = decode_digest(cur)?;
    let tx_root = decode_digest(cur)?;
    let tx_count = cur.take_u64()?;
    let mut transactions = Vec::new();
    for _ in 0..tx_count {
        transactions.push(decode_tx(cur)?);
    }
    let proposer = ParticipantId::new(cur.take_str()?);
    let proposed_at = cur.take_u64()?;
    let quorum_cert = match cur.take_u64()? {
        0 => None,
        1 => {
            let height = cur.take_u64()?;
            let round = cur.take_u64()?;
            let block_hash = decode_digest(cur)?;
            let vote_count = cur.take_u64()?;
            let mut votes = Vec::new();
            for _ in 0..vote_count {
                votes.push(decode_vote(cur)?);
            }
            Some(QuorumCertificate::new(height, round, block_hash, votes))
        }
        _ => return Err(DecodeError::Malformed("quorum certificate flag")),
    };
    Ok(LedgerBlock {
        height,
        prev_hash,
        tx_root,
        transactions,
        proposer,
        proposed_at,
        quorum_cert,
    })
}
