//! The append-only chain: linking, verification, export, inclusion proofs.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::canon::{CanonEncode, DecodeError};
use crate::crypto::Digest;
use crate::rec::{ParticipantId, ParticipantTable, TrackingId, TradeTarget, TransactionPayload};

use super::block::{genesis_block, LedgerBlock, QcError, QuorumRules, SignedTransaction};
use super::merkle::{merkle_root, prove_leaf, MerkleProof};

/// Structural reasons a block cannot extend (or sit inside) a chain.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ChainError {
    #[error("block height {got} does not follow the head (expected {expected})")]
    BadHeight { expected: u64, got: u64 },
    #[error("block zero is not the canonical genesis block")]
    BadGenesis,
    #[error("prev_hash does not match the predecessor's digest")]
    BadPrevHash,
    #[error("tx_root does not match the transactions")]
    BadTxRoot,
    #[error("transaction {0} has an invalid signature or unknown signer")]
    BadSignature(usize),
    #[error("transaction {0} reuses a nonce at or below the signer's last")]
    StaleNonce(usize),
    #[error("quorum certificate rejected: {0}")]
    BadQuorumCert(QcError),
}

impl ChainError {
    /// Stable reason code for reports and event logs.
    pub fn code(&self) -> &'static str {
        match self {
            ChainError::BadHeight { .. } => "BadHeight",
            ChainError::BadGenesis => "BadGenesis",
            ChainError::BadPrevHash => "BadPrevHash",
            ChainError::BadTxRoot => "BadTxRoot",
            ChainError::BadSignature(_) => "BadSignature",
            ChainError::StaleNonce(_) => "StaleNonce",
            ChainError::BadQuorumCert(_) => "BadQuorumCert",
        }
    }
}

/// Outcome of a full-chain verification sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainVerdict {
    Valid,
    InvalidAt { height: u64, reason: ChainError },
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ImportError {
    #[error("line {line}: not valid hex")]
    BadHex { line: usize },
    #[error("line {line}: {source}")]
    BadBlock { line: usize, source: DecodeError },
}

/// How to find a transaction for an inclusion proof.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxLocator {
    /// By the digest of the transaction's canonical bytes.
    Digest(Digest),
    /// By a certificate the transaction references.
    TrackingId(TrackingId),
}

/// A proof that one transaction is committed in the chain, small enough to
/// hand to a third party who never sees the other transactions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InclusionProof {
    pub height: u64,
    pub tx_index: usize,
    pub tx: SignedTransaction,
    pub proof: MerkleProof,
}

/// An ordered run of blocks plus the per-signer nonce high-water marks.
///
/// Committed blocks are immutable through this API (the one deliberate
/// exception being [`Chain::tamper_block`], which exists for the adversary
/// harness).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<LedgerBlock>,
    last_nonces: BTreeMap<ParticipantId, u64>,
}

impl Chain {
    /// An empty chain — vacuously valid, no genesis yet.
    pub fn new() -> Self {
        Self::default()
    }

    /// A chain holding exactly the canonical genesis block.
    pub fn with_genesis() -> Self {
        let mut c = Chain::new();
        c.blocks.push(genesis_block());
        c
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn get(&self, height: u64) -> Option<&LedgerBlock> {
        self.blocks.get(height as usize)
    }

    pub fn head(&self) -> Option<&LedgerBlock> {
        self.blocks.last()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &LedgerBlock> {
        self.blocks.iter()
    }

    /// Height the next appended block must carry.
    pub fn next_height(&self) -> u64 {
        self.blocks.len() as u64
    }

    /// Digest of the head block (all-zero when empty).
    ///
    /// Commits to the whole history through the prev-hash links while
    /// staying independent of quorum certificates, so two nodes that
    /// committed the same blocks agree on this value even if they collected
    /// different vote sets.
    pub fn digest(&self) -> Digest {
        self.head().map(|b| b.hash()).unwrap_or(Digest::ZERO)
    }

    /// Highest committed nonce for a signer (0 if none).
    pub fn last_nonce(&self, signer: &ParticipantId) -> u64 {
        self.last_nonces.get(signer).copied().unwrap_or(0)
    }

    /// Append a block after full structural checking: height, predecessor
    /// link, Merkle root, every signature and nonce, and the quorum
    /// certificate (delegated to the consensus rules).
    pub fn append_block(
        &mut self,
        block: LedgerBlock,
        participants: &ParticipantTable,
        rules: &dyn QuorumRules,
    ) -> Result<(), ChainError> {
        let mut nonces = self.last_nonces.clone();
        check_block(
            &block,
            self.next_height(),
            self.head(),
            &mut nonces,
            participants,
            rules,
        )?;
        self.blocks.push(block);
        self.last_nonces = nonces;
        Ok(())
    }

    /// Re-verify the whole chain from scratch and report the lowest invalid
    /// height. An empty chain is vacuously valid.
    pub fn verify(
        &self,
        participants: &ParticipantTable,
        rules: &dyn QuorumRules,
    ) -> ChainVerdict {
        let mut nonces = BTreeMap::new();
        let mut prev: Option<&LedgerBlock> = None;
        for (idx, block) in self.blocks.iter().enumerate() {
            if let Err(reason) =
                check_block(block, idx as u64, prev, &mut nonces, participants, rules)
            {
                return ChainVerdict::InvalidAt {
                    height: idx as u64,
                    reason,
                };
            }
            prev = Some(block);
        }
        ChainVerdict::Valid
    }

    /// Render the chain as one hex-encoded canonical block per line.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for block in &self.blocks {
            out.push_str(&hex::encode(block.canonical_bytes()));
            out.push('\n');
        }
        out
    }

    /// Parse an exported chain. Structure only — run [`Chain::verify`] to
    /// check links, signatures, and certificates.
    pub fn import(text: &str) -> Result<Chain, ImportError> {
        let mut chain = Chain::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let raw = hex::decode(line.trim()).map_err(|_| ImportError::BadHex { line: line_no })?;
            let block = LedgerBlock::decode(&raw).map_err(|source| ImportError::BadBlock {
                line: line_no,
                source,
            })?;
            for tx in &block.transactions {
                let entry = chain.last_nonces.entry(tx.signer.clone()).or_insert(0);
                *entry = (*entry).max(tx.nonce);
            }
            chain.blocks.push(block);
        }
        Ok(chain)
    }

    /// Find a committed transaction and build its Merkle proof.
    pub fn prove_inclusion(&self, locator: &TxLocator) -> Option<InclusionProof> {
        for block in &self.blocks {
            for (i, tx) in block.transactions.iter().enumerate() {
                let hit = match locator {
                    TxLocator::Digest(d) => tx.digest() == *d,
                    TxLocator::TrackingId(tid) => tx_references(tx, tid),
                };
                if hit {
                    let proof = prove_leaf(&block.transactions, i)
                        .expect("index comes from enumerate");
                    return Some(InclusionProof {
                        height: block.height,
                        tx_index: i,
                        tx: tx.clone(),
                        proof,
                    });
                }
            }
        }
        None
    }

    /// Check everything about a candidate extension except its quorum
    /// certificate: height, predecessor link, Merkle root, signatures, and
    /// nonces. This is the test a validator runs against a *proposal*,
    /// which by construction has no certificate yet.
    pub fn check_extension(
        &self,
        block: &LedgerBlock,
        participants: &ParticipantTable,
    ) -> Result<(), ChainError> {
        let mut nonces = self.last_nonces.clone();
        check_structure(block, self.next_height(), self.head(), &mut nonces, participants)
    }

    /// Deliberately corrupt a stored block in place, returning false when
    /// the height does not exist.
    ///
    /// This is the adversary's hook: the tamper-evidence tests and the
    /// `TamperStoredBlock` simulation behavior use it to model a compromised
    /// node rewriting its local store. Honest code has no business here.
    pub fn tamper_block(&mut self, height: u64, mutate: impl FnOnce(&mut LedgerBlock)) -> bool {
        match self.blocks.get_mut(height as usize) {
            Some(block) => {
                mutate(block);
                true
            }
            None => false,
        }
    }
}

/// Whether a transaction mentions the given certificate.
fn tx_references(tx: &SignedTransaction, tid: &TrackingId) -> bool {
    match &tx.payload {
        TransactionPayload::Issue {
            source,
            issued_at,
            nonce,
            ..
        } => crate::rec::derive_tracking_id(&tx.signer, source, *issued_at, *nonce) == *tid,
        TransactionPayload::Aggregate { members, .. } => members.contains(tid),
        TransactionPayload::Trade { target, .. } => match target {
            TradeTarget::Certificate(t) => t == tid,
            TradeTarget::Aggregate(_) => false,
        },
        TransactionPayload::Swap { tracking_id, .. }
        | TransactionPayload::ConsumptionReport { tracking_id, .. }
        | TransactionPayload::Retire { tracking_id, .. } => tracking_id == tid,
        TransactionPayload::AuditCheckpoint { .. } => false,
    }
}

/// The shared checking core behind append and verify.
fn check_block(
    block: &LedgerBlock,
    expected_height: u64,
    prev: Option<&LedgerBlock>,
    nonces: &mut BTreeMap<ParticipantId, u64>,
    participants: &ParticipantTable,
    rules: &dyn QuorumRules,
) -> Result<(), ChainError> {
    check_structure(block, expected_height, prev, nonces, participants)?;
    if expected_height == 0 {
        // The canonical genesis carries no certificate.
        return Ok(());
    }
    let qc = block
        .quorum_cert
        .as_ref()
        .ok_or(ChainError::BadQuorumCert(QcError::Missing))?;
    rules
        .check_qc(&block.hash(), qc)
        .map_err(ChainError::BadQuorumCert)?;
    Ok(())
}

/// All structural checks except the quorum certificate.
fn check_structure(
    block: &LedgerBlock,
    expected_height: u64,
    prev: Option<&LedgerBlock>,
    nonces: &mut BTreeMap<ParticipantId, u64>,
    participants: &ParticipantTable,
) -> Result<(), ChainError> {
    if block.height != expected_height {
        return Err(ChainError::BadHeight {
            expected: expected_height,
            got: block.height,
        });
    }

    if expected_height == 0 {
        // Height zero is not just shaped like a genesis block, it *is* the
        // fixed one — any deviation in its bytes is tampering.
        if block.canonical_bytes() != genesis_block().canonical_bytes() {
            return Err(ChainError::BadGenesis);
        }
        return Ok(());
    }

    let prev = prev.expect("non-zero height implies a predecessor");
    if block.prev_hash != prev.hash() {
        return Err(ChainError::BadPrevHash);
    }

    if block.tx_root != merkle_root(&block.transactions) {
        return Err(ChainError::BadTxRoot);
    }

    for (i, tx) in block.transactions.iter().enumerate() {
        let signer = participants
            .get(&tx.signer)
            .ok_or(ChainError::BadSignature(i))?;
        if !tx.verify_signature(&signer.public_key) {
            return Err(ChainError::BadSignature(i));
        }
        let last = nonces.entry(tx.signer.clone()).or_insert(0);
        if tx.nonce <= *last {
            return Err(ChainError::StaleNonce(i));
        }
        *last = tx.nonce;
    }

    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Keypair;
    use crate::ledger::block::QuorumCertificate;
    use crate::rec::{
        CertificateType, EnergySource, Participant, Role,
    };

    /// Stand-in rules for structural tests; real quorum arithmetic is
    /// exercised in the consensus module.
    struct AcceptAllQcs;
    impl QuorumRules for AcceptAllQcs {
        fn check_qc(&self, _: &Digest, _: &QuorumCertificate) -> Result<(), QcError> {
            Ok(())
        }
    }

    struct RejectAllQcs;
    impl QuorumRules for RejectAllQcs {
        fn check_qc(&self, _: &Digest, _: &QuorumCertificate) -> Result<(), QcError> {
            Err(QcError::TooFewVoters)
        }
    }

    fn participants() -> ParticipantTable {
        let mut t = ParticipantTable::new();
        for (id, role, level) in [("G1", Role::Generator, 1), ("B1", Role::Buyer, 4)] {
            t.insert(
                Participant::new(
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

    fn issue_tx(nonce_field: u64, signer_nonce: u64) -> SignedTransaction {
        SignedTransaction::sign(
            TransactionPayload::Issue {
                project_name: "gorge-hydro".into(),
                certificate_type: CertificateType::Compliance,
                source: EnergySource::Hydro,
                energy_mwh: 1,
                issued_at: 0,
                nonce: nonce_field,
            },
            ParticipantId::from("G1"),
            signer_nonce,
            &Keypair::derived("G1"),
        )
    }

    fn block_on(chain: &Chain, txs: Vec<SignedTransaction>) -> LedgerBlock {
        let mut b = LedgerBlock {
            height: chain.next_height(),
            prev_hash: chain.digest(),
            tx_root: merkle_root(&txs),
            transactions: txs,
            proposer: ParticipantId::from("V1"),
            proposed_at: chain.next_height(),
            quorum_cert: None,
        };
        // Empty certificate: enough structure for the permissive test rules.
        b.quorum_cert = Some(QuorumCertificate::new(b.height, 0, b.hash(), vec![]));
        b
    }

    #[test]
    fn empty_and_genesis_only_chains_are_valid() {
        assert_eq!(
            Chain::new().verify(&participants(), &AcceptAllQcs),
            ChainVerdict::Valid
        );
        assert_eq!(
            Chain::with_genesis().verify(&participants(), &AcceptAllQcs),
            ChainVerdict::Valid
        );
    }

    #[test]
    fn linked_blocks_append_and_verify() {
        let mut chain = Chain::with_genesis();
        let b1 = block_on(&chain, vec![issue_tx(0, 1)]);
        chain.append_block(b1, &participants(), &AcceptAllQcs).unwrap();
        let b2 = block_on(&chain, vec![issue_tx(1, 2)]);
        chain.append_block(b2, &participants(), &AcceptAllQcs).unwrap();
        assert_eq!(chain.len(), 3);
        assert_eq!(chain.verify(&participants(), &AcceptAllQcs), ChainVerdict::Valid);
        assert_eq!(chain.last_nonce(&ParticipantId::from("G1")), 2);
    }

    #[test]
    fn height_gap_is_refused() {
        let mut chain = Chain::with_genesis();
        let mut b = block_on(&chain, vec![]);
        b.height = 2;
        assert_eq!(
            chain.append_block(b, &participants(), &AcceptAllQcs),
            Err(ChainError::BadHeight { expected: 1, got: 2 })
        );
    }

    #[test]
    fn linking_to_the_grandparent_is_refused() {
        let mut chain = Chain::with_genesis();
        let b1 = block_on(&chain, vec![issue_tx(0, 1)]);
        chain.append_block(b1, &participants(), &AcceptAllQcs).unwrap();
        // Build a block whose prev_hash points at genesis instead of head.
        let genesis_digest = chain.get(0).unwrap().hash();
        let mut b2 = block_on(&chain, vec![]);
        b2.prev_hash = genesis_digest;
        let h = b2.hash();
        b2.quorum_cert = Some(QuorumCertificate::new(2, 0, h, vec![]));
        assert_eq!(
            chain.append_block(b2, &participants(), &AcceptAllQcs),
            Err(ChainError::BadPrevHash)
        );
    }

    #[test]
    fn wrong_tx_root_is_refused() {
        let mut chain = Chain::with_genesis();
        let mut b = block_on(&chain, vec![issue_tx(0, 1)]);
        b.tx_root = merkle_root(&[]);
        assert_eq!(
            chain.append_block(b, &participants(), &AcceptAllQcs),
            Err(ChainError::BadTxRoot)
        );
    }

    #[test]
    fn zeroed_signature_is_named_by_index() {
        let mut chain = Chain::with_genesis();
        let good = issue_tx(0, 1);
        let mut bad = issue_tx(1, 2);
        bad.signature = crate::crypto::Signature::from_bytes(&[0u8; 64]);
        let b = block_on(&chain, vec![good, bad]);
        assert_eq!(
            chain.append_block(b, &participants(), &AcceptAllQcs),
            Err(ChainError::BadSignature(1))
        );
    }

    #[test]
    fn unknown_signer_counts_as_a_bad_signature() {
        let mut chain = Chain::with_genesis();
        let tx = SignedTransaction::sign(
            TransactionPayload::AuditCheckpoint {
                period_start: 0,
                period_end: 1,
            },
            ParticipantId::from("stranger"),
            1,
            &Keypair::derived("stranger"),
        );
        let b = block_on(&chain, vec![tx]);
        assert_eq!(
            chain.append_block(b, &participants(), &AcceptAllQcs),
            Err(ChainError::BadSignature(0))
        );
    }

    #[test]
    fn nonce_reuse_is_stale_across_and_within_blocks() {
        let mut chain = Chain::with_genesis();
        chain
            .append_block(block_on(&chain, vec![issue_tx(0, 5)]), &participants(), &AcceptAllQcs)
            .unwrap();
        // Same nonce again in the next block.
        let replay = block_on(&chain, vec![issue_tx(1, 5)]);
        assert_eq!(
            chain.append_block(replay, &participants(), &AcceptAllQcs),
            Err(ChainError::StaleNonce(0))
        );
        // Conflict inside a single block is also caught, at the right index.
        let pair = block_on(&chain, vec![issue_tx(1, 6), issue_tx(2, 6)]);
        assert_eq!(
            chain.append_block(pair, &participants(), &AcceptAllQcs),
            Err(ChainError::StaleNonce(1))
        );
    }

    #[test]
    fn missing_and_rejected_quorum_certs_are_refused() {
        let mut chain = Chain::with_genesis();
        let mut b = block_on(&chain, vec![]);
        b.quorum_cert = None;
        assert_eq!(
            chain.append_block(b.clone(), &participants(), &AcceptAllQcs),
            Err(ChainError::BadQuorumCert(QcError::Missing))
        );
        b.quorum_cert = Some(QuorumCertificate::new(1, 0, b.hash(), vec![]));
        assert_eq!(
            chain.append_block(b, &participants(), &RejectAllQcs),
            Err(ChainError::BadQuorumCert(QcError::TooFewVoters))
        );
    }

    #[test]
    fn a_forged_genesis_is_refused() {
        let mut forged = genesis_block();
        forged.proposer = ParticipantId::from("not-genesis");
        let mut chain = Chain::new();
        assert_eq!(
            chain.append_block(forged, &participants(), &AcceptAllQcs),
            Err(ChainError::BadGenesis)
        );
    }

    #[test]
    fn export_import_round_trips_bytes_exactly() {
        let mut chain = Chain::with_genesis();
        chain
            .append_block(block_on(&chain, vec![issue_tx(0, 1)]), &participants(), &AcceptAllQcs)
            .unwrap();
        let text = chain.export();
        let back = Chain::import(&text).unwrap();
        assert_eq!(back.export(), text);
        assert_eq!(back.verify(&participants(), &AcceptAllQcs), ChainVerdict::Valid);
        assert_eq!(back.last_nonce(&ParticipantId::from("G1")), 1);
    }

    #[test]
    fn import_reports_the_offending_line() {
        let mut text = Chain::with_genesis().export();
        text.push_str("zz-not-hex\n");
        assert_eq!(Chain::import(&text), Err(ImportError::BadHex { line: 2 }));
    }

    #[test]
    fn inclusion_proofs_resolve_by_tracking_id_and_digest() {
        let mut chain = Chain::with_genesis();
        let txs = vec![issue_tx(0, 1), issue_tx(1, 2), issue_tx(2, 3), issue_tx(3, 4)];
        let block = block_on(&chain, txs.clone());
        let root = block.tx_root;
        chain.append_block(block, &participants(), &AcceptAllQcs).unwrap();

        let tid = crate::rec::derive_tracking_id(
            &ParticipantId::from("G1"),
            &EnergySource::Hydro,
            0,
            2,
        );
        let found = chain.prove_inclusion(&TxLocator::TrackingId(tid)).unwrap();
        assert_eq!(found.height, 1);
        assert_eq!(found.tx_index, 2);
        assert!(super::super::merkle::verify_inclusion(
            &root,
            &found.proof,
            &found.tx.canonical_bytes()
        ));

        let by_digest = chain
            .prove_inclusion(&TxLocator::Digest(txs[1].digest()))
            .unwrap();
        assert_eq!(by_digest.tx_index, 1);

        let absent = crate::rec::derive_tracking_id(
            &ParticipantId::from("G1"),
            &EnergySource::Hydro,
            0,
            99,
        );
        assert!(chain.prove_inclusion(&TxLocator::TrackingId(absent)).is_none());
    }

    #[test]
    fn proof_against_another_blocks_root_fails() {
        let mut chain = Chain::with_genesis();
        chain
            .append_block(block_on(&chain, vec![issue_tx(0, 1)]), &participants(), &AcceptAllQcs)
            .unwrap();
        chain
            .append_block(block_on(&chain, vec![issue_tx(1, 2)]), &participants(), &AcceptAllQcs)
            .unwrap();
        let proof = chain
            .prove_inclusion(&TxLocator::Digest(
                chain.get(1).unwrap().transactions[0].digest(),
            ))
            .unwrap();
        let wrong_root = chain.get(2).unwrap().tx_root;
        assert!(!super::super::merkle::verify_inclusion(
            &wrong_root,
            &proof.proof,
            &proof.tx.canonical_bytes()
        ));
    }

    #[test]
    fn tampering_a_stored_transaction_is_detected_at_that_height() {
        let mut chain = Chain::with_genesis();
        for n in 0..3 {
            chain
                .append_block(
                    block_on(&chain, vec![issue_tx(n, n + 1)]),
                    &participants(),
                    &AcceptAllQcs,
                )
                .unwrap();
        }
        assert!(chain.tamper_block(2, |b| {
            b.transactions[0].nonce = 999;
        }));
        assert_eq!(
            chain.verify(&participants(), &AcceptAllQcs),
            ChainVerdict::InvalidAt {
                height: 2,
                reason: ChainError::BadTxRoot
            }
        );
    }

    #[test]
    fn tampering_the_genesis_is_detected_at_height_zero() {
        let mut chain = Chain::with_genesis();
        chain
            .append_block(block_on(&chain, vec![issue_tx(0, 1)]), &participants(), &AcceptAllQcs)
            .unwrap();
        chain.tamper_block(0, |b| b.proposed_at = 7);
        assert_eq!(
            chain.verify(&participants(), &AcceptAllQcs),
            ChainVerdict::InvalidAt {
                height: 0,
                reason: ChainError::BadGenesis
            }
        );
    }
}
