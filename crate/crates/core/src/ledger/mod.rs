//! Tamper-evident block store.
//!
//! Every block commits to its predecessor's digest and to a Merkle root over
//! its transactions, every transaction carries an Ed25519 signature and a
//! strictly increasing per-signer nonce, and every committed block (except
//! the fixed genesis) carries a quorum certificate binding the validators'
//! votes to the block digest. Flipping any bit of committed content is
//! therefore visible to [`Chain::verify`], and the audit side can check a
//! single transaction's inclusion with a Merkle proof instead of the whole
//! history.
//!
//! The quorum certificate itself is *excluded* from the hashed preimage:
//! votes are signatures over the block digest, so folding them back into the
//! digest would be circular. Two honest nodes may even store different vote
//! sets for the same block; their chains still agree on every digest.

mod block;
mod chain;
mod merkle;

pub use block::{
    genesis_block, hash_block, LedgerBlock, QcError, QuorumCertificate, QuorumRules,
    SignedTransaction, Vote,
};
pub use chain::{Chain, ChainError, ChainVerdict, ImportError, InclusionProof, TxLocator};
pub use merkle::{merkle_root, merkle_root_of_leaves, prove_leaf, verify_inclusion, MerkleProof};
