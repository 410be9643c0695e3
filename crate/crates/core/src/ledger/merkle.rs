//! Binary Merkle tree over transaction bytes.
//!
//! Domain separation: leaves hash `0x00 || tx bytes`, inner nodes hash
//! `0x01 || left || right`. Without the prefixes an inner node could be
//! reinterpreted as a leaf (a second-preimage attack on the tree shape).
//! A level with an odd node count duplicates its last node; the empty tree
//! is the hash of the single byte `0x00`.

use crate::canon::CanonEncode;
use crate::crypto::{sha256, Digest};

use super::block::SignedTransaction;

const LEAF_TAG: u8 = 0x00;
const INNER_TAG: u8 = 0x01;

fn leaf_hash(tx_bytes: &[u8]) -> Digest {
    let mut buf = Vec::with_capacity(1 + tx_bytes.len());
    buf.push(LEAF_TAG);
    buf.extend_from_slice(tx_bytes);
    sha256(&buf)
}

fn inner_hash(left: &Digest, right: &Digest) -> Digest {
    let mut buf = Vec::with_capacity(65);
    buf.push(INNER_TAG);
    buf.extend_from_slice(left.as_bytes());
    buf.extend_from_slice(right.as_bytes());
    sha256(&buf)
}

/// Merkle root over the transactions' canonical bytes.
pub fn merkle_root(txs: &[SignedTransaction]) -> Digest {
    let leaves: Vec<Digest> = txs.iter().map(|tx| leaf_hash(&tx.canonical_bytes())).collect();
    merkle_root_of_leaves(&leaves)
}

/// Merkle root from precomputed leaf digests.
pub fn merkle_root_of_leaves(leaves: &[Digest]) -> Digest {
    if leaves.is_empty() {
        return sha256(&[LEAF_TAG]);
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        if level.len() % 2 == 1 {
            level.push(*level.last().expect("level is non-empty"));
        }
        level = level
            .chunks(2)
            .map(|pair| inner_hash(&pair[0], &pair[1]))
            .collect();
    }
    level[0]
}

/// Sibling path from one leaf up to the root.
///
/// Each step records the sibling digest and whether that sibling sits to the
/// left of the running hash.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleProof {
    pub leaf_index: usize,
    pub path: Vec<ProofStep>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProofStep {
    pub sibling: Digest,
    pub sibling_on_left: bool,
}

/// Build the inclusion proof for `index` within `txs`. Returns `None` when
/// the index is out of range.
pub fn prove_leaf(txs: &[SignedTransaction], index: usize) -> Option<MerkleProof> {
    if index >= txs.len() {
        return None;
    }
    let mut level: Vec<Digest> = txs.iter().map(|tx| leaf_hash(&tx.canonical_bytes())).collect();
    let mut path = Vec::new();
    let mut pos = index;
    while level.len() > 1 {
        if level.len() % 2 == 1 {
            level.push(*level.last().expect("level is non-empty"));
        }
        let sibling_pos = pos ^ 1;
        path.push(ProofStep {
            sibling: level[sibling_pos],
            sibling_on_left: sibling_pos < pos,
        });
        level = level
            .chunks(2)
            .map(|pair| inner_hash(&pair[0], &pair[1]))
            .collect();
        pos /= 2;
    }
    Some(MerkleProof {
        leaf_index: index,
        path,
    })
}

/// Recompute the root from a leaf's bytes and its sibling path; true iff it
/// lands on `root`. Needs no access to the other transactions.
pub fn verify_inclusion(root: &Digest, proof: &MerkleProof, leaf_bytes: &[u8]) -> bool {
    let mut acc = leaf_hash(leaf_bytes);
    for step in &proof.path {
        acc = if step.sibling_on_left {
            inner_hash(&step.sibling, &acc)
        } else {
            inner_hash(&acc, &step.sibling)
        };
    }
    acc == *root
}
