#!/usr/bin/env python3
"""Independent re-implementation of the ledger's canonical byte formats.

This script recomputes every frozen test vector shipped under
``crates/core/testdata/`` using only Python's ``hashlib`` and the
``cryptography`` package's Ed25519 primitives -- no code is shared with
the Rust implementation.  It exists so the canonical serialization,
tracking-id derivation, Merkle tree, block hashing, and chain export
formats can be cross-checked against a second implementation.

Usage:
    python3 scripts/verify_vectors.py            # verify against testdata/
    python3 scripts/verify_vectors.py --dump     # print recomputed values
    python3 scripts/verify_vectors.py --write    # (re)write the testdata files

Exit status is 0 when every vector matches, 1 otherwise.
"""

import argparse
import hashlib
import os
import sys

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

TESTDATA = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "testdata")

# --------------------------------------------------------------------------
# Canonical encoding primitives
#
# Strings are UTF-8 with a 4-byte big-endian length prefix.  Integers are
# 8-byte big-endian.  Byte strings (digests, signatures, keys) are rendered
# as lowercase hex and then encoded as strings.  Lists are prefixed with
# their element count as an integer.
# --------------------------------------------------------------------------

def put_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return len(raw).to_bytes(4, "big") + raw


def put_u64(x: int) -> bytes:
    return x.to_bytes(8, "big")


def put_hex(b: bytes) -> bytes:
    return put_str(b.hex())


def sha256(b: bytes) -> bytes:
    return hashlib.sha256(b).digest()


# --------------------------------------------------------------------------
# Deterministic key material
#
# Simulation participants derive their Ed25519 seed from their id; the same
# rule is used for the frozen vectors so signatures are reproducible.
# --------------------------------------------------------------------------

def signing_key(participant_id: str) -> Ed25519PrivateKey:
    seed = sha256(b"recledger-test-key:" + participant_id.encode("utf-8"))
    return Ed25519PrivateKey.from_private_bytes(seed)


def public_key_hex(participant_id: str) -> str:
    pub = signing_key(participant_id).public_key()
    return pub.public_bytes(Encoding.Raw, PublicFormat.Raw).hex()


# --------------------------------------------------------------------------
# Tracking-id derivation
# --------------------------------------------------------------------------

def derive_tracking_id(generator_id: str, source_label: str, issued_at: int, nonce: int) -> str:
    preimage = (
        put_str(generator_id)
        + put_str(source_label)
        + put_u64(issued_at)
        + put_u64(nonce)
    )
    return sha256(preimage).hex()


# --------------------------------------------------------------------------
# Transaction payloads
#
# Each payload starts with its variant label as a string, followed by its
# fields in declaration order.
# --------------------------------------------------------------------------

def payload_issue(project: str, cert_type: str, source: str, mwh: int, issued_at: int, nonce: int) -> bytes:
    return (
        put_str("issue")
        + put_str(project)
        + put_str(cert_type)
        + put_str(source)
        + put_u64(mwh)
        + put_u64(issued_at)
        + put_u64(nonce)
    )


def payload_aggregate(broker: str, member_ids_hex) -> bytes:
    out = put_str("aggregate") + put_str(broker) + put_u64(len(member_ids_hex))
    for tid in member_ids_hex:
        out += put_str(tid)
    return out


def payload_trade(target_kind: str, target_id_hex: str, new_owner: str) -> bytes:
    return put_str("trade") + put_str(target_kind) + put_str(target_id_hex) + put_str(new_owner)


def payload_swap(tracking_id_hex: str, new_owner: str) -> bytes:
    return put_str("swap") + put_str(tracking_id_hex) + put_str(new_owner)


def payload_consume(tracking_id_hex: str, consumer: str, mwh_used: int) -> bytes:
    return put_str("consume") + put_str(tracking_id_hex) + put_str(consumer) + put_u64(mwh_used)


def payload_retire(tracking_id_hex: str, reason: str) -> bytes:
    return put_str("retire") + put_str(tracking_id_hex) + put_str(reason)


def payload_checkpoint(start: int, end: int) -> bytes:
    return put_str("audit-checkpoint") + put_u64(start) + put_u64(end)


def derive_aggregate_id(member_ids_hex) -> str:
    preimage = put_u64(len(member_ids_hex))
    for tid in member_ids_hex:
        preimage += put_str(tid)
    return sha256(preimage).hex()


def signed_tx(payload: bytes, signer: str, nonce: int) -> bytes:
    """Sign and render a transaction in canonical form.

    The signing preimage covers the signer id and nonce in addition to the
    payload, so a signature cannot be replayed under a different nonce or
    grafted onto another signer.
    """
    preimage = put_str(signer) + put_u64(nonce) + payload
    sig = signing_key(signer).sign(preimage)
    return payload + put_str(signer) + put_u64(nonce) + put_str(sig.hex())


# --------------------------------------------------------------------------
# Merkle tree
#
# Leaves are H(0x00 || tx bytes), inner nodes H(0x01 || left || right); a
# level with an odd node count duplicates its last node; the empty tree is
# H(0x00).
# --------------------------------------------------------------------------

def merkle_root(tx_bytes_list) -> bytes:
    if not tx_bytes_list:
        return sha256(b"\x00")
    level = [sha256(b"\x00" + tx) for tx in tx_bytes_list]
    while len(level) > 1:
        if len(level) % 2 == 1:
            level.append(level[-1])
        level = [sha256(b"\x01" + level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


# --------------------------------------------------------------------------
# Blocks and chain export
# --------------------------------------------------------------------------

def block_preimage(height: int, prev_hash: bytes, tx_root: bytes, txs, proposer: str, proposed_at: int) -> bytes:
    out = put_u64(height) + put_hex(prev_hash) + put_hex(tx_root) + put_u64(len(txs))
    for tx in txs:
        out += tx
    out += put_str(proposer) + put_u64(proposed_at)
    return out


def hash_block(preimage: bytes) -> bytes:
    return sha256(preimage)


def vote(voter: str, height: int, round_: int, block_hash: bytes) -> bytes:
    msg = put_u64(height) + put_u64(round_) + put_str(block_hash.hex())
    sig = signing_key(voter).sign(msg)
    return put_str(voter) + put_u64(height) + put_u64(round_) + put_str(block_hash.hex()) + put_str(sig.hex())


def quorum_cert(height: int, round_: int, block_hash: bytes, voters) -> bytes:
    out = put_u64(height) + put_u64(round_) + put_str(block_hash.hex()) + put_u64(len(voters))
    for v in sorted(voters):
        out += vote(v, height, round_, block_hash)
    return out


def export_block(preimage: bytes, qc: bytes | None) -> str:
    if qc is None:
        return (preimage + put_u64(0)).hex()
    return (preimage + put_u64(1) + qc).hex()


# --------------------------------------------------------------------------
# Vector construction
# --------------------------------------------------------------------------

VALIDATORS = ["V1", "V2", "V3", "V4"]
QUORUM_VOTERS = ["V1", "V2", "V3"]
ZERO32 = bytes(32)


def leader_for(height: int, round_: int) -> str:
    return VALIDATORS[(height + round_) % len(VALIDATORS)]


def build_vectors():
    """Assemble a lifecycle that exercises every payload variant.

    Two certificates are issued, aggregated by a broker, sold as a block to
    a buyer, one is swapped onward, consumed, and retired, and a regulator
    records an audit checkpoint.  The first four transactions double as the
    Merkle-root vectors.
    """
    vectors = {}

    tid1 = derive_tracking_id("G1", "solar", 0, 0)
    tid2 = derive_tracking_id("G1", "solar", 0, 1)
    agg1 = derive_aggregate_id([tid1, tid2])
    vectors["tracking-id.g1-solar-0-0"] = tid1

    tx1 = signed_tx(payload_issue("sunrise-alpha", "voluntary", "solar", 1, 0, 0), "G1", 1)
    tx2 = signed_tx(payload_issue("sunrise-alpha", "voluntary", "solar", 1, 0, 1), "G1", 2)
    tx3 = signed_tx(payload_aggregate("Br1", [tid1, tid2]), "Br1", 1)
    tx4 = signed_tx(payload_trade("aggregate", agg1, "B1"), "Br1", 2)
    tx5 = signed_tx(payload_swap(tid1, "B2"), "B1", 1)
    tx6 = signed_tx(payload_consume(tid1, "B2", 1), "B2", 1)
    tx7 = signed_tx(payload_retire(tid1, "public-claim-purchase"), "B2", 2)
    tx8 = signed_tx(payload_checkpoint(0, 10), "R1", 1)

    vectors["merkle.empty"] = merkle_root([]).hex()
    for i, txs in enumerate([[tx1], [tx1, tx2], [tx1, tx2, tx3], [tx1, tx2, tx3, tx4]], start=1):
        vectors[f"merkle.{i}tx"] = merkle_root(txs).hex()

    genesis_pre = block_preimage(0, ZERO32, merkle_root([]), [], "genesis", 0)
    genesis_hash = hash_block(genesis_pre)
    vectors["genesis.digest"] = genesis_hash.hex()

    b1_txs = [tx1, tx2, tx3]
    b1_pre = block_preimage(1, genesis_hash, merkle_root(b1_txs), b1_txs, leader_for(1, 0), 1)
    b1_hash = hash_block(b1_pre)
    vectors["block1.digest"] = b1_hash.hex()

    b2_txs = [tx4, tx5, tx6, tx7, tx8]
    b2_pre = block_preimage(2, b1_hash, merkle_root(b2_txs), b2_txs, leader_for(2, 0), 2)
    b2_hash = hash_block(b2_pre)
    vectors["block2.digest"] = b2_hash.hex()

    chain_lines = [
        export_block(genesis_pre, None),
        export_block(b1_pre, quorum_cert(1, 0, b1_hash, QUORUM_VOTERS)),
        export_block(b2_pre, quorum_cert(2, 0, b2_hash, QUORUM_VOTERS)),
    ]

    participants = [
        ("G1", "generator", 1, False),
        ("Br1", "broker", 2, False),
        ("B1", "buyer", 4, False),
        ("B2", "buyer", 4, False),
        ("R1", "regulator", 5, False),
        ("V1", "validator", 3, True),
        ("V2", "validator", 3, True),
        ("V3", "validator", 3, True),
        ("V4", "validator", 3, True),
    ]
    participant_lines = [
        f"{pid}\t{role}\t{level}\t{'true' if val else 'false'}\t{public_key_hex(pid)}"
        for pid, role, level, val in participants
    ]

    return vectors, chain_lines, participant_lines


def render_vectors(vectors) -> str:
    return "".join(f"{k}: {v}\n" for k, v in vectors.items())


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dump", action="store_true", help="print recomputed values")
    ap.add_argument("--write", action="store_true", help="write testdata files")
    args = ap.parse_args()

    vectors, chain_lines, participant_lines = build_vectors()
    vec_text = render_vectors(vectors)
    chain_text = "".join(line + "\n" for line in chain_lines)
    parts_text = "".join(line + "\n" for line in participant_lines)

    files = {
        "vectors.txt": vec_text,
        "chain_3block.hex": chain_text,
        "vector_participants.tsv": parts_text,
    }

    if args.dump:
        sys.stdout.write(vec_text)
        return 0

    if args.write:
        os.makedirs(TESTDATA, exist_ok=True)
        for name, text in files.items():
            with open(os.path.join(TESTDATA, name), "w") as fh:
                fh.write(text)
            print(f"wrote {name}")
        return 0

    failures = 0
    for name, expect in files.items():
        path = os.path.join(TESTDATA, name)
        try:
            with open(path) as fh:
                actual = fh.read()
        except FileNotFoundError:
            print(f"MISSING {name}")
            failures += 1
            continue
        if actual == expect:
            print(f"OK      {name}")
        else:
            print(f"MISMATCH {name}")
            failures += 1
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
