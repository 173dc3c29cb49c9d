"""Per-agent replicated hash-chained ledger.

Every agent publishes one block per communication round containing its
control-state transaction. Blocks chain per producer: each block's
prev_hash is the digest of the producer's previous block, with a shared
genesis carrying the all-zero predecessor digest. Replicas append only
blocks that pass hash, linkage, round-monotonicity, and (when enabled)
physics-contract checks backed by a majority vote.

Canonical serialization (the byte layout that is hashed and signed), all
integers and floats little-endian:

    transaction := "TX" | agent_id u32 | round u64 | t f64 | payload 8*f64
    signed tx   := transaction | hmac_sha256(agent_key, transaction)
    block       := "BLK" | height u64 | prev_hash 32B | timestamp f64
                   | producer u32 | round u64 | n_txs u32 | signed txs...

Payload field order: v_meas, v_bar, i_amp, i_pu, det_v, delta, dm1_prev,
dm2_prev. Signing keys are emulated per-agent identity keys (deterministic
digests), sufficient for tamper and impersonation modeling without a PKI.
"""

import hashlib
import hmac
import json
import math
import struct
from dataclasses import dataclass, field

from .errors import EmptyBlock, NonFinitePayload, StaleRound

PAYLOAD_FIELDS = (
    "v_meas", "v_bar", "i_amp", "i_pu", "det_v", "delta", "dm1_prev", "dm2_prev",
)

GENESIS_PREV = b"\x00" * 32

_TX_HEAD = struct.Struct("<IQd")
_TX_PAYLOAD = struct.Struct(f"<{len(PAYLOAD_FIELDS)}d")
_BLK_HEAD = struct.Struct("<Q32sdIQI")


def agent_key(agent_id):
    """Emulated identity key for an agent (deterministic digest)."""
    return hashlib.sha256(f"gridledger-agent-{agent_id}".encode()).digest()


@dataclass(frozen=True)
class Transaction:
    agent_id: int
    round: int
    t: float
    payload: dict
    signature: bytes = b""

    def canonical_bytes(self):
        vals = [float(self.payload[f]) for f in PAYLOAD_FIELDS]
        return (b"TX" + _TX_HEAD.pack(self.agent_id, self.round, self.t)
                + _TX_PAYLOAD.pack(*vals))

    def wire_bytes(self):
        return self.canonical_bytes() + self.signature


def sign(tx_bytes, agent_id):
    return hmac.new(agent_key(agent_id), tx_bytes, hashlib.sha256).digest()


def make_transaction(agent_id, round_idx, t, payload, last_round=None):
    """Canonical signed transaction from an agent's published state.

    ``payload`` must supply every field in PAYLOAD_FIELDS with finite
    values. ``last_round`` enforces per-producer round monotonicity.
    """
    missing = [f for f in PAYLOAD_FIELDS if f not in payload]
    if missing:
        raise NonFinitePayload(f"payload missing fields {missing}")
    for f in PAYLOAD_FIELDS:
        v = float(payload[f])
        if not math.isfinite(v):
            raise NonFinitePayload(f"payload field {f} = {v!r} is not finite")
    if last_round is not None and round_idx <= last_round:
        raise StaleRound(
            f"agent {agent_id}: round {round_idx} does not advance past {last_round}")
    tx = Transaction(agent_id=int(agent_id), round=int(round_idx), t=float(t),
                     payload={f: float(payload[f]) for f in PAYLOAD_FIELDS})
    sig = sign(tx.canonical_bytes(), agent_id)
    return Transaction(tx.agent_id, tx.round, tx.t, tx.payload, sig)


def verify_signature(tx: Transaction):
    return hmac.compare_digest(tx.signature, sign(tx.canonical_bytes(), tx.agent_id))


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    timestamp: float
    producer: int
    round: int
    txs: tuple
    hash: bytes = b""

    def header_bytes(self):
        return b"BLK" + _BLK_HEAD.pack(self.height, self.prev_hash, self.timestamp,
                                       self.producer, self.round, len(self.txs))

    def canonical_bytes(self):
        return self.header_bytes() + b"".join(tx.wire_bytes() for tx in self.txs)


def hash_block(block: Block):
    """256-bit digest of the canonical byte serialization."""
    return hashlib.sha256(block.canonical_bytes()).digest()


def seal_block(txs, prev_hash, producer, height, round_idx,
               seal_t=None, mining_delay=0.0):
    """Seal transactions into a block.

    Mining is emulated as a pure delivery delay: the block timestamp is the
    seal time plus ``mining_delay`` and peers should receive it then.
    """
    txs = tuple(txs)
    if not txs:
        raise EmptyBlock("a block must carry at least one transaction")
    if seal_t is None:
        seal_t = txs[0].t
    blk = Block(height=int(height), prev_hash=bytes(prev_hash),
                timestamp=float(seal_t) + float(mining_delay),
                producer=int(producer), round=int(round_idx), txs=txs)
    return Block(blk.height, blk.prev_hash, blk.timestamp, blk.producer,
                 blk.round, blk.txs, hash_block(blk))


def genesis_block(producer, t=0.0, payload=None):
    """Shared initial block for one producer chain (all-zero predecessor)."""
    if payload is None:
        payload = {f: 0.0 for f in PAYLOAD_FIELDS}
    tx = make_transaction(producer, 0, t, payload)
    return seal_block([tx], GENESIS_PREV, producer, height=0, round_idx=0, seal_t=t)


ACCEPT = "accept"
REJECT = "reject"

REASON_OK = "ok"
REASON_HASH = "hash_mismatch"
REASON_PHYSICS = "physics_violation"
REASON_STALE = "stale_round"
REASON_MISSING = "missing_vote"


@dataclass(frozen=True)
class Verdict:
    voter: int
    block_ref: bytes
    decision: str
    reason: str


def validate_block(block: Block, local_chain, contract=None):
    """One node's verdict on an incoming block.

    Checks, in order: recomputed digest matches the stored one, signatures
    verify, prev_hash continues the local replica of the producer's chain,
    the round advances, and finally the physics contract (a callable on the
    block returning a violation reason or None).
    """
    def verdict(voter, decision, reason):
        return Verdict(voter=voter, block_ref=block.hash, decision=decision, reason=reason)

    voter = -1  # caller substitutes its id via dataclasses.replace or wrapper
    if hash_block(block) != block.hash:
        return verdict(voter, REJECT, REASON_HASH)
    if not all(verify_signature(tx) for tx in block.txs):
        return verdict(voter, REJECT, REASON_HASH)
    tip = local_chain[-1] if local_chain else None
    if tip is None:
        if block.prev_hash != GENESIS_PREV:
            return verdict(voter, REJECT, REASON_HASH)
    else:
        if block.prev_hash != tip.hash:
            return verdict(voter, REJECT, REASON_HASH)
        if block.round <= tip.round:
            return verdict(voter, REJECT, REASON_STALE)
    if contract is not None:
        reason = contract(block)
        if reason:
            return verdict(voter, REJECT, REASON_PHYSICS)
    return verdict(voter, ACCEPT, REASON_OK)


def commit_round(verdicts):
    """Majority acceptance: committed iff approvals strictly exceed
    rejections (ties reject, fail-safe)."""
    n_a = sum(1 for v in verdicts if v.decision == ACCEPT)
    n_r = sum(1 for v in verdicts if v.decision == REJECT)
    return n_a > n_r


def verify_chain(chain):
    """Walk one producer chain; return the lowest invalid height, or None.

    A height is invalid when its stored digest does not match the
    recomputed one, its prev_hash does not equal the predecessor's digest
    (all-zero for genesis), or a signature fails.
    """
    prev = GENESIS_PREV
    for i, block in enumerate(chain):
        if block.height != i:
            return i
        if block.prev_hash != prev:
            return i
        if hash_block(block) != block.hash:
            return i
        if not all(verify_signature(tx) for tx in block.txs):
            return i
        prev = block.hash
    return None


class Replica:
    """One node's copy of every producer chain."""

    def __init__(self, owner, producers):
        self.owner = owner
        self.chains = {p: [] for p in producers}

    def tip(self, producer):
        chain = self.chains[producer]
        return chain[-1] if chain else None

    def tip_hash(self, producer):
        t = self.tip(producer)
        return t.hash if t is not None else GENESIS_PREV

    def append(self, block: Block):
        self.chains[block.producer].append(block)

    def dump_lines(self):
        """Line-delimited dump of all chains, ordered by (producer, height)."""
        lines = []
        for producer in sorted(self.chains):
            for b in self.chains[producer]:
                lines.append(json.dumps({
                    "height": b.height,
                    "producer": b.producer,
                    "round": b.round,
                    "timestamp": b.timestamp,
                    "prev_hash": b.prev_hash.hex(),
                    "hash": b.hash.hex(),
                    "txs": [{
                        "agent_id": tx.agent_id,
                        "round": tx.round,
                        "t": tx.t,
                        "payload": {f: tx.payload[f] for f in PAYLOAD_FIELDS},
                        "sig": tx.signature.hex(),
                    } for tx in b.txs],
                }, sort_keys=True))
        return lines

    def dump(self, path):
        with open(path, "w") as fh:
            fh.write("\n".join(self.dump_lines()) + "\n")


def load_dump(path):
    """Parse a replica dump back into {producer: [Block, ...]} chains."""
    chains = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            txs = tuple(
                Transaction(t["agent_id"], t["round"], t["t"],
                            {f: t["payload"][f] for f in PAYLOAD_FIELDS},
                            bytes.fromhex(t["sig"]))
                for t in rec["txs"])
            blk = Block(rec["height"], bytes.fromhex(rec["prev_hash"]),
                        rec["timestamp"], rec["producer"], rec["round"], txs,
                        bytes.fromhex(rec["hash"]))
            chains.setdefault(rec["producer"], []).append(blk)
    for chain in chains.values():
        chain.sort(key=lambda b: b.height)
    return chains
