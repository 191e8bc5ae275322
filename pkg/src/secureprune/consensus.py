"""Mining, block validation, chain selection, snapshots, pruning and bootstrap."""

from __future__ import annotations

import math
import struct
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Sequence

from . import accumulator as acc
from .accumulator import GroupParams, MembershipWitness, NiPoeProof
from .encoding import DecodeError, Reader, enc_int, lp, u32, u64
from .ledger import (ZERO_HASH, Block, BlockHeader, Key, Transaction, TransitionRejected,
                     UtxoRecord, UtxoSet, coinbase, digest, meets_difficulty, merkle_root,
                     state_transition)

UNKNOWN_PARENT = "unknown-parent"
BAD_TX = "bad-tx"
BAD_MERKLE = "bad-merkle"
BAD_PROOF_DEL = "bad-proof-del"
BAD_PROOF_ADD = "bad-proof-add"
BAD_POW = "bad-pow"

MAX_ORPHANS = 64
SNAPSHOT_MAGIC = b"SPSN"
HEADERS_MAGIC = b"SPHC"


class ConsensusError(Exception):
    pass


class MiningError(ConsensusError):
    pass


class BootstrapError(ConsensusError):
    pass


class HeaderChainError(ConsensusError):
    def __init__(self, height: int, message: str):
        self.height = height
        super().__init__(f"header {height}: {message}")


class SnapshotMismatch(ConsensusError):
    def __init__(self, height: int, message: str):
        self.height = height
        super().__init__(f"snapshot at height {height}: {message}")


class NoFinalityError(ConsensusError):
    pass


@dataclass(frozen=True)
class PruneConfig:
    delta_s: int
    k: int

    def __post_init__(self):
        if self.delta_s < 1 or self.k < 1:
            raise ValueError("delta_s and k must both be at least 1")


DEFAULT_ALLOCATION = tuple((1000, f"genesis-{i}") for i in range(8))


@dataclass(frozen=True)
class ChainParams:
    group: GroupParams
    difficulty: int = 0
    reward: int = 50
    max_block_txs: int = 500
    allocation: tuple[tuple[int, str], ...] = DEFAULT_ALLOCATION

    @property
    def prime_bits(self) -> int:
        return self.group.prime_bits

    @cached_property
    def genesis(self) -> Block:
        tx = coinbase(0, self.allocation)
        primes = [r.prime(self.prime_bits) for r in tx.records()]
        g = acc.acc_empty(self.group)
        A0, proof_add = acc.batch_add(self.group, g, primes)
        header = BlockHeader(ZERO_HASH, 0, A0, merkle_root([tx]), difficulty=self.difficulty)
        header = grind(header)
        return Block(header, 0, g, acc.nipoe_prove(self.group, g, 1, g), proof_add, (tx,))


def grind(header: BlockHeader, max_nonce: int = 1 << 32) -> BlockHeader:
    """Search the nonce space for a header hash with enough leading zeros."""
    if header.difficulty == 0:
        return header
    prefix = replace(header, nonce=0).serialize()[:-4]
    shift = 256 - header.difficulty
    for nonce in range(max_nonce):
        if int.from_bytes(digest(digest(prefix + struct.pack(">I", nonce))), "big") >> shift == 0:
            return replace(header, nonce=nonce)
    raise MiningError("nonce space exhausted")


@dataclass(frozen=True)
class Snapshot:
    height: int
    identifier: int
    state: UtxoSet

    def serialize(self) -> bytes:
        return SNAPSHOT_MAGIC + u32(1) + u64(self.height) + enc_int(self.identifier) + self.state.serialize()

    @classmethod
    def deserialize(cls, data: bytes) -> "Snapshot":
        if data[:4] != SNAPSHOT_MAGIC:
            raise DecodeError("not a snapshot file")
        r = Reader(data[4:])
        if r.u32() != 1:
            raise DecodeError("unsupported snapshot version")
        height = r.u64()
        identifier = r.int()
        state = UtxoSet.read(r)
        r.expect_end()
        return cls(height, identifier, state)

    def recompute(self, group: GroupParams) -> int:
        return acc.accumulate(group, self.state.primes(group.prime_bits))


@dataclass
class NodeState:
    """Value-style node state: operations return successors instead of mutating."""
    params: ChainParams
    headers: list[BlockHeader]
    bodies: dict[int, Block]
    state: UtxoSet
    witnesses: dict[Key, MembershipWitness] | None = None
    undo: dict[int, tuple[list[UtxoRecord], list[Key]]] = field(default_factory=dict)
    snapshots: list[Snapshot] = field(default_factory=list)
    prune_boundary: int = 0
    mempool: list[Transaction] = field(default_factory=list)

    @classmethod
    def genesis(cls, params: ChainParams, track_witnesses: bool = False) -> "NodeState":
        block = params.genesis
        state = UtxoSet(block.transactions[0].records(), 0)
        node = cls(params, [block.header], {0: block}, state)
        return node.with_witnesses() if track_witnesses else node

    @property
    def height(self) -> int:
        return len(self.headers) - 1

    @property
    def tip(self) -> BlockHeader:
        return self.headers[-1]

    @property
    def tip_hash(self) -> bytes:
        return self.headers[-1].hash

    @property
    def accumulator(self) -> int:
        return self.headers[-1].accumulator

    def with_witnesses(self) -> "NodeState":
        recs = self.state.sorted_records()
        table = acc.witnesses_from_scratch(self.params.group,
                                           [r.prime(self.params.prime_bits) for r in recs])
        return replace(self, witnesses={r.key: table[r.prime(self.params.prime_bits)] for r in recs})


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: str | None = None
    node: NodeState | None = None

    def __bool__(self) -> bool:
        return self.ok


def _reject(reason: str) -> Verdict:
    return Verdict(False, reason)


def validate_block(node: NodeState, block: Block) -> Verdict:
    """Check a block against the tip of ``node``; on success carry the successor state."""
    params = node.params
    group = params.group
    if block.header.prev_hash != node.tip_hash or block.height != node.height + 1:
        return _reject(UNKNOWN_PARENT)
    txs = block.transactions
    if not txs or not txs[0].is_coinbase or sum(a for a, _ in txs[0].outputs) > params.reward:
        return _reject(BAD_TX)
    try:
        new_state, S_d, S_a = state_transition(node.state, txs, block.height)
    except TransitionRejected:
        return _reject(BAD_TX)
    if block.header.merkle_root != merkle_root(txs):
        return _reject(BAD_MERKLE)
    bits = params.prime_bits
    d_primes = [r.prime(bits) for r in S_d]
    a_primes = [r.prime(bits) for r in S_a]
    A_prime = block.acc_intermediate
    if not acc.nipoe_verify(group, math.prod(d_primes), A_prime, node.accumulator, block.proof_del):
        return _reject(BAD_PROOF_DEL)
    if not acc.nipoe_verify(group, math.prod(a_primes), A_prime, block.header.accumulator,
                            block.proof_add):
        return _reject(BAD_PROOF_ADD)
    if block.header.difficulty != params.difficulty or not meets_difficulty(block.header):
        return _reject(BAD_POW)

    witnesses = node.witnesses
    if witnesses is not None:
        witnesses = acc.update_witnesses_after_delete(group, A_prime, witnesses, d_primes)
        witnesses = acc.update_witnesses_after_add(group, witnesses, a_primes)
        fresh = acc.witnesses_for_added(group, A_prime, a_primes)
        witnesses.update((r.key, fresh[p]) for r, p in zip(S_a, a_primes))
    spent = {r.key for r in S_d}
    included = {tx.txid for tx in txs}
    mempool = [tx for tx in node.mempool
               if tx.txid not in included and not spent.intersection(tx.inputs)]
    successor = replace(
        node,
        headers=node.headers + [block.header],
        bodies={**node.bodies, block.height: block},
        state=new_state,
        witnesses=witnesses,
        undo={**node.undo, block.height: (S_d, [r.key for r in S_a])},
        mempool=mempool,
    )
    return Verdict(True, None, successor)


def mine_block(node: NodeState, *, miner: str = "miner", timestamp: int = 0,
               txs: Sequence[Transaction] | None = None, grind_nonce: bool = True,
               nonce: int = 0) -> Block:
    """Assemble a block on the tip of ``node``.

    With ``grind_nonce`` the nonce is searched against the chain difficulty;
    otherwise ``nonce`` is stamped as-is (simulation mode, difficulty 0).
    Transactions that break the state transition are dropped and selection retried.
    """
    params = node.params
    group = params.group
    height = node.height + 1
    pool = list(node.mempool if txs is None else txs)[:params.max_block_txs]
    while True:
        block_txs = [coinbase(height, [(params.reward, miner)])] + pool
        try:
            _, S_d, S_a = state_transition(node.state, block_txs, height)
            break
        except TransitionRejected as exc:
            del pool[exc.index - 1]

    bits = params.prime_bits
    table = node.witnesses if node.witnesses is not None else node.with_witnesses().witnesses
    deleted = [(r.prime(bits), table[r.key].w) for r in S_d]
    A_prime, proof_del = acc.batch_del(group, node.accumulator, deleted)
    A_new, proof_add = acc.batch_add(group, A_prime, [r.prime(bits) for r in S_a])
    header = BlockHeader(node.tip_hash, nonce, A_new, merkle_root(block_txs),
                         timestamp=timestamp, difficulty=params.difficulty)
    if grind_nonce:
        header = grind(header)
    return Block(header, height, A_prime, proof_del, proof_add, tuple(block_txs))


def select_chain(candidates: Sequence[Sequence[BlockHeader]]):
    """Longest chain wins; among equals the earliest candidate (first received)."""
    if not candidates:
        raise ValueError("no candidate chains")
    return max(candidates, key=len)


def prune_boundary_for(height: int, cfg: PruneConfig) -> int:
    """Boundary a node reaches at ``height`` on a single chain: newest k-confirmed snapshot."""
    p = (height - cfg.k) // cfg.delta_s * cfg.delta_s
    return p if p >= cfg.delta_s else 0


def max_storage_blocks(cfg: PruneConfig) -> int:
    return cfg.delta_s + cfg.k


def release_snapshot(node: NodeState, cfg: PruneConfig) -> Snapshot | None:
    h = node.height
    if h == 0 or h % cfg.delta_s:
        return None
    return Snapshot(h, node.accumulator, node.state)


def _confirmed_snapshot(snapshots: Sequence[Snapshot], height: int, k: int) -> Snapshot | None:
    confirmed = [s for s in snapshots if height - s.height >= k]
    return confirmed[-1] if confirmed else None


def try_prune(node: NodeState, cfg: PruneConfig) -> tuple[NodeState, int]:
    """Drop bodies below the newest snapshot that has k blocks on top of it."""
    snap = _confirmed_snapshot(node.snapshots, node.height, cfg.k)
    if snap is None or snap.height <= node.prune_boundary:
        return node, 0
    p = snap.height
    bodies = {h: b for h, b in node.bodies.items() if h >= p}
    undo = {h: u for h, u in node.undo.items() if h >= p}
    snapshots = [s for s in node.snapshots if s.height >= p]
    pruned = len(node.bodies) - len(bodies)
    return replace(node, bodies=bodies, undo=undo, snapshots=snapshots, prune_boundary=p), pruned


def _advance(node: NodeState, block: Block, prune: PruneConfig | None) -> Verdict:
    verdict = validate_block(node, block)
    if not verdict or prune is None:
        return verdict
    nxt = verdict.node
    snap = release_snapshot(nxt, prune)
    if snap is not None:
        nxt = replace(nxt, snapshots=nxt.snapshots + [snap])
    nxt, _ = try_prune(nxt, prune)
    return replace(verdict, node=nxt)


def _rewind(node: NodeState, height: int) -> NodeState:
    state = node.state
    for h in range(node.height, height, -1):
        deleted, added = node.undo[h]
        state = state.apply(added, deleted, h - 1)
    return replace(
        node,
        headers=node.headers[:height + 1],
        bodies={h: b for h, b in node.bodies.items() if h <= height},
        undo={h: u for h, u in node.undo.items() if h <= height},
        snapshots=[s for s in node.snapshots if s.height <= height],
        state=state,
        witnesses=None,
    )


class FullNode:
    """A node actor: owns a NodeState plus side branches and orphan blocks."""

    def __init__(self, params: ChainParams, prune: PruneConfig | None = None,
                 track_witnesses: bool = False, node: NodeState | None = None):
        self.params = params
        self.prune = prune
        self.track_witnesses = track_witnesses
        self.node = node if node is not None else NodeState.genesis(params, track_witnesses)
        self.blocks: dict[bytes, Block] = {h.hash: self.node.bodies[i]
                                           for i, h in enumerate(self.node.headers)
                                           if i in self.node.bodies}
        self.orphans: OrderedDict[bytes, Block] = OrderedDict()

    @property
    def height(self) -> int:
        return self.node.height

    @property
    def tip_hash(self) -> bytes:
        return self.node.tip_hash

    def _adopt(self, node: NodeState) -> None:
        if self.track_witnesses and node.witnesses is None:
            node = node.with_witnesses()
        self.node = node
        if self.prune is not None and node.prune_boundary:
            self.blocks = {h: b for h, b in self.blocks.items() if b.height >= node.prune_boundary}

    def receive(self, block: Block) -> str:
        h = block.hash
        if h in self.blocks or h in self.orphans:
            return "duplicate"
        parent = block.header.prev_hash
        if parent == self.node.tip_hash:
            verdict = _advance(self.node, block, self.prune)
            if not verdict:
                return f"rejected:{verdict.reason}"
            self.blocks[h] = block
            self._adopt(verdict.node)
            status = "accepted"
        elif parent in self.blocks:
            if block.header.difficulty != self.params.difficulty or not meets_difficulty(block.header):
                return f"rejected:{BAD_POW}"
            self.blocks[h] = block
            status = self._maybe_reorg(block)
        else:
            self.orphans[h] = block
            while len(self.orphans) > MAX_ORPHANS:
                self.orphans.popitem(last=False)
            return "orphan"
        self._connect_orphans()
        return status

    def _connect_orphans(self) -> None:
        progress = True
        while progress:
            progress = False
            for h, blk in list(self.orphans.items()):
                if blk.header.prev_hash in self.blocks:
                    del self.orphans[h]
                    self.receive(blk)
                    progress = True

    def _maybe_reorg(self, block: Block) -> str:
        if block.height <= self.node.height:
            return "side"
        branch = [block]
        headers = self.node.headers
        while True:
            parent = self.blocks.get(branch[-1].header.prev_hash)
            if parent is None:
                return "side"
            if parent.height < len(headers) and headers[parent.height].hash == parent.hash:
                fork = parent.height
                break
            branch.append(parent)
        if any(h not in self.node.undo for h in range(fork + 1, self.node.height + 1)):
            return "side"  # fork point lies below what this node can rewind
        node = _rewind(self.node, fork)
        for blk in reversed(branch):
            verdict = _advance(node, blk, self.prune)
            if not verdict:
                self.blocks.pop(blk.hash, None)
                return f"rejected:{verdict.reason}"
            node = verdict.node
        self._adopt(node)
        return "reorg"

    def offer_snapshot(self, k: int) -> Snapshot | None:
        return _confirmed_snapshot(self.node.snapshots, self.node.height, k)

    def get_block(self, height: int) -> Block | None:
        return self.node.bodies.get(height)

    def mine(self, **kwargs) -> Block:
        block = mine_block(self.node, **kwargs)
        status = self.receive(block)
        if status != "accepted":
            raise MiningError(f"own block not accepted: {status}")
        return block


def replay(params: ChainParams, blocks: Sequence[Block]) -> NodeState:
    """Archival replay from genesis; ``blocks`` starts at height 1."""
    node = NodeState.genesis(params)
    for block in blocks:
        verdict = validate_block(node, block)
        if not verdict:
            raise ConsensusError(f"block {block.height} rejected: {verdict.reason}")
        node = verdict.node
    return node


def verify_header_chain(headers: Sequence[BlockHeader], params: ChainParams | None = None) -> None:
    if not headers:
        raise HeaderChainError(0, "empty header chain")
    if params is not None and headers[0] != params.genesis.header:
        raise HeaderChainError(0, "genesis mismatch")
    difficulty = headers[0].difficulty if params is None else params.difficulty
    for i, h in enumerate(headers):
        if i and h.prev_hash != headers[i - 1].hash:
            raise HeaderChainError(i, "broken hash link")
        if h.difficulty != difficulty or not meets_difficulty(h):
            raise HeaderChainError(i, "insufficient proof of work")


def verify_snapshot(group: GroupParams, snap: Snapshot, headers: Sequence[BlockHeader]) -> None:
    p = snap.height
    if not 0 < p < len(headers):
        raise SnapshotMismatch(p, "height outside the header chain")
    if snap.state.height != p:
        raise SnapshotMismatch(p, "state height differs from snapshot height")
    if snap.identifier != headers[p].accumulator:
        raise SnapshotMismatch(p, "identifier differs from header accumulator")
    if snap.recompute(group) != snap.identifier:
        raise SnapshotMismatch(p, "state does not match identifier")


def bootstrap(params: ChainParams, peers: Sequence[FullNode], prune: PruneConfig,
              track_witnesses: bool = False) -> FullNode:
    """Join via the newest k-confirmed snapshot, the full header chain and the tailchain.

    Peers are tried longest header chain first; any verification failure moves
    on to the next peer.
    """
    errors = []
    for peer in sorted(peers, key=lambda p: -p.height):
        try:
            snap = peer.offer_snapshot(prune.k)
            headers = list(peer.node.headers)
            verify_header_chain(headers, params)
            if snap is not None:
                verify_snapshot(params.group, snap, headers)
                node = NodeState(params, headers[:snap.height + 1], {}, snap.state,
                                 snapshots=[snap], prune_boundary=snap.height)
            else:
                node = NodeState.genesis(params)
            for h in range(node.height + 1, len(headers)):
                block = peer.get_block(h)
                if block is None or block.hash != headers[h].hash:
                    raise BootstrapError(f"peer cannot serve block {h}")
                verdict = _advance(node, block, prune)
                if not verdict:
                    raise BootstrapError(f"tailchain block {h} rejected: {verdict.reason}")
                node = verdict.node
        except (ConsensusError, DecodeError) as exc:
            errors.append(str(exc))
            continue
        out = FullNode(params, prune, track_witnesses, node=node)
        if track_witnesses:
            out._adopt(node)
        return out
    raise BootstrapError("no peer could bootstrap: " + "; ".join(errors or ["no peers"]))


def attacker_success_probability(q: float, z: int) -> float:
    """Probability an attacker with hashrate share q ever catches up from z blocks behind."""
    p = 1.0 - q
    if q >= p:
        return 1.0
    lam = z * q / p
    total = 1.0
    poisson = math.exp(-lam)
    for k in range(z + 1):
        if k:
            poisson *= lam / k
        total -= poisson * (1.0 - (q / p) ** (z - k))
    return max(total, 0.0)


def confirmations_required(q: float, p_target: float, z_max: int = 100_000) -> int:
    if not 0 <= q < 0.5:
        raise NoFinalityError(f"attacker share {q} leaves no finality")
    if not 0 < p_target < 1:
        raise ValueError("p_target must lie in (0, 1)")
    for z in range(1, z_max + 1):
        if attacker_success_probability(q, z) < p_target:
            return z
    raise NoFinalityError(f"no z <= {z_max} reaches {p_target}")


# -- files ------------------------------------------------------------------

def write_snapshot(path, snap: Snapshot) -> None:
    Path(path).write_bytes(snap.serialize())


def read_snapshot(path) -> Snapshot:
    return Snapshot.deserialize(Path(path).read_bytes())


def serialize_headers(group: GroupParams, headers: Sequence[BlockHeader]) -> bytes:
    out = [HEADERS_MAGIC, u32(1), enc_int(group.modulus), enc_int(group.generator),
           u32(group.prime_bits), u32(len(headers))]
    out.extend(lp(h.serialize()) for h in headers)
    return b"".join(out)


def deserialize_headers(data: bytes) -> tuple[GroupParams, list[BlockHeader]]:
    if data[:4] != HEADERS_MAGIC:
        raise DecodeError("not a header chain file")
    r = Reader(data[4:])
    if r.u32() != 1:
        raise DecodeError("unsupported header file version")
    modulus, generator, bits = r.int(), r.int(), r.u32()
    headers = [BlockHeader.deserialize(r.blob()) for _ in range(r.u32())]
    r.expect_end()
    try:
        group = GroupParams(modulus, generator, prime_bits=bits)
    except (ValueError, acc.AccumulatorError) as exc:
        raise DecodeError(f"bad group parameters: {exc}") from None
    return group, headers


def write_headers(path, group: GroupParams, headers: Sequence[BlockHeader]) -> None:
    Path(path).write_bytes(serialize_headers(group, headers))


def read_headers(path) -> tuple[GroupParams, list[BlockHeader]]:
    return deserialize_headers(Path(path).read_bytes())
