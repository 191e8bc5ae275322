"""UTXO state, transactions, the per-block state transition and block layout."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Sequence

from .accumulator import NiPoeProof, hash_to_prime
from .encoding import DecodeError, Reader, enc_int, lp, u32, u64

Key = tuple[bytes, int]

ZERO_HASH = bytes(32)


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class UtxoRecord:
    txid: bytes
    index: int
    amount: int
    owner: str

    @property
    def key(self) -> Key:
        return (self.txid, self.index)

    def serialize(self) -> bytes:
        return lp(self.txid) + u32(self.index) + u64(self.amount) + lp(self.owner.encode())

    @classmethod
    def read(cls, r: Reader) -> "UtxoRecord":
        txid = r.blob()
        index = r.u32()
        amount = r.u64()
        owner = r.blob().decode()
        return cls(txid, index, amount, owner)

    def prime(self, bits: int) -> int:
        """Prime representative; binds the value as well as the key."""
        return hash_to_prime(self.serialize(), bits)


@dataclass(frozen=True)
class Transaction:
    inputs: tuple[Key, ...] = ()
    outputs: tuple[tuple[int, str], ...] = ()
    is_coinbase: bool = False
    tag: bytes = b""  # free data; coinbases carry the block height here

    def serialize(self) -> bytes:
        out = [u32(1 if self.is_coinbase else 0), lp(self.tag), u32(len(self.inputs))]
        for txid, index in self.inputs:
            out.append(lp(txid) + u32(index))
        out.append(u32(len(self.outputs)))
        for amount, owner in self.outputs:
            out.append(u64(amount) + lp(owner.encode()))
        return b"".join(out)

    @classmethod
    def read(cls, r: Reader) -> "Transaction":
        flag = r.u32()
        if flag not in (0, 1):
            raise DecodeError("bad coinbase flag")
        tag = r.blob()
        inputs = tuple((r.blob(), r.u32()) for _ in range(r.u32()))
        outputs = tuple((r.u64(), r.blob().decode()) for _ in range(r.u32()))
        return cls(inputs, outputs, bool(flag), tag)

    @cached_property
    def txid(self) -> bytes:
        return digest(digest(self.serialize()))

    def records(self) -> list[UtxoRecord]:
        return [UtxoRecord(self.txid, i, amount, owner)
                for i, (amount, owner) in enumerate(self.outputs)]


def coinbase(height: int, outputs: Sequence[tuple[int, str]]) -> Transaction:
    return Transaction((), tuple(outputs), True, height.to_bytes(8, "big"))


class UtxoSet:
    """Immutable keyed collection of unspent outputs at a given height."""

    __slots__ = ("_records", "height")

    def __init__(self, records: Iterable[UtxoRecord] = (), height: int = 0):
        self._records: dict[Key, UtxoRecord] = {}
        for rec in records:
            if rec.key in self._records:
                raise ValueError(f"duplicate UTXO key {rec.key!r}")
            self._records[rec.key] = rec
        self.height = height

    @classmethod
    def _wrap(cls, records: dict, height: int) -> "UtxoSet":
        out = cls.__new__(cls)
        out._records = records
        out.height = height
        return out

    def __contains__(self, key) -> bool:
        return key in self._records

    def __getitem__(self, key: Key) -> UtxoRecord:
        return self._records[key]

    def get(self, key: Key):
        return self._records.get(key)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[UtxoRecord]:
        return iter(self._records.values())

    def keys(self):
        return self._records.keys()

    def __eq__(self, other) -> bool:
        if not isinstance(other, UtxoSet):
            return NotImplemented
        return self.height == other.height and self._records == other._records

    def __repr__(self) -> str:
        return f"UtxoSet(height={self.height}, size={len(self)})"

    def total(self) -> int:
        return sum(r.amount for r in self._records.values())

    def apply(self, deleted: Iterable[Key], added: Iterable[UtxoRecord], height: int) -> "UtxoSet":
        records = dict(self._records)
        for key in deleted:
            del records[key]
        for rec in added:
            records[rec.key] = rec
        return UtxoSet._wrap(records, height)

    def primes(self, bits: int) -> list[int]:
        return [rec.prime(bits) for rec in self.sorted_records()]

    def sorted_records(self) -> list[UtxoRecord]:
        return [self._records[k] for k in sorted(self._records)]

    def serialize(self) -> bytes:
        recs = self.sorted_records()
        return u64(self.height) + u32(len(recs)) + b"".join(r.serialize() for r in recs)

    @classmethod
    def read(cls, r: Reader) -> "UtxoSet":
        height = r.u64()
        return cls((UtxoRecord.read(r) for _ in range(r.u32())), height)

    @classmethod
    def deserialize(cls, data: bytes) -> "UtxoSet":
        r = Reader(data)
        out = cls.read(r)
        r.expect_end()
        return out


def validate_tx(tx: Transaction, state: UtxoSet, spent: frozenset | set = frozenset()) -> bool:
    """Reference existence, no double spend and balance. No scripts."""
    if not tx.outputs or any(amount <= 0 for amount, _ in tx.outputs):
        return False
    if tx.is_coinbase:
        return not tx.inputs
    if not tx.inputs or len(set(tx.inputs)) != len(tx.inputs):
        return False
    total_in = 0
    for key in tx.inputs:
        rec = state.get(key)
        if rec is None or key in spent:
            return False
        total_in += rec.amount
    return total_in >= sum(amount for amount, _ in tx.outputs)


class TransitionRejected(Exception):
    def __init__(self, index: int, tx: Transaction, reason: str):
        self.index = index
        self.tx = tx
        self.reason = reason
        super().__init__(f"transaction {index} ({tx.txid.hex()[:16]}) rejected: {reason}")


def state_transition(state: UtxoSet, txs: Sequence[Transaction],
                     height: int | None = None) -> tuple[UtxoSet, list[UtxoRecord], list[UtxoRecord]]:
    """Apply a block's transactions; any invalid one rejects the whole block.

    Inputs must come from the pre-block state, so a block never spends an
    output it creates itself.
    """
    deleted: list[UtxoRecord] = []
    added: list[UtxoRecord] = []
    spent: set[Key] = set()
    for i, tx in enumerate(txs):
        if tx.is_coinbase and i != 0:
            raise TransitionRejected(i, tx, "coinbase must be first")
        if not validate_tx(tx, state, spent):
            raise TransitionRejected(i, tx, "invalid")
        for key in tx.inputs:
            spent.add(key)
            deleted.append(state[key])
        for rec in tx.records():
            if rec.key in state:
                raise TransitionRejected(i, tx, "output key collides with existing UTXO")
            added.append(rec)
    if len({r.key for r in added}) != len(added):
        raise TransitionRejected(len(txs) - 1, txs[-1], "duplicate transaction")
    new_height = state.height + 1 if height is None else height
    return state.apply(spent, added, new_height), deleted, added


def merkle_root(txs: Sequence[Transaction]) -> bytes:
    if not txs:
        return digest(b"")
    level = [digest(tx.serialize()) for tx in txs]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [digest(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


@dataclass(frozen=True)
class BlockHeader:
    prev_hash: bytes
    nonce: int
    accumulator: int
    merkle_root: bytes
    version: int = 1
    timestamp: int = 0  # milliseconds
    difficulty: int = 0  # required leading zero bits of the header hash

    def serialize(self) -> bytes:
        return (u32(self.version) + lp(self.prev_hash) + lp(self.merkle_root)
                + enc_int(self.accumulator) + u64(self.timestamp)
                + u32(self.difficulty) + u32(self.nonce))

    @classmethod
    def read(cls, r: Reader) -> "BlockHeader":
        version = r.u32()
        prev_hash = r.blob()
        root = r.blob()
        acc = r.int()
        timestamp = r.u64()
        difficulty = r.u32()
        nonce = r.u32()
        return cls(prev_hash, nonce, acc, root, version, timestamp, difficulty)

    @classmethod
    def deserialize(cls, data: bytes) -> "BlockHeader":
        r = Reader(data)
        out = cls.read(r)
        r.expect_end()
        return out

    @cached_property
    def hash(self) -> bytes:
        return header_hash(self)


def header_hash(h: BlockHeader) -> bytes:
    return digest(digest(h.serialize()))


def meets_difficulty(h: BlockHeader, difficulty: int | None = None) -> bool:
    bits = h.difficulty if difficulty is None else difficulty
    return int.from_bytes(header_hash(h), "big") >> (256 - bits) == 0 if bits else True


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    height: int
    acc_intermediate: int
    proof_del: NiPoeProof
    proof_add: NiPoeProof
    transactions: tuple[Transaction, ...] = field(default=())

    @property
    def hash(self) -> bytes:
        return self.header.hash

    def serialize(self) -> bytes:
        out = [lp(self.header.serialize()), u64(self.height), enc_int(self.acc_intermediate),
               enc_int(self.proof_del.Q), enc_int(self.proof_add.Q), u32(len(self.transactions))]
        out.extend(lp(tx.serialize()) for tx in self.transactions)
        return b"".join(out)

    @classmethod
    def read(cls, r: Reader) -> "Block":
        header = BlockHeader.deserialize(r.blob())
        height = r.u64()
        acc_prime = r.int()
        pd, pa = NiPoeProof(r.int()), NiPoeProof(r.int())
        txs = []
        for _ in range(r.u32()):
            inner = Reader(r.blob())
            txs.append(Transaction.read(inner))
            inner.expect_end()
        return cls(header, height, acc_prime, pd, pa, tuple(txs))

    @classmethod
    def deserialize(cls, data: bytes) -> "Block":
        r = Reader(data)
        out = cls.read(r)
        r.expect_end()
        return out
