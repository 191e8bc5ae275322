import hashlib

import pytest
from hypothesis import given, settings, strategies as st

from secureprune.accumulator import NiPoeProof
from secureprune.encoding import DecodeError, Reader, enc_int, int_to_bytes, lp, u32
from secureprune.ledger import (Block, BlockHeader, Transaction, TransitionRejected, UtxoRecord,
                                UtxoSet, coinbase, header_hash, meets_difficulty, merkle_root,
                                state_transition, validate_tx)

sha = lambda b: hashlib.sha256(b).digest()

records = st.builds(UtxoRecord, st.binary(min_size=32, max_size=32), st.integers(0, 2**32 - 1),
                    st.integers(0, 2**64 - 1), st.text(max_size=20))
keys = st.tuples(st.binary(min_size=32, max_size=32), st.integers(0, 2**32 - 1))
transactions = st.builds(Transaction, st.lists(keys, max_size=4).map(tuple),
                         st.lists(st.tuples(st.integers(1, 2**64 - 1), st.text(max_size=8)),
                                  max_size=4).map(tuple),
                         st.booleans(), st.binary(max_size=8))


def genesis_state():
    tx = coinbase(0, [(100, "alice"), (50, "bob"), (25, "carol")])
    return UtxoSet(tx.records(), 0), tx.records()


class TestEncoding:
    def test_int_bytes(self):
        assert int_to_bytes(0) == b"" and int_to_bytes(255) == b"\xff"
        assert int_to_bytes(256) == b"\x01\x00"
        with pytest.raises(ValueError):
            int_to_bytes(-1)

    @given(st.integers(0, 2**2100))
    def test_int_round_trip(self, n):
        r = Reader(enc_int(n))
        assert r.int() == n and r.done()

    def test_non_minimal_rejected(self):
        with pytest.raises(DecodeError):
            Reader(lp(b"\x00\x01")).int()

    def test_truncation_and_trailing(self):
        with pytest.raises(DecodeError):
            Reader(u32(5) + b"abc").blob()
        r = Reader(u32(7) + b"z")
        r.u32()
        with pytest.raises(DecodeError):
            r.expect_end()


class TestSerialization:
    @given(records)
    def test_record_round_trip(self, rec):
        r = Reader(rec.serialize())
        assert UtxoRecord.read(r) == rec and r.done()

    @given(transactions)
    @settings(max_examples=50)
    def test_transaction_round_trip(self, tx):
        r = Reader(tx.serialize())
        back = Transaction.read(r)
        assert back == tx and back.txid == tx.txid

    @given(st.lists(records, max_size=6, unique_by=lambda r: r.key), st.integers(0, 2**40))
    @settings(max_examples=50)
    def test_utxo_set_canonical(self, recs, height):
        a = UtxoSet(recs, height)
        b = UtxoSet(reversed(recs), height)
        assert a.serialize() == b.serialize()
        assert UtxoSet.deserialize(a.serialize()) == a

    def test_header_and_block_round_trip(self):
        tx = coinbase(1, [(50, "m")])
        header = BlockHeader(bytes(32), 7, 123456789, merkle_root([tx]), timestamp=1000, difficulty=3)
        assert BlockHeader.deserialize(header.serialize()) == header
        block = Block(header, 1, 99, NiPoeProof(5), NiPoeProof(6), (tx,))
        back = Block.deserialize(block.serialize())
        assert back == block and back.hash == header.hash
        with pytest.raises(DecodeError):
            Block.deserialize(block.serialize() + b"\x00")
        with pytest.raises(DecodeError):
            Block.deserialize(block.serialize()[:-3])

    def test_header_hash_is_double_sha(self):
        header = BlockHeader(b"p", 1, 2, b"r")
        assert header.hash == header_hash(header) == sha(sha(header.serialize()))

    def test_txid_binds_every_field(self):
        base = Transaction(((bytes(32), 0),), ((5, "a"),))
        variants = [Transaction(((bytes(32), 1),), ((5, "a"),)),
                    Transaction(((bytes(32), 0),), ((6, "a"),)),
                    Transaction(((bytes(32), 0),), ((5, "b"),)),
                    Transaction(((bytes(32), 0),), ((5, "a"),), tag=b"x")]
        assert len({base.txid, *(v.txid for v in variants)}) == 5

    def test_coinbase_ids_differ_by_height(self):
        assert coinbase(1, [(50, "m")]).txid != coinbase(2, [(50, "m")]).txid


class TestMerkle:
    def test_empty_and_single(self):
        tx = coinbase(0, [(1, "a")])
        assert merkle_root([]) == sha(b"")
        assert merkle_root([tx]) == sha(tx.serialize())

    def test_odd_level_duplicates_last(self):
        txs = [coinbase(i, [(1, "a")]) for i in range(3)]
        a, b, c = (sha(t.serialize()) for t in txs)
        assert merkle_root(txs) == sha(sha(a + b) + sha(c + c))

    def test_order_matters(self):
        txs = [coinbase(i, [(1, "a")]) for i in range(2)]
        assert merkle_root(txs) != merkle_root(txs[::-1])


class TestStateTransition:
    def test_valid_transfer(self):
        state, (alice, bob, _) = genesis_state()
        tx = Transaction((alice.key,), ((60, "dave"), (40, "alice")))
        cb = coinbase(1, [(50, "miner")])
        new, deleted, added = state_transition(state, [cb, tx])
        assert deleted == [alice]
        assert added == cb.records() + tx.records()
        assert new.height == 1 and alice.key not in new and len(new) == 5
        assert state.height == 0 and alice.key in state  # pre-state untouched

    def test_fee_allowed_overspend_rejected(self):
        state, (alice, *_) = genesis_state()
        assert validate_tx(Transaction((alice.key,), ((99, "x"),)), state)
        assert not validate_tx(Transaction((alice.key,), ((101, "x"),)), state)

    @pytest.mark.parametrize("case", ["double", "missing", "zero", "empty-in", "no-out"])
    def test_invalid_rejects_whole_block(self, case):
        state, (alice, bob, _) = genesis_state()
        good = Transaction((bob.key,), ((50, "z"),))
        bad = {
            "double": [Transaction((alice.key,), ((10, "x"),)), Transaction((alice.key,), ((10, "y"),))],
            "missing": [Transaction(((bytes(32), 9),), ((1, "x"),))],
            "zero": [Transaction((alice.key,), ((0, "x"),))],
            "empty-in": [Transaction((), ((1, "x"),))],
            "no-out": [Transaction((alice.key,), ())],
        }[case]
        with pytest.raises(TransitionRejected):
            state_transition(state, [good, *bad])

    def test_duplicate_input_within_tx(self):
        state, (alice, *_) = genesis_state()
        with pytest.raises(TransitionRejected):
            state_transition(state, [Transaction((alice.key, alice.key), ((150, "x"),))])

    def test_same_block_spend_rejected(self):
        state, (alice, *_) = genesis_state()
        first = Transaction((alice.key,), ((100, "dave"),))
        second = Transaction(((first.txid, 0),), ((100, "erin"),))
        with pytest.raises(TransitionRejected) as info:
            state_transition(state, [first, second])
        assert info.value.index == 1

    def test_coinbase_position(self):
        state, _ = genesis_state()
        with pytest.raises(TransitionRejected):
            state_transition(state, [Transaction(((state.sorted_records()[0].key),), ((1, "x"),)),
                                     coinbase(1, [(1, "m")])])

    def test_duplicate_transaction(self):
        state, _ = genesis_state()
        cb = coinbase(1, [(1, "m")])
        with pytest.raises(TransitionRejected):
            state_transition(state, [cb, Transaction((), ((1, "m"),), True, cb.tag)])

    def test_utxo_set_rejects_duplicate_keys(self):
        rec = UtxoRecord(bytes(32), 0, 1, "a")
        with pytest.raises(ValueError):
            UtxoSet([rec, rec])

    def test_prime_binds_amount(self):
        rec = UtxoRecord(bytes(32), 0, 1, "a")
        other = UtxoRecord(bytes(32), 0, 2, "a")
        assert rec.key == other.key and rec.prime(256) != other.prime(256)


def test_difficulty():
    header = BlockHeader(bytes(32), 0, 5, b"r", difficulty=0)
    assert meets_difficulty(header)
    zeros = 256 - int.from_bytes(header.hash, "big").bit_length()
    assert meets_difficulty(header, zeros) and not meets_difficulty(header, zeros + 1)
