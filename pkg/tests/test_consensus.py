import dataclasses
import math

import numpy as np
import pytest

from secureprune import accumulator as acc
from secureprune import consensus as cs
from secureprune.encoding import DecodeError
from secureprune.ledger import Transaction, UtxoSet, coinbase, meets_difficulty
from secureprune.simnet import synthetic_transfers

import oracles


def state_oracle(group, state: UtxoSet) -> int:
    lam = oracles.carmichael(group.factors)
    primes = [r.prime(group.prime_bits) for r in state]
    return oracles.power(group.generator, math.prod(primes), group.modulus, lam)


def grow(node: cs.FullNode, blocks: int, seed: int = 0, miner: str = "m", txs: int = 2):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(blocks):
        batch = synthetic_transfers(node.node.state.sorted_records(), txs, rng)
        out.append(node.mine(miner=miner, txs=batch, timestamp=node.height + 1))
    return out


@pytest.fixture(scope="module")
def archive(chain_params):
    node = cs.FullNode(chain_params, track_witnesses=True)
    blocks = grow(node, 14)
    return node, blocks


@pytest.fixture(scope="module")
def pruned(chain_params, small_prune, archive):
    node = cs.FullNode(chain_params, small_prune)
    storage = []
    for block in archive[1]:
        assert node.receive(block) == "accepted"
        storage.append(len(node.node.bodies))
    return node, storage


class TestGenesis:
    def test_accumulator_commits_to_allocation(self, chain_params, medium):
        genesis = chain_params.genesis
        state = UtxoSet(genesis.transactions[0].records(), 0)
        assert genesis.header.accumulator == state_oracle(medium, state)

    def test_grinding(self, medium):
        params = cs.ChainParams(medium, difficulty=8)
        header = params.genesis.header
        assert int.from_bytes(header.hash, "big") >> 248 == 0


class TestValidation:
    def test_headers_commit_to_state(self, chain_params, medium, archive):
        node, blocks = archive
        replayed = cs.NodeState.genesis(chain_params)
        for block in blocks:
            verdict = cs.validate_block(replayed, block)
            assert verdict, verdict.reason
            replayed = verdict.node
            assert block.header.accumulator == state_oracle(medium, replayed.state)
        assert replayed.state == node.node.state

    def test_witness_table_tracks_accumulator(self, medium, archive):
        node, _ = archive
        table = node.node.witnesses
        assert set(table) == set(node.node.state.keys())
        A = node.node.accumulator
        for key, mw in table.items():
            assert mw.element == node.node.state[key].prime(medium.prime_bits)
            assert acc.verify_membership(medium, A, mw.element, mw)

    def test_validation_is_pure(self, chain_params, archive):
        node = cs.NodeState.genesis(chain_params)
        before = (list(node.headers), dict(node.bodies), node.state)
        assert cs.validate_block(node, archive[1][0])
        assert (node.headers, node.bodies, node.state) == before

    def _tamper(self, chain_params, block, **changes):
        node = cs.NodeState.genesis(chain_params)
        return cs.validate_block(node, dataclasses.replace(block, **changes))

    def test_reasons(self, chain_params, medium, archive):
        block = archive[1][0]
        hdr = block.header
        N = medium.modulus
        cases = {
            cs.UNKNOWN_PARENT: dict(header=dataclasses.replace(hdr, prev_hash=bytes(32))),
            cs.BAD_MERKLE: dict(header=dataclasses.replace(hdr, merkle_root=bytes(32))),
            cs.BAD_PROOF_DEL: dict(proof_del=acc.NiPoeProof(block.proof_del.Q * 2 % N)),
            cs.BAD_PROOF_ADD: dict(proof_add=acc.NiPoeProof(block.proof_add.Q * 2 % N)),
        }
        for reason, change in cases.items():
            assert self._tamper(chain_params, block, **change).reason == reason
        assert self._tamper(chain_params, block, height=5).reason == cs.UNKNOWN_PARENT
        assert (self._tamper(chain_params, block, acc_intermediate=block.acc_intermediate * 2 % N).reason
                in (cs.BAD_PROOF_DEL, cs.BAD_PROOF_ADD))
        assert self._tamper(chain_params, block,
                            header=dataclasses.replace(hdr, accumulator=hdr.accumulator * 2 % N)
                            ).reason == cs.BAD_PROOF_ADD

    def test_bad_transactions(self, chain_params, archive):
        block = archive[1][0]
        greedy = (coinbase(1, [(chain_params.reward + 1, "m")]),) + block.transactions[1:]
        assert self._tamper(chain_params, block, transactions=greedy).reason == cs.BAD_TX
        assert self._tamper(chain_params, block, transactions=block.transactions[1:]).reason == cs.BAD_TX
        double = block.transactions + (block.transactions[1],)
        assert self._tamper(chain_params, block, transactions=double).reason == cs.BAD_TX

    def test_a_hidden_extra_output_breaks_the_proof(self, chain_params, archive):
        # same header, one more transaction: the merkle root no longer matches
        block = archive[1][0]
        state = cs.NodeState.genesis(chain_params).state
        rec = state.sorted_records()[-1]
        extra = Transaction((rec.key,), ((rec.amount, "thief"),))
        if rec.key in {k for tx in block.transactions for k in tx.inputs}:
            pytest.skip("record already spent by the block")
        assert self._tamper(chain_params, block,
                            transactions=block.transactions + (extra,)).reason == cs.BAD_MERKLE

    def test_pow(self, medium):
        params = cs.ChainParams(medium, difficulty=6)
        node = cs.NodeState.genesis(params)
        block = cs.mine_block(node)
        assert cs.validate_block(node, block)
        while meets_difficulty(block.header):
            block = dataclasses.replace(block, header=dataclasses.replace(
                block.header, nonce=block.header.nonce + 1))
        assert cs.validate_block(node, block).reason == cs.BAD_POW

    def test_mine_drops_conflicting_transactions(self, chain_params):
        node = cs.NodeState.genesis(chain_params)
        rec = node.state.sorted_records()[0]
        a = Transaction((rec.key,), ((rec.amount, "a"),))
        b = Transaction((rec.key,), ((rec.amount, "b"),))
        block = cs.mine_block(node, txs=[a, b])
        assert block.transactions[1:] == (a,)
        assert cs.validate_block(node, block)

    def test_mempool_cleared_by_inclusion(self, chain_params):
        node = cs.NodeState.genesis(chain_params)
        rec = node.state.sorted_records()[0]
        tx = Transaction((rec.key,), ((rec.amount, "a"),))
        node = dataclasses.replace(node, mempool=[tx])
        block = cs.mine_block(node)
        assert cs.validate_block(node, block).node.mempool == []


class TestPruning:
    def test_boundary_rule(self):
        cfg = cs.PruneConfig(100, 50)
        expected = {0: 0, 149: 0, 150: 100, 249: 100, 250: 200, 1000: 900, 1049: 900, 1050: 1000}
        assert {h: cs.prune_boundary_for(h, cfg) for h in expected} == expected
        assert cs.max_storage_blocks(cfg) == 150
        with pytest.raises(ValueError):
            cs.PruneConfig(0, 5)

    def test_hand_traced_small_case(self, pruned, small_prune):
        node, storage = pruned
        # delta_s=5, k=3: first prune at height 8, boundary 5
        assert storage[:8] == [2, 3, 4, 5, 6, 7, 8, 4]
        assert max(storage) <= small_prune.delta_s + small_prune.k
        assert node.node.prune_boundary == 10
        assert min(node.node.bodies) == 10 and len(node.node.headers) == 15

    def test_snapshots(self, pruned, chain_params):
        node, _ = pruned
        assert [s.height for s in node.node.snapshots] == [10]
        snap = node.offer_snapshot(3)
        assert snap.identifier == node.node.headers[10].accumulator
        assert snap.recompute(chain_params.group) == snap.identifier
        assert node.offer_snapshot(5) is None
        assert len(node.node.snapshots) <= 2

    def test_pruned_node_tracks_archive(self, pruned, archive):
        assert pruned[0].node.state == archive[0].node.state
        assert pruned[0].tip_hash == archive[0].tip_hash

    def test_release_only_on_multiples(self, chain_params, archive):
        node = cs.NodeState.genesis(chain_params)
        cfg = cs.PruneConfig(5, 3)
        for block in archive[1][:6]:
            node = cs.validate_block(node, block).node
            snap = cs.release_snapshot(node, cfg)
            assert (snap is not None) == (node.height == 5)


class TestBootstrap:
    def test_matches_archive(self, chain_params, small_prune, pruned, archive):
        joined = cs.bootstrap(chain_params, [pruned[0]], small_prune)
        assert joined.node.state == archive[0].node.state
        assert joined.tip_hash == archive[0].tip_hash
        assert joined.node.prune_boundary == 10
        # the new node can serve the next joiner
        again = cs.bootstrap(chain_params, [joined], small_prune)
        assert again.node.state == archive[0].node.state

    def test_genesis_fallback(self, chain_params, small_prune, archive):
        young = cs.FullNode(chain_params, small_prune)
        for block in archive[1][:4]:
            young.receive(block)
        joined = cs.bootstrap(chain_params, [young], small_prune)
        assert joined.node.prune_boundary == 0 and joined.height == 4
        assert joined.node.state == cs.replay(chain_params, archive[1][:4]).state

    def test_poisoned_snapshot_skipped(self, chain_params, small_prune, pruned, archive):
        honest = pruned[0]
        snap = honest.offer_snapshot(small_prune.k)
        records = snap.state.sorted_records()
        forged = dataclasses.replace(records[0], amount=records[0].amount + 1)
        bad = cs.Snapshot(snap.height, snap.identifier,
                          UtxoSet([forged] + records[1:], snap.state.height))

        class Liar(cs.FullNode):
            def offer_snapshot(self, k):
                return bad

        liar = Liar(chain_params, small_prune, node=honest.node)
        with pytest.raises(cs.BootstrapError):
            cs.bootstrap(chain_params, [liar], small_prune)
        joined = cs.bootstrap(chain_params, [liar, honest], small_prune)
        assert joined.node.state == archive[0].node.state

    def test_no_peers(self, chain_params, small_prune):
        with pytest.raises(cs.BootstrapError):
            cs.bootstrap(chain_params, [], small_prune)


class TestHeaderChain:
    def test_checks(self, chain_params, archive):
        headers = archive[0].node.headers
        cs.verify_header_chain(headers, chain_params)
        broken = list(headers)
        broken[4] = dataclasses.replace(broken[4], nonce=99)
        with pytest.raises(cs.HeaderChainError) as info:
            cs.verify_header_chain(broken)
        assert info.value.height == 5
        with pytest.raises(cs.HeaderChainError):
            cs.verify_header_chain(headers[1:], chain_params)
        with pytest.raises(cs.HeaderChainError):
            cs.verify_header_chain([])

    def test_files(self, tmp_path, medium, pruned):
        node = pruned[0]
        snap = node.offer_snapshot(3)
        cs.write_snapshot(tmp_path / "s", snap)
        cs.write_headers(tmp_path / "h", medium, node.node.headers)
        assert cs.read_snapshot(tmp_path / "s") == snap
        group, headers = cs.read_headers(tmp_path / "h")
        assert headers == node.node.headers and group.modulus == medium.modulus
        cs.verify_snapshot(group, snap, headers)
        raw = (tmp_path / "h").read_bytes()
        for cut in (3, 20, len(raw) - 1):
            with pytest.raises(DecodeError):
                cs.deserialize_headers(raw[:cut])
        with pytest.raises(DecodeError):
            cs.Snapshot.deserialize(b"XXXX" + snap.serialize()[4:])

    def test_snapshot_mismatch_heights(self, medium, pruned):
        node = pruned[0]
        snap = node.offer_snapshot(3)
        headers = node.node.headers
        with pytest.raises(cs.SnapshotMismatch):
            cs.verify_snapshot(medium, dataclasses.replace(snap, height=99), headers)
        with pytest.raises(cs.SnapshotMismatch) as info:
            cs.verify_snapshot(medium, dataclasses.replace(snap, identifier=5), headers)
        assert info.value.height == 10


class TestForks:
    def test_longest_chain_and_reorg(self, chain_params):
        a = cs.FullNode(chain_params)
        b = cs.FullNode(chain_params)
        observer = cs.FullNode(chain_params)
        a_blocks = grow(a, 2, miner="a")
        b_blocks = grow(b, 3, miner="b", seed=1)
        assert [observer.receive(x) for x in a_blocks] == ["accepted"] * 2
        assert observer.receive(b_blocks[0]) == "side"
        assert observer.receive(b_blocks[1]) == "side"  # equal length keeps first seen
        assert observer.tip_hash == a_blocks[-1].hash
        assert observer.receive(b_blocks[2]) == "reorg"
        assert observer.tip_hash == b.tip_hash
        assert observer.node.state == b.node.state
        assert observer.receive(b_blocks[2]) == "duplicate"

    def test_orphans_connect(self, chain_params, archive):
        node = cs.FullNode(chain_params)
        blocks = archive[1][:4]
        assert [node.receive(b) for b in reversed(blocks[1:])] == ["orphan"] * 3
        assert node.receive(blocks[0]) == "accepted"
        assert node.height == 4 and not node.orphans

    def test_orphan_buffer_bounded(self, chain_params, archive):
        node = cs.FullNode(chain_params)
        template = archive[1][3]
        for i in range(cs.MAX_ORPHANS + 10):
            fake = dataclasses.replace(template, header=dataclasses.replace(
                template.header, prev_hash=i.to_bytes(32, "big")))
            node.receive(fake)
        assert len(node.orphans) == cs.MAX_ORPHANS

    def test_invalid_branch_not_adopted(self, chain_params, medium):
        a = cs.FullNode(chain_params)
        b = cs.FullNode(chain_params)
        grow(a, 1, miner="a")
        b_blocks = grow(b, 2, miner="b", seed=2)
        bad = dataclasses.replace(b_blocks[1], proof_add=acc.NiPoeProof(7))
        before = a.tip_hash
        assert a.receive(b_blocks[0]) == "side"
        assert a.receive(bad).startswith("rejected")
        assert a.tip_hash == before

    def test_select_chain(self):
        short, long_a, long_b = [1], [1, 2, 3], [4, 5, 6]
        assert cs.select_chain([short, long_a, long_b]) is long_a
        assert cs.select_chain([long_b, long_a]) is long_b


class TestConfirmations:
    @pytest.mark.parametrize("q,z", [(0.1, 1), (0.1, 5), (0.3, 10), (0.3, 24), (0.45, 100), (0.45, 461)])
    def test_formula_matches_high_precision(self, q, z):
        expected = float(oracles.catchup_probability_hp(q, z))
        assert cs.attacker_success_probability(q, z) == pytest.approx(expected, rel=1e-8)
        assert oracles.catchup_probability_scipy(q, z) == pytest.approx(expected, rel=1e-6)

    def test_required_against_oracle(self):
        for q, target in [(0.1, 1e-3), (0.3, 1e-3), (0.1, 1e-4), (0.2, 1e-5)]:
            z = cs.confirmations_required(q, target)
            assert oracles.catchup_probability_hp(q, z) < target <= oracles.catchup_probability_hp(q, z - 1) or z == 1

    def test_known_values(self):
        # frozen from the high-precision oracle above
        assert cs.confirmations_required(0.1, 1e-3) == 5
        assert cs.confirmations_required(0.3, 1e-3) == 24
        assert cs.confirmations_required(0.0, 1e-4) == 1

    def test_no_finality(self):
        with pytest.raises(cs.NoFinalityError):
            cs.confirmations_required(0.5, 1e-3)
        with pytest.raises(ValueError):
            cs.confirmations_required(0.1, 0)
        assert cs.attacker_success_probability(0.6, 3) == 1.0
