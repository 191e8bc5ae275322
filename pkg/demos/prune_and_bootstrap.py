"""Mine a short chain, watch a node prune, and bring up a new node from a snapshot."""

import dataclasses

import numpy as np

from secureprune import accumulator as acc
from secureprune import consensus as cs
from secureprune.ledger import UtxoSet
from secureprune.simnet import synthetic_transfers

params = cs.ChainParams(acc.GroupParams.test_medium(), difficulty=4)
prune = cs.PruneConfig(delta_s=5, k=3)  # snapshot every 5 blocks, prune after 3 confirmations

miner = cs.FullNode(params, prune)
archive = cs.FullNode(params)  # keeps everything, for comparison
rng = np.random.default_rng(0)

for height in range(1, 19):
    txs = synthetic_transfers(miner.node.state.sorted_records(), 3, rng)
    block = miner.mine(miner="alice", txs=txs, timestamp=height * 600_000)
    archive.receive(block)
    print(f"height {height:2d}  bodies kept {len(miner.node.bodies):2d}  "
          f"prune boundary {miner.node.prune_boundary}")

# headers are never pruned
print("headers:", len(miner.node.headers), "bodies:", sorted(miner.node.bodies))

# a fresh node: snapshot, header chain, then the tail of blocks after the snapshot
fresh = cs.bootstrap(params, [miner], prune)
print("same state as the archive:", fresh.node.state == archive.node.state)
print("same tip:", fresh.tip_hash == archive.tip_hash)

# a peer that lies about one balance is caught by the header commitment
snap = miner.offer_snapshot(prune.k)
recs = snap.state.sorted_records()
recs[0] = dataclasses.replace(recs[0], amount=recs[0].amount + 1_000_000)
forged = cs.Snapshot(snap.height, snap.identifier, UtxoSet(recs, snap.height))
try:
    cs.verify_snapshot(params.group, forged, miner.node.headers)
except cs.SnapshotMismatch as exc:
    print("forged snapshot rejected:", exc)
