"""UTXO chain with RSA-accumulator state commitments, safe pruning and fast bootstrap,
plus an event-driven network simulator."""

from .accumulator import GroupParams, hash_to_prime, nipoe_prove, nipoe_verify
from .consensus import (ChainParams, FullNode, PruneConfig, bootstrap, confirmations_required,
                        validate_block)
from .ledger import Block, BlockHeader, Transaction, UtxoRecord, UtxoSet, state_transition
from .simnet import CoinPruneParams, Metrics, SimConfig, run_sim, simulate_join

__all__ = [
    "Block", "BlockHeader", "ChainParams", "CoinPruneParams", "FullNode", "GroupParams",
    "Metrics", "PruneConfig", "SimConfig", "Transaction", "UtxoRecord", "UtxoSet",
    "bootstrap", "confirmations_required", "hash_to_prime", "nipoe_prove", "nipoe_verify",
    "run_sim", "simulate_join", "state_transition", "validate_block",
]
