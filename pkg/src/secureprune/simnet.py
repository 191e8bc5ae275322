"""Deterministic event-driven simulation of block propagation, pruning and joins.

Blocks propagate with the inv -> getblock -> block -> addblock exchange over a
random regular peer graph. Storage is tracked at one observer node (node 0,
never a miner). Block sizes are abstract (``b`` MB per block) unless a
:class:`LedgerSetup` is supplied, in which case every node also runs a real
:class:`~secureprune.consensus.FullNode` on real blocks.
"""

from __future__ import annotations

import configparser
import csv
import heapq
import math
import os
import shutil
import tempfile
import time
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple, Sequence

import networkx as nx
import numpy as np

from . import accumulator as acc
from .consensus import ChainParams, FullNode, PruneConfig, bootstrap, prune_boundary_for, replay
from .ledger import Transaction, UtxoRecord, UtxoSet

PROTOCOLS = ("bitcoin", "coinPrune", "securePrune")
GROUPS = {"production": acc.GroupParams.production,
          "test_medium": acc.GroupParams.test_medium,
          "test": acc.GroupParams.test}
MIB = 1 << 20

# Approximate public pool shares, normalized; miners 1,7,8,10,12,13 sum to 0.377.
DEFAULT_HASHRATES = (0.170, 0.150, 0.120, 0.110, 0.090, 0.070, 0.065,
                     0.060, 0.053, 0.040, 0.030, 0.022, 0.020)
DEFAULT_DOS_MINERS = (1, 7, 8, 10, 12, 13)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Scenario parameters; defaults are the full-scale (1000 nodes, 10000 blocks) values."""
    n: int = 1000
    n_p: int = 8
    lam: float = 1 / 600
    T_p: float = 0.03
    b: float = 0.25
    R: float = 10.0
    R_v: float = 0.25
    T_proofs: float = 0.35
    k: int = 500
    delta_s: int = 1000
    m: int = 13
    hashrates: tuple[float, ...] = DEFAULT_HASHRATES
    q: float = 0.45
    seed: int = 0
    protocol: str = "securePrune"
    duration_blocks: int = 10000
    reaffirmation_window: int = 500
    reaffirmation_threshold: int = 300
    dos_miners: tuple[int, ...] = DEFAULT_DOS_MINERS
    join_heights: tuple[int, ...] = ()
    header_bytes: int = 336
    group: str = "production"
    txs_per_block: int = 2

    def __post_init__(self):
        problems = []
        if self.protocol not in PROTOCOLS:
            problems.append(f"protocol must be one of {PROTOCOLS}")
        if len(self.hashrates) != self.m:
            problems.append(f"{len(self.hashrates)} hashrates for m={self.m} miners")
        elif abs(sum(self.hashrates) - 1.0) > 1e-9:
            problems.append(f"hashrates sum to {sum(self.hashrates)!r}, not 1")
        if any(h <= 0 for h in self.hashrates):
            problems.append("hashrates must be positive")
        for name in ("lam", "b", "R", "R_v"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.T_p < 0 or self.T_proofs < 0 or self.header_bytes < 0:
            problems.append("delays and sizes must be non-negative")
        if not 1 <= self.n_p < self.n or (self.n * self.n_p) % 2:
            problems.append("need 1 <= n_p < n and n * n_p even for a regular peer graph")
        if not 1 <= self.m < self.n:
            problems.append("need 1 <= m < n (node 0 is a non-mining observer)")
        if self.k < 1 or self.delta_s < 1 or self.duration_blocks < 1:
            problems.append("k, delta_s and duration_blocks must be positive")
        if not 1 <= self.reaffirmation_threshold <= self.reaffirmation_window:
            problems.append("need 1 <= reaffirmation_threshold <= reaffirmation_window")
        if any(not 1 <= d <= self.m for d in self.dos_miners):
            problems.append("dos_miners are 1-based miner ids in [1, m]")
        if self.group not in GROUPS:
            problems.append(f"group must be one of {tuple(GROUPS)}")
        if self.txs_per_block < 0:
            problems.append("txs_per_block must be non-negative")
        if problems:
            raise ConfigError("; ".join(problems))

    @classmethod
    def desk(cls, **overrides) -> "SimConfig":
        """Scaled-down scenario: delta_s=100, k=50, 1000 blocks, 100 nodes."""
        base = dict(n=100, k=50, delta_s=100, duration_blocks=1000,
                    reaffirmation_window=50, reaffirmation_threshold=30)
        base.update(overrides)
        return cls(**base)

    @property
    def prune(self) -> PruneConfig:
        return PruneConfig(self.delta_s, self.k)

    @property
    def block_bytes(self) -> int:
        return round(self.b * MIB)

    def chain_params(self) -> ChainParams:
        return ChainParams(GROUPS[self.group]())

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        return parse_config(Path(path).read_text())


@dataclass(frozen=True)
class CoinPruneParams:
    reaffirmation_window: int
    threshold: int
    dos_miners: frozenset[int] = frozenset()

    def __post_init__(self):
        if not 1 <= self.threshold <= self.reaffirmation_window:
            raise ConfigError("need 1 <= threshold <= reaffirmation_window")

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "CoinPruneParams":
        return cls(cfg.reaffirmation_window, cfg.reaffirmation_threshold, frozenset(cfg.dos_miners))


_KEY_ALIASES = {"lambda": "lam"}


def _parse_value(name: str, raw: str, default):
    raw = raw.strip()
    if isinstance(default, tuple):
        items = [s.strip() for s in raw.replace(",", " ").split() if s.strip()]
        elem = float if name == "hashrates" else int
        return tuple(elem(Fraction(s)) for s in items)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(Fraction(raw))
    return raw


def parse_config(text: str, **overrides) -> SimConfig:
    """Flat ``key = value`` text; keys are the field names, with ``lambda`` for ``lam``."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[sim]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    if parser.sections() != ["sim"]:
        raise ConfigError("config is flat key = value; sections are not allowed")
    defaults = {f.name: f.default for f in fields(SimConfig)}
    values = {}
    for key, raw in parser["sim"].items():
        name = _KEY_ALIASES.get(key, key)
        if name not in defaults:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[name] = _parse_value(name, raw, defaults[name])
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    values.update(overrides)
    return SimConfig(**values)


def format_config(cfg: SimConfig) -> str:
    lines = []
    for f in fields(SimConfig):
        value = getattr(cfg, f.name)
        key = "lambda" if f.name == "lam" else f.name
        if isinstance(value, tuple):
            value = ", ".join(repr(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


@dataclass
class Metrics:
    block_bytes: int = 0
    storage: dict[str, list[int]] = field(default_factory=dict)  # bytes at heights 1..H
    prune_events: list[tuple[str, int, int]] = field(default_factory=list)  # protocol, height, boundary
    windows: list[tuple[int, int, int, bool]] = field(default_factory=list)  # height, snapshot, count, pruned
    sync_times: list[tuple[str, int, int, float]] = field(default_factory=list)  # protocol, height, blocks, s
    delays: list[tuple[int, float]] = field(default_factory=list)  # height, seconds to reach every node
    proof_bench: list[tuple[int, float]] = field(default_factory=list)
    blocks_mined: list[int] = field(default_factory=list)

    def retained_blocks(self, protocol: str) -> list[int]:
        return [s // self.block_bytes for s in self.storage[protocol]]

    def prune_heights(self, protocol: str) -> list[int]:
        return [h for p, h, _ in self.prune_events if p == protocol]

    def reduction(self, protocol: str = "securePrune", peak: bool = False) -> float:
        """Storage saving vs bitcoin at the final height (or using the protocol's peak)."""
        base = self.storage["bitcoin"][-1]
        ours = max(self.storage[protocol]) if peak else self.storage[protocol][-1]
        return 1.0 - ours / base

    def merge(self, other: "Metrics") -> "Metrics":
        return Metrics(
            block_bytes=self.block_bytes or other.block_bytes,
            storage={**self.storage, **other.storage},
            prune_events=self.prune_events + other.prune_events,
            windows=self.windows + other.windows,
            sync_times=self.sync_times + other.sync_times,
            delays=self.delays + other.delays,
            proof_bench=self.proof_bench + other.proof_bench,
            blocks_mined=self.blocks_mined or other.blocks_mined,
        )


@dataclass
class LedgerSetup:
    """Run real blocks through the simulation. Node 0 is archival, the rest prune."""
    params: ChainParams
    txs_per_block: int = 2

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "LedgerSetup":
        return cls(cfg.chain_params(), cfg.txs_per_block)


class SimEvent(NamedTuple):
    time: float
    kind: str
    src: int
    dst: int
    block: int


@dataclass
class JoinOutcome:
    join_height: int
    node: FullNode | None
    error: str | None = None


def random_regular_topology(n: int, degree: int, rng: np.random.Generator,
                            max_tries: int = 1000) -> list[list[int]]:
    for _ in range(max_tries):
        g = nx.random_regular_graph(degree, n, seed=int(rng.integers(2**32)))
        if nx.is_connected(g):
            return [sorted(g.neighbors(v)) for v in range(n)]
    raise ConfigError(f"no connected {degree}-regular graph on {n} nodes found")


# event kinds
MINE, INV, GETBLOCK, BLOCK, ADDBLOCK, JOIN = range(6)
EVENT_NAMES = ("mine", "inv", "getblock", "block", "addblock", "join")

# per-node block status
_NONE, _REQUESTED, _VALIDATING, _ADDED = range(4)


class _Simulation:
    def __init__(self, cfg: SimConfig, cp: CoinPruneParams | None, ledger: LedgerSetup | None,
                 trace: bool):
        self.cfg = cfg
        self.protocol = cfg.protocol
        self.cp = cp or CoinPruneParams.from_config(cfg)
        self.rng = np.random.default_rng(cfg.seed)
        self.adj = random_regular_topology(cfg.n, cfg.n_p, self.rng)
        self.miners = list(range(1, cfg.m + 1))
        self.hashrates = np.asarray(cfg.hashrates, dtype=float)
        self.hashrates = self.hashrates / self.hashrates.sum()

        self.transfer = cfg.b * 8 / cfg.R
        proofs = cfg.T_proofs if self.protocol == "securePrune" else 0.0
        self.validation = cfg.b * 8 / cfg.R_v + proofs

        # block table, id 0 is genesis
        self.parent = [-1]
        self.height = [0]
        self.miner = [-1]
        self.mined_at = [0.0]
        self.status = [bytearray([_ADDED]) * cfg.n]
        self.added = [cfg.n]
        self.tip = [0] * cfg.n
        self.waiting: list[dict[int, list[int]]] = [dict() for _ in range(cfg.n)]

        self.queue: list = []
        self.seq = 0
        self.now = 0.0
        self.mining_done = False
        self.trace: list | None = [] if trace else None

        self.metrics = Metrics(block_bytes=cfg.block_bytes, blocks_mined=[0] * cfg.m)
        self.series: list[int] = []
        self.obs_height = 0
        self.boundary = 0
        self.joins = sorted(set(cfg.join_heights))
        self.join_outcomes: list[JoinOutcome] = []

        self.ledger = ledger
        if ledger is not None:
            self.nodes = [FullNode(ledger.params,
                                   None if v == 0 else cfg.prune,
                                   track_witnesses=v in self.miners)
                          for v in range(cfg.n)]
            self.payload = [ledger.params.genesis]
            self.tx_rng = np.random.default_rng([cfg.seed, 1])

    # -- queue ---------------------------------------------------------------

    def push(self, t: float, kind: int, src: int, dst: int, blk: int) -> None:
        heapq.heappush(self.queue, (t, self.seq, kind, src, dst, blk))
        self.seq += 1

    def run(self) -> Metrics:
        self.push(self.rng.exponential(1 / self.cfg.lam), MINE, -1, -1, -1)
        handlers = (self.on_mine, self.on_inv, self.on_getblock, self.on_block,
                    self.on_addblock, self.on_join)
        while self.queue:
            t, _, kind, src, dst, blk = heapq.heappop(self.queue)
            self.now = t
            if self.trace is not None:
                self.trace.append(SimEvent(t, EVENT_NAMES[kind], src, dst, blk))
            handlers[kind](t, src, dst, blk)
        self.metrics.storage[self.protocol] = self.series
        return self.metrics

    # -- handlers ------------------------------------------------------------

    def on_mine(self, t, _src, _dst, _blk):
        idx = int(self.rng.choice(len(self.miners), p=self.hashrates))
        v = self.miners[idx]
        parent = self.tip[v]
        blk = len(self.parent)
        self.parent.append(parent)
        self.height.append(self.height[parent] + 1)
        self.miner.append(idx + 1)
        self.mined_at.append(t)
        self.status.append(bytearray(self.cfg.n))
        self.status[blk][v] = _ADDED
        self.added.append(1)
        self.metrics.blocks_mined[idx] += 1
        if self.ledger is not None:
            node = self.nodes[v]
            block = node.mine(miner=f"miner-{idx + 1}", timestamp=int(t * 1000),
                              txs=self._synthetic_txs(node), grind_nonce=False)
            self.payload.append(block)
        self._set_tip(v, blk, t)
        self._announce(v, blk, t)
        if self.height[blk] >= self.cfg.duration_blocks:
            self.mining_done = True
        else:
            self.push(t + self.rng.exponential(1 / self.cfg.lam), MINE, -1, -1, -1)

    def on_inv(self, t, src, dst, blk):
        if self.status[blk][dst] == _NONE:
            self.status[blk][dst] = _REQUESTED
            self.push(t + self.cfg.T_p, GETBLOCK, dst, src, blk)

    def on_getblock(self, t, src, dst, blk):
        self.push(t + self.cfg.T_p + self.transfer, BLOCK, dst, src, blk)

    def on_block(self, t, src, dst, blk):
        self.status[blk][dst] = _VALIDATING
        parent = self.parent[blk]
        if self.status[parent][dst] == _ADDED:
            self.push(t + self.validation, ADDBLOCK, src, dst, blk)
        else:
            self.waiting[dst].setdefault(parent, []).append(blk)

    def on_addblock(self, t, src, dst, blk):
        self.status[blk][dst] = _ADDED
        self.added[blk] += 1
        if self.added[blk] == self.cfg.n:
            self.metrics.delays.append((self.height[blk], t - self.mined_at[blk]))
        if self.ledger is not None:
            self.nodes[dst].receive(self.payload[blk])
        if self.height[blk] > self.height[self.tip[dst]]:
            self._set_tip(dst, blk, t)
        for child in self.waiting[dst].pop(blk, ()):
            self.push(t + self.validation, ADDBLOCK, src, dst, child)
        self._announce(dst, blk, t)

    def on_join(self, t, _src, _dst, join_height):
        h = self.obs_height
        if self.protocol == "bitcoin" or self.boundary == 0:
            n_blocks = h
        else:
            n_blocks = h - self.boundary
        if self.ledger is not None:
            self._ledger_join(join_height)
        cfg = self.cfg
        headers = cfg.T_p + (h + 1) * cfg.header_bytes * 8 / 1e6 / cfg.R
        t_done = t + headers
        for _ in range(n_blocks):
            t_done += cfg.T_p + self.transfer + self.validation
        self.metrics.sync_times.append((self.protocol, join_height, n_blocks, t_done - t))

    # -- helpers -------------------------------------------------------------

    def _announce(self, v: int, blk: int, t: float) -> None:
        status = self.status[blk]
        arrive = t + self.cfg.T_p
        for u in self.adj[v]:
            if status[u] == _NONE:
                self.push(arrive, INV, v, u, blk)

    def _set_tip(self, v: int, blk: int, t: float) -> None:
        self.tip[v] = blk
        if v == 0 and self.height[blk] > self.obs_height:
            self._observe(blk, t)

    def _observe(self, blk: int, t: float) -> None:
        chain = []
        b = blk
        while self.height[b] > self.obs_height:
            chain.append(b)
            b = self.parent[b]
        for b in reversed(chain):
            h = self.height[b]
            self._update_boundary(h, b)
            self.series.append((h - self.boundary + 1) * self.cfg.block_bytes)
            self.obs_height = h
            while self.joins and self.joins[0] <= h:
                self.push(t, JOIN, -1, -1, self.joins.pop(0))

    def _update_boundary(self, h: int, blk: int) -> None:
        cfg = self.cfg
        if self.protocol == "securePrune":
            new = max(self.boundary, prune_boundary_for(h, cfg.prune))
        elif self.protocol == "coinPrune":
            new = self._coinprune_boundary(h, blk)
        else:
            new = 0
        if new > self.boundary:
            self.boundary = new
            self.metrics.prune_events.append((self.protocol, h, new))

    def _coinprune_boundary(self, h: int, blk: int) -> int:
        cfg, cp = self.cfg, self.cp
        w = cp.reaffirmation_window
        j = 1
        while (j - 1) * w < cfg.delta_s:
            p = h - j * w
            if p >= cfg.delta_s and p % cfg.delta_s == 0 and p > self.boundary:
                count = 0
                b = blk
                for _ in range(w):
                    if self.miner[b] not in cp.dos_miners:
                        count += 1
                    b = self.parent[b]
                ok = count >= cp.threshold
                self.metrics.windows.append((h, p, count, ok))
                if ok:
                    return p
                break  # newest snapshot with a window ending here decides
            j += 1
        return self.boundary

    def _synthetic_txs(self, node: FullNode) -> list[Transaction]:
        return synthetic_transfers(node.node.state.sorted_records(), self.ledger.txs_per_block,
                                   self.tx_rng)

    def _ledger_join(self, join_height: int) -> None:
        peers = [self.nodes[v] for v in self.adj[0]]
        try:
            node = bootstrap(self.ledger.params, peers, self.cfg.prune)
        except Exception as exc:  # reported, not fatal
            self.join_outcomes.append(JoinOutcome(join_height, None, str(exc)))
            return
        self.join_outcomes.append(JoinOutcome(join_height, node))


def synthetic_transfers(records: Sequence[UtxoRecord], count: int,
                        rng: np.random.Generator) -> list[Transaction]:
    """Up to ``count`` 2-input/2-output transactions over disjoint unspent records."""
    count = min(count, len(records) // 2)
    if count == 0:
        return []
    picks = rng.choice(len(records), size=2 * count, replace=False)
    txs = []
    for i in range(count):
        a, b = records[picks[2 * i]], records[picks[2 * i + 1]]
        total = a.amount + b.amount
        owners = rng.integers(1_000_000, size=2)
        first = max(1, total // 2)
        outputs = [(first, f"user-{owners[0]}")]
        if total - first > 0:
            outputs.append((total - first, f"user-{owners[1]}"))
        txs.append(Transaction((a.key, b.key), tuple(outputs)))
    return txs


@dataclass
class SimResult:
    metrics: Metrics
    trace: list[SimEvent] | None
    nodes: list[FullNode] | None
    joins: list[JoinOutcome]
    blocks: int
    parents: list[int]  # block id -> parent id; miners are nodes 1..m and mine as themselves
    origins: list[int]


def simulate(config: SimConfig, cp: CoinPruneParams | None = None,
             ledger: LedgerSetup | None = None, trace: bool = False) -> SimResult:
    sim = _Simulation(config, cp, ledger, trace)
    metrics = sim.run()
    return SimResult(metrics, sim.trace, getattr(sim, "nodes", None), sim.join_outcomes,
                     len(sim.parent) - 1, sim.parent, sim.miner)


def run_sim(config: SimConfig) -> Metrics:
    return simulate(config).metrics


def coinprune_baseline(config: SimConfig, cp: CoinPruneParams) -> Metrics:
    return simulate(replace(config, protocol="coinPrune"), cp).metrics


def compare_protocols(config: SimConfig, cp: CoinPruneParams | None = None) -> Metrics:
    """Storage runs for all three protocols under one config; merged metrics."""
    out = Metrics(block_bytes=config.block_bytes)
    for protocol in PROTOCOLS:
        out = out.merge(simulate(replace(config, protocol=protocol), cp).metrics)
    return out


def sync_time_analytic(protocol: str, n_blocks: int, config: SimConfig) -> float:
    """Closed-form sync time; ``b`` is converted from MB to megabits."""
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}")
    bits = config.b * 8
    t = n_blocks * (bits / config.R + config.T_p) + n_blocks * bits / config.R_v
    if protocol == "securePrune":
        t += n_blocks * config.T_proofs
    return t


def simulate_join(config: SimConfig, join_height: int) -> float:
    if not 1 <= join_height <= config.duration_blocks:
        raise ConfigError("join height must lie within the simulated duration")
    cfg = replace(config, join_heights=(join_height,), duration_blocks=join_height)
    metrics = run_sim(cfg)
    if not metrics.sync_times:
        raise RuntimeError("join did not run")
    return metrics.sync_times[0][3]


def build_chain(cfg: SimConfig, params: ChainParams | None = None) -> FullNode:
    """Single pruning miner extending a chain to ``duration_blocks`` with synthetic transfers."""
    params = params or cfg.chain_params()
    node = FullNode(params, cfg.prune)
    rng = np.random.default_rng(cfg.seed)
    for height in range(1, cfg.duration_blocks + 1):
        node.mine(miner="miner", timestamp=height * 600_000,
                  txs=synthetic_transfers(node.node.state.sorted_records(), cfg.txs_per_block, rng),
                  grind_nonce=params.difficulty > 0)
    return node


def archival_state_at(archival: FullNode, tip_hash: bytes) -> UtxoSet:
    """Replay from genesis, using the archival node's block store, up to ``tip_hash``."""
    chain = []
    h = tip_hash
    genesis = archival.params.genesis.hash
    while h != genesis:
        block = archival.blocks[h]
        chain.append(block)
        h = block.header.prev_hash
    return replay(archival.params, list(reversed(chain))).state


# -- proof benchmark --------------------------------------------------------

def _random_records(rng: np.random.Generator, count: int) -> list[UtxoRecord]:
    return [UtxoRecord(rng.bytes(32), int(rng.integers(4)), int(rng.integers(1, 10**8)),
                       f"owner-{int(rng.integers(10**6))}") for _ in range(count)]


def bench_proofs(sizes: Sequence[int], params: acc.GroupParams | None = None,
                 trials: int = 5, seed: int = 0) -> list[tuple[int, float]]:
    """Mean time for a verifier to check both proofs of a block with |S_d| = |S_a| = size.

    The timed part is what a validating node does: derive prime representatives
    for the spent and created records and run the two NI-PoE verifications.
    """
    group = params or acc.GroupParams.production()
    bits = group.prime_bits
    rng = np.random.default_rng(seed)
    out = []
    for size in sizes:
        if size < 1:
            raise ValueError("sizes must be positive")
        elapsed = []
        for _ in range(max(trials, 5)):
            spent, created, others = (_random_records(rng, size), _random_records(rng, size),
                                      _random_records(rng, 4))
            A_prime = acc.accumulate(group, [r.prime(bits) for r in others])
            xd = math.prod(acc.hash_to_prime_uncached(r.serialize(), bits) for r in spent)
            xa = math.prod(acc.hash_to_prime_uncached(r.serialize(), bits) for r in created)
            A_prev = acc.accumulate(group, [xd], A_prime)
            A_new = acc.accumulate(group, [xa], A_prime)
            pd = acc.nipoe_prove(group, A_prime, xd, A_prev)
            pa = acc.nipoe_prove(group, A_prime, xa, A_new)

            start = time.perf_counter()
            d = math.prod(acc.hash_to_prime_uncached(r.serialize(), bits) for r in spent)
            a = math.prod(acc.hash_to_prime_uncached(r.serialize(), bits) for r in created)
            ok = (acc.nipoe_verify(group, d, A_prime, A_prev, pd, cached=False)
                  and acc.nipoe_verify(group, a, A_prime, A_new, pa, cached=False))
            elapsed.append(time.perf_counter() - start)
            if not ok:
                raise AssertionError("honest block proofs failed to verify")
        out.append((size, sum(elapsed) / len(elapsed)))
    return out


# -- CSV export -------------------------------------------------------------

CSV_FILES = ("storage_series.csv", "prune_events.csv", "sync_times.csv", "proof_bench.csv",
             "reaffirmations.csv", "delays.csv", "miners.csv", "meta.csv")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def export_metrics(metrics: Metrics, path) -> list[Path]:
    """Write every CSV into a scratch directory first, then move them into ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    protocols = [p for p in PROTOCOLS if p in metrics.storage]
    length = max((len(s) for s in metrics.storage.values()), default=0)
    scratch = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    try:
        _write_csv(scratch / "storage_series.csv", ["height", *protocols],
                   ([h + 1, *(metrics.storage[p][h] if h < len(metrics.storage[p]) else ""
                              for p in protocols)] for h in range(length)))
        _write_csv(scratch / "prune_events.csv", ["protocol", "height", "boundary"],
                   metrics.prune_events)
        _write_csv(scratch / "sync_times.csv", ["protocol", "join_height", "blocks", "seconds"],
                   ((p, h, n, repr(s)) for p, h, n, s in metrics.sync_times))
        _write_csv(scratch / "proof_bench.csv", ["size", "verify_seconds"],
                   ((n, repr(s)) for n, s in metrics.proof_bench))
        _write_csv(scratch / "reaffirmations.csv", ["height", "snapshot", "reaffirmations", "pruned"],
                   ((h, p, c, int(ok)) for h, p, c, ok in metrics.windows))
        _write_csv(scratch / "delays.csv", ["height", "seconds"],
                   ((h, repr(s)) for h, s in metrics.delays))
        _write_csv(scratch / "miners.csv", ["miner", "blocks"],
                   ((i + 1, c) for i, c in enumerate(metrics.blocks_mined)))
        _write_csv(scratch / "meta.csv", ["key", "value"], [("block_bytes", metrics.block_bytes)])
        written = []
        for name in CSV_FILES:
            os.replace(scratch / name, out / name)
            written.append(out / name)
        return written
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def _rows(path: Path) -> list[list[str]]:
    with open(path, newline="") as fh:
        return list(csv.reader(fh))[1:]


def read_metrics(path) -> Metrics:
    src = Path(path)
    with open(src / "storage_series.csv", newline="") as fh:
        reader = csv.reader(fh)
        protocols = next(reader)[1:]
        storage = {p: [] for p in protocols}
        for row in reader:
            for p, v in zip(protocols, row[1:]):
                if v != "":
                    storage[p].append(int(v))
    meta = dict(_rows(src / "meta.csv"))
    return Metrics(
        block_bytes=int(meta["block_bytes"]),
        storage=storage,
        prune_events=[(p, int(h), int(b)) for p, h, b in _rows(src / "prune_events.csv")],
        windows=[(int(h), int(p), int(c), ok == "1") for h, p, c, ok in _rows(src / "reaffirmations.csv")],
        sync_times=[(p, int(h), int(n), float(s)) for p, h, n, s in _rows(src / "sync_times.csv")],
        delays=[(int(h), float(s)) for h, s in _rows(src / "delays.csv")],
        proof_bench=[(int(n), float(s)) for n, s in _rows(src / "proof_bench.csv")],
        blocks_mined=[int(c) for _, c in _rows(src / "miners.csv")],
    )
