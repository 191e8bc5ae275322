"""Command-line entry point: ``secureprune <command> [flags]``.

Every failure prints one line ``error: <code>: <detail>`` to stderr.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import consensus, simnet
from .encoding import DecodeError

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    def __init__(self, code: str, detail: str, status: int = EXIT_USAGE):
        super().__init__(detail)
        self.code, self.detail, self.status = code, detail, status


def _load_config(args) -> simnet.SimConfig:
    if args.config is None:
        raise CliError("missing-config", "--config is required")
    path = Path(args.config)
    if not path.is_file():
        raise CliError("missing-config", f"no such file: {path}")
    try:
        cfg = simnet.SimConfig.from_file(path)
        overrides = {"seed": args.seed}
        if getattr(args, "protocol", None):
            overrides["protocol"] = args.protocol
        return replace(cfg, **overrides)
    except simnet.ConfigError as exc:
        raise CliError("bad-config", str(exc)) from None


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    protocols = [args.protocol] if args.protocol else list(simnet.PROTOCOLS)
    metrics = simnet.Metrics(block_bytes=cfg.block_bytes)
    for protocol in protocols:
        # storage and join experiments are separate runs
        storage_cfg = replace(cfg, protocol=protocol, join_heights=())
        metrics = metrics.merge(simnet.run_sim(storage_cfg))
        for h in cfg.join_heights:
            if 1 <= h <= cfg.duration_blocks:
                join_cfg = replace(cfg, protocol=protocol, join_heights=(h,), duration_blocks=h)
                metrics.sync_times.extend(simnet.run_sim(join_cfg).sync_times)
    try:
        simnet.export_metrics(metrics, out)
    except OSError as exc:
        raise CliError("io", str(exc)) from None

    mib = cfg.block_bytes / simnet.MIB
    for protocol in protocols:
        series = metrics.storage[protocol]
        heights = metrics.prune_heights(protocol)
        print(f"{protocol}: final storage {series[-1] / simnet.MIB:.2f} MiB "
              f"({series[-1] // cfg.block_bytes} blocks of {mib:g} MiB), "
              f"peak {max(series) / simnet.MIB:.2f} MiB, prunes at {heights}")
    if "bitcoin" in metrics.storage:
        for protocol in protocols:
            if protocol != "bitcoin":
                print(f"{protocol}: storage reduction vs bitcoin "
                      f"{100 * metrics.reduction(protocol):.1f}% at height {len(metrics.storage[protocol])}")
    for protocol, h, n, secs in metrics.sync_times:
        print(f"{protocol}: join at {h} syncs {n} blocks in {secs:.1f} s")
    return EXIT_OK


def cmd_bench_proofs(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    table = simnet.bench_proofs(sizes, trials=args.trials, seed=args.seed)
    metrics = simnet.Metrics(proof_bench=table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        simnet.export_metrics(metrics, out)
    for size, secs in table:
        print(f"{size} inputs / {size} outputs: {secs:.4f} s")
    return EXIT_OK


def cmd_confirmations(args) -> int:
    try:
        print(consensus.confirmations_required(args.q, args.p_target))
    except (ValueError, consensus.NoFinalityError) as exc:
        raise CliError("bad-argument", str(exc), EXIT_MISMATCH) from None
    return EXIT_OK


def cmd_export_snapshot(args) -> int:
    cfg = _load_config(args)
    if not args.snapshot or not args.headers:
        raise CliError("missing-argument", "--snapshot and --headers are required")
    node = simnet.build_chain(cfg)
    snap = node.offer_snapshot(cfg.k)
    if snap is None:
        raise CliError("no-snapshot", f"no {cfg.k}-confirmed snapshot by height {node.height}",
                       EXIT_MISMATCH)
    consensus.write_snapshot(args.snapshot, snap)
    consensus.write_headers(args.headers, node.params.group, node.node.headers)
    print(f"snapshot at height {snap.height} with {len(snap.state)} records; "
          f"{len(node.node.headers)} headers")
    return EXIT_OK


def cmd_verify_snapshot(args) -> int:
    if not args.snapshot or not args.headers:
        raise CliError("missing-argument", "--snapshot and --headers are required")
    try:
        snap = consensus.read_snapshot(args.snapshot)
        group, headers = consensus.read_headers(args.headers)
    except OSError as exc:
        raise CliError("io", str(exc)) from None
    except (DecodeError, ValueError) as exc:
        raise CliError("malformed", str(exc)) from None
    try:
        consensus.verify_header_chain(headers)
        consensus.verify_snapshot(group, snap, headers)
    except (consensus.HeaderChainError, consensus.SnapshotMismatch) as exc:
        raise CliError("mismatch", f"height {exc.height}: {exc}", EXIT_MISMATCH) from None
    print(f"ok: snapshot at height {snap.height} matches the header chain")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="secureprune", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="scenario file (flat key = value)")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = common(sub.add_parser("simulate", help="storage and sync experiments, CSV output"))
    p.add_argument("--out", default="results")
    p.add_argument("--protocol", choices=simnet.PROTOCOLS)
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("bench-proofs", help="time block proof verification"), config=False)
    p.add_argument("--sizes", default="10,50,100,200")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench_proofs)

    p = sub.add_parser("confirmations", help="blocks needed against a double spend")
    p.add_argument("--q", type=float, required=True, help="attacker hashrate fraction")
    p.add_argument("--p-target", type=float, required=True)
    p.set_defaults(func=cmd_confirmations)

    p = common(sub.add_parser("export-snapshot", help="mine a chain and write snapshot + headers"))
    p.add_argument("--snapshot")
    p.add_argument("--headers")
    p.set_defaults(func=cmd_export_snapshot)

    p = sub.add_parser("verify-snapshot", help="check a snapshot against a header chain")
    p.add_argument("--snapshot")
    p.add_argument("--headers")
    p.set_defaults(func=cmd_verify_snapshot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code:
            print("error: usage: invalid arguments", file=sys.stderr)
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc.code}: {exc.detail}", file=sys.stderr)
        return exc.status


if __name__ == "__main__":
    sys.exit(main())
