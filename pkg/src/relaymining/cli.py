"""Command-line entry point.

Exit codes: 0 success, 1 validation or verification failure, 2 input
parse failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import Config, ConfigError
from .difficulty import write_series_csv
from .estimator import run_bias_experiment, write_grid_csv
from .smst import MembershipProof, SumTrie, follows_closest_rule, key_bytes, verify_proof
from .tracesim import (
    SHAPES,
    ShapeParamsError,
    TraceError,
    compute_metrics,
    load_trace,
    run_simulation,
    save_trace,
    synth_trace,
    warmup_blocks,
    write_metrics_csv,
)

EXIT_OK, EXIT_INVALID, EXIT_PARSE = 0, 1, 2


def _err(msg: str) -> None:
    print(f"relaymining: {msg}", file=sys.stderr)


def _load_config(args) -> Config:
    cfg = Config.load(args.config) if args.config else Config()
    if getattr(args, "seed", None) is not None:
        cfg.sim.seed = args.seed
    if getattr(args, "mode", None) is not None:
        cfg.sim.mode = args.mode
    return cfg.validate()


def _dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    if args.trace:
        trace = load_trace(args.trace)
    else:
        params = json.loads(args.shape_params) if args.shape_params else None
        trace = synth_trace(args.shape, params, seed=cfg.sim.seed)
    result = run_simulation(trace, cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    save_trace(trace, os.path.join(args.out_dir, "trace.csv"))
    write_metrics_csv(result.records, os.path.join(args.out_dir, "metrics.csv"))
    for svc, obs in sorted(result.observations.items()):
        write_series_csv(obs, os.path.join(args.out_dir, f"difficulty-{svc}.csv"))
    result.log.write(os.path.join(args.out_dir, "events.ndjson"))
    skip = warmup_blocks(cfg.difficulty.alpha)
    T = cfg.difficulty.target_claims
    services = {}
    for svc in sorted(result.observations):
        n = sum(1 for r in result.records if r.service_id == svc)
        entry = {"all": compute_metrics(result.records, T, service_id=svc).to_dict()}
        if n > skip:
            entry["after_warmup"] = compute_metrics(result.records, T, skip=skip, service_id=svc).to_dict()
        services[svc] = entry
    meta = dict(result.metadata)
    meta["source"] = args.trace and os.path.basename(args.trace) or f"shape:{args.shape}"
    if result.registry is not None:
        meta["ledger"] = {"minted": result.registry.ledger.minted, "burned": result.registry.ledger.burned}
    _dump_json({"metadata": meta, "services": services}, os.path.join(args.out_dir, "aggregates.json"))
    return EXIT_OK


def _parse_grid(text: str) -> tuple[list[float], list[float]]:
    ds, vs = text.split(";")
    return [float(x) for x in ds.split(",") if x], [float(x) for x in vs.split(",") if x]


def cmd_experiment(args) -> int:
    cfg = _load_config(args)
    if args.grid:
        try:
            cfg.estimator.difficulties, cfg.estimator.participations = _parse_grid(args.grid)
        except ValueError:
            raise ConfigError(["--grid: expected 'd1,d2,...;v1,v2,...'"]) from None
        cfg.validate()
    if args.draws is not None:
        cfg.estimator.draws = args.draws
        cfg.validate()
    e = cfg.estimator
    cells = run_bias_experiment(
        e.difficulties,
        e.participations,
        target_claims=cfg.difficulty.target_claims,
        draws=e.draws,
        seed=cfg.sim.seed,
        relays_per_block=e.relays_per_block,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    write_grid_csv(cells, os.path.join(args.out_dir, "bias_grid.csv"))
    _dump_json({"metadata": cfg.metadata(), "cells": len(cells)}, os.path.join(args.out_dir, "experiment.json"))
    return EXIT_OK


def _read_trie(path) -> SumTrie:
    with open(path) as fh:
        return SumTrie.import_text(fh.read())


def _parse_target(text: str, width: int) -> int:
    t = int(text, 16)
    if not 0 <= t < (1 << width):
        raise ValueError(f"target {text} does not fit key width {width}")
    return t


def cmd_prove(args) -> int:
    try:
        trie = _read_trie(args.trie)
        target = _parse_target(args.target, trie.key_width)
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_PARSE
    proof = trie.closest_proof(target)
    os.makedirs(args.out_dir, exist_ok=True)
    doc = {
        "target": key_bytes(target, trie.key_width).hex(),
        "leaf": key_bytes(proof.key, trie.key_width).hex(),
        "root": [trie.root.hash.hex(), trie.root.sum],
        "proof": proof.to_json(),
    }
    out = os.path.join(args.out_dir, "proof.json")
    _dump_json(doc, out)
    print(doc["leaf"])
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        trie = _read_trie(args.trie)
        with open(args.proof) as fh:
            doc = json.load(fh)
        proof = MembershipProof.from_json(doc["proof"])
        target_hex = args.target or doc.get("target")
        target = _parse_target(target_hex, trie.key_width) if target_hex else None
    except (OSError, ValueError, KeyError, TypeError) as exc:
        _err(f"cannot parse input: {exc}")
        return EXIT_PARSE
    ok = verify_proof(trie.root, proof)
    if ok and target is not None:
        ok = follows_closest_rule(proof, target)
    print("valid" if ok else "invalid")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_config(args) -> int:
    sys.stdout.write(Config().to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relaymining", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a trace-driven simulation")
    src = sim.add_mutually_exclusive_group(required=True)
    src.add_argument("--trace", help="trace CSV (height,service_id,relay_count[,app_id,app_count]*)")
    src.add_argument("--shape", choices=SHAPES, help="synthesize a trace of this shape")
    sim.add_argument("--shape-params", help="JSON object overriding shape parameters")
    sim.add_argument("--config")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--mode", choices=("fast", "full"))
    sim.add_argument("--out-dir", default="out")
    sim.set_defaults(func=cmd_simulate)

    exp = sub.add_parser("experiment", help="dApp bias/variability grid")
    exp.add_argument("--config")
    exp.add_argument("--seed", type=int)
    exp.add_argument("--grid", help="'d1,d2,...;v1,v2,...'")
    exp.add_argument("--draws", type=int)
    exp.add_argument("--out-dir", default="out")
    exp.set_defaults(func=cmd_experiment)

    pr = sub.add_parser("prove", help="closest-leaf proof from a trie export")
    pr.add_argument("--trie", required=True)
    pr.add_argument("--target", required=True, help="target path as hex")
    pr.add_argument("--out-dir", default="out")
    pr.set_defaults(func=cmd_prove)

    ve = sub.add_parser("verify", help="check a proof file against a trie export")
    ve.add_argument("--trie", required=True)
    ve.add_argument("--proof", required=True)
    ve.add_argument("--target", help="also require the closest-leaf rule for this target")
    ve.set_defaults(func=cmd_verify)

    cf = sub.add_parser("config", help="print the default config as JSON")
    cf.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            _err(problem)
        return EXIT_INVALID
    except (ShapeParamsError, json.JSONDecodeError) as exc:
        _err(str(exc))
        return EXIT_INVALID
    except TraceError as exc:
        _err(f"malformed trace: {exc}")
        return EXIT_PARSE
    except OSError as exc:
        _err(str(exc))
        return EXIT_PARSE
