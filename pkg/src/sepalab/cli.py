"""Command-line driver: ``sepalab {verify, protocol, bounds, gen}``.

Reports go to ``--out`` (or stdout) as JSON (``"schema": 1``) or CSV with a
fixed column set per subcommand; the exit code is 0 exactly when every check
passed.  ``--figures DIR`` additionally renders PNG plots of the report.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from typing import Sequence

from . import __version__
from .sweeps import (
    CONSTRUCTIONS,
    PROTOCOLS,
    RunConfig,
    bounds_report,
    run_protocol_sweep,
    verify_construction,
)
from .tasks import (
    GENERATORS,
    KINDS,
    MarginViolation,
    instance_to_json,
    nn_margin,
    oracle_dyck,
    oracle_equality_instance,
    oracle_index,
    oracle_nearest_neighbor,
)

SCHEMA = 1

CSV_COLUMNS = {
    "verify": [
        "construction", "variant", "N", "mode", "cases", "mismatches", "passed", "width", "m", "d", "p", "H", "L",
        "size_bits", "jl_k", "min_target_weight", "hard_rounding", "error",
    ],
    "protocol": [
        "protocol", "N", "cases", "mismatches", "passed", "max_bits", "bound", "within_bound", "exact_bits", "size",
        "expected_size", "pairs_checked", "error",
    ],
    "bounds": [
        "N", "p", "H", "index_lookup_m", "assoc_recall_m", "equality_mp", "equality_m", "nearest_neighbor_m",
        "dyck_one_layer_mH", "width_index_lookup", "width_equality", "width_threshold_ksparse", "width_nearest_neighbor",
    ],
}


def _default_seed() -> int:
    raw = os.environ.get("SEPALAB_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"SEPALAB_SEED must be an integer, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n", type=int, nargs="+", default=None, help="sequence lengths N")
    common.add_argument("--trials", type=int, default=100, help="random cases per N")
    common.add_argument("--seed", type=int, default=None, help="base seed (default: $SEPALAB_SEED or 0)")
    common.add_argument("--kc", type=int, default=2, help="precision exponent: grid step N**-kc")
    common.add_argument("--gamma", type=str, default=None, help="nearest-neighbour margin (fraction or decimal)")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--out", type=str, default=None, help="report path (default: stdout)")
    common.add_argument("--figures", type=str, default=None, metavar="DIR", help="also write PNG figures into DIR")

    parser = argparse.ArgumentParser(prog="sepalab", description="Finite-precision Transformer and RNN verification lab")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", parents=[common], help="compare a construction with its oracle")
    v.add_argument("construction", choices=CONSTRUCTIONS)
    v.add_argument("--exhaustive-max", type=int, default=12, help="enumerate all inputs up to this N")

    p = sub.add_parser("protocol", parents=[common], help="run a communication protocol against direct evaluation")
    p.add_argument("protocol", choices=PROTOCOLS)
    p.add_argument("--partition", choices=("interleaved", "prefix", "random", "all"), default="interleaved")
    p.add_argument("--p", type=int, default=8, help="bits per state unit for index-reduction")

    b = sub.add_parser("bounds", parents=[common], help="tabulate recurrent lower bounds")
    b.add_argument("--p", type=int, default=None, help="precision in bits (default: from N and kc)")
    b.add_argument("--H", type=int, default=1, help="number of heads")
    b.add_argument("--measure", action="store_true", help="also build every construction and report its width")

    g = sub.add_parser("gen", parents=[common], help="write task instances as JSONL")
    g.add_argument("task", choices=KINDS)
    g.add_argument("--sigma-size", type=int, default=None)
    g.add_argument("--variable-length", action="store_true")
    return parser


DEFAULT_N = {"verify": [8], "protocol": [16], "bounds": [1024], "gen": [32]}


def _config(args: argparse.Namespace) -> RunConfig:
    options = {}
    target = None
    if args.command == "verify":
        target = args.construction
        options["exhaustive_max"] = args.exhaustive_max
    elif args.command == "protocol":
        target = args.protocol
        options.update(partition=args.partition, p=args.p)
    elif args.command == "bounds":
        options.update(p=args.p, H=args.H, measure=args.measure)
    elif args.command == "gen":
        target = args.task
        options.update(sigma_size=args.sigma_size, variable_length=args.variable_length)
    seed = _default_seed() if args.seed is None else args.seed
    return RunConfig(
        subcommand=args.command,
        target=target,
        n=tuple(args.n or DEFAULT_N[args.command]),
        seed=seed,
        kc=args.kc,
        gamma=args.gamma,
        trials=args.trials,
        format=args.format,
        out=args.out,
        options=options,
    )


def cmd_verify(cfg: RunConfig) -> dict:
    results = []
    for N in cfg.n:
        results.extend(
            verify_construction(cfg.target, N, cfg.trials, cfg.seed, cfg.kc, cfg.gamma, cfg.options["exhaustive_max"])
        )
    return {"results": results, "passed": all(r["passed"] for r in results)}


def cmd_protocol(cfg: RunConfig) -> dict:
    results = [
        run_protocol_sweep(cfg.target, N, cfg.trials, cfg.seed, cfg.kc, cfg.options["partition"], cfg.options["p"])
        for N in cfg.n
    ]
    return {"results": results, "passed": all(r["passed"] for r in results)}


def cmd_bounds(cfg: RunConfig) -> dict:
    o = cfg.options
    results = [bounds_report(N, o["p"], o["H"], cfg.kc, o["measure"], cfg.seed) for N in cfg.n]
    return {"results": results, "passed": True}


def _check_instance(inst) -> str | None:
    """``None`` when the stored label agrees with the oracle, else a reason."""
    kind = inst.kind
    if kind == "index_lookup":
        ok = oracle_index(inst.tokens, inst.params["position"]) == inst.label
    elif kind == "dyck22":
        ok = int(oracle_dyck(inst.tokens)) == inst.label
    elif kind.startswith("eq_"):
        ok = oracle_equality_instance(inst) == inst.label
    else:
        try:
            first = inst.params["first_query"]
            got = tuple(oracle_nearest_neighbor(inst, q) for q in range(first, len(inst.tokens) + 1))
        except MarginViolation as exc:
            return f"margin certificate failed: {exc}"
        ok = got == tuple(inst.label) and nn_margin(inst) > 0
    return None if ok else "label disagrees with the oracle"


def cmd_gen(cfg: RunConfig, stream) -> dict:
    make = GENERATORS[cfg.target]
    o = cfg.options
    results = []
    for N in cfg.n:
        bad = 0
        first = None
        for t in range(cfg.trials):
            inst = make(N, cfg.seed * 1_000_003 + t, sigma_size=o["sigma_size"], variable_length=o["variable_length"])
            stream.write(json.dumps(instance_to_json(inst), sort_keys=True, separators=(",", ":")) + "\n")
            why = _check_instance(inst)
            if why:
                bad += 1
                first = first or {"index": t, "reason": why}
        results.append({"task": cfg.target, "N": N, "cases": cfg.trials, "mismatches": bad, "passed": bad == 0, "first_counterexample": first})
    return {"results": results, "passed": all(r["passed"] for r in results)}


def render_json(cfg: RunConfig, body: dict) -> str:
    report = {"schema": SCHEMA, "config": cfg.to_dict(), **body}
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def _flatten(sub: str, r: dict) -> dict:
    if sub == "bounds":
        row = dict(r)
        for name, w in (r.get("widths") or {}).items():
            row["width_" + name.replace("-", "_")] = w
        return row
    return r


def render_csv(cfg: RunConfig, body: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={SCHEMA}\n")
    buf.write("# config=" + json.dumps(cfg.to_dict(), sort_keys=True) + "\n")
    buf.write(f"# passed={str(body['passed']).lower()}\n")
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS[cfg.subcommand], extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in body["results"]:
        w.writerow(_flatten(cfg.subcommand, r))
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _config(args)
    try:
        if cfg.subcommand == "gen":
            if cfg.out:
                with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
                    body = cmd_gen(cfg, fh)
            else:
                body = cmd_gen(cfg, sys.stdout)
            sys.stderr.write(render_json(cfg, body))
            return 0 if body["passed"] else 1
        body = {"verify": cmd_verify, "protocol": cmd_protocol, "bounds": cmd_bounds}[cfg.subcommand](cfg)
    except (ValueError, KeyError) as exc:
        sys.stderr.write(f"sepalab: error: {exc}\n")
        return 2
    text = render_csv(cfg, body) if cfg.format == "csv" else render_json(cfg, body)
    _emit(text, cfg.out)
    if args.figures:
        from .plotting import render

        for path in render({"config": cfg.to_dict(), **body}, args.figures):
            sys.stderr.write(f"figure: {path}\n")
    return 0 if body["passed"] else 1


if __name__ == "__main__":
    raise SystemExit(main())
