"""Seeded verification sweeps shared by the command line and the test suite.

Each sweep returns plain dictionaries (JSON-ready, deterministic for a given
configuration) with pass/fail counts, attention margins and size statistics.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator

import numpy as np

from .constructions import (
    build_equality_tf,
    build_index_lookup_tf,
    build_nearest_neighbor_tf,
    build_partition_equality_tf,
    build_threshold_ksparse_tf,
    disj_features,
    equality_tokens,
    index_lookup_tokens,
    ineq_features,
    nn_query_rows,
    nn_tokens,
    threshold_tokens,
)
from .fixed_precision import PrecisionConfig
from .jl_vectors import JLFamily, generate_family, suggest_dimension
from .protocols import (
    Partition,
    enumerate_dyck_fooling_set,
    index_reduction,
    lower_bound_table,
    run_one_layer_tf_protocol,
    run_rnn_prefix_protocol,
    verify_fooling_property,
)
from .rnn_core import dfa_to_rnn, dyck22_dfa, rnn_forward
from .tasks import (
    MarginViolation,
    gen_dyck22,
    gen_index_lookup,
    gen_nn_instance,
    oracle_boolean,
    oracle_dyck,
    oracle_nearest_neighbor,
)
from .transformer_core import TransformerModel, model_forward

__all__ = [
    "CONSTRUCTIONS",
    "PROTOCOLS",
    "RunConfig",
    "coarse_family",
    "nn_family",
    "nn_setup",
    "build_default",
    "measure_widths",
    "verify_construction",
    "run_protocol_sweep",
    "bounds_report",
    "log_fit",
]

CONSTRUCTIONS = ("index-lookup", "equality", "partition-equality", "threshold-ksparse", "nearest-neighbor")
PROTOCOLS = ("one-layer", "rnn-prefix", "index-reduction", "fooling-set")
IL_SIGMA = 64


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a report; echoed into its header."""

    subcommand: str
    target: str | None
    n: tuple[int, ...]
    seed: int
    kc: int = 2
    gamma: str | None = None
    trials: int = 100
    format: str = "json"
    out: str | None = None
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "target": self.target,
            "n": list(self.n),
            "seed": self.seed,
            "kc": self.kc,
            "gamma": self.gamma,
            "trials": self.trials,
            "format": self.format,
            "out": self.out,
            "options": dict(sorted(self.options.items())),
        }


def _frac(x: Fraction | None) -> str | None:
    return None if x is None else f"{x.numerator}/{x.denominator}"


def _plain(v):
    if isinstance(v, (list, tuple)):
        return [_plain(u) for u in v]
    if isinstance(v, np.integer):
        return int(v)
    return v


class _Tally:
    def __init__(self, S: int) -> None:
        self.S = S
        self.cases = 0
        self.mismatches = 0
        self.first: dict | None = None
        self.min_target: int | None = None
        self.hard: bool | None = None

    def check(self, got, expected, case: dict) -> None:
        self.cases += 1
        if got != expected:
            self.mismatches += 1
            if self.first is None:
                self.first = {**{k: _plain(v) for k, v in case.items()}, "expected": _plain(expected), "got": _plain(got)}

    def target(self, w: int) -> None:
        self.min_target = int(w) if self.min_target is None else min(self.min_target, int(w))

    def rounding(self, w: np.ndarray) -> None:
        ok = bool(np.isin(w, (0, self.S)).all())
        self.hard = ok if self.hard is None else self.hard and ok

    def record(self, model: TransformerModel, **extra) -> dict:
        st = model.stats()
        mt = None if self.min_target is None else Fraction(self.min_target, self.S)
        rec = {
            "cases": self.cases,
            "mismatches": self.mismatches,
            "passed": self.mismatches == 0 and self.cases > 0 and not extra.get("error"),
            **st,
            "jl_k": int(model.meta.get("jl_k", model.meta.get("k", 0))),
            "min_target_weight": _frac(mt),
            "min_target_weight_float": None if mt is None else float(mt),
            "hard_rounding": self.hard,
            "first_counterexample": self.first,
            "error": None,
        }
        rec.update(extra)
        rec["passed"] = rec["mismatches"] == 0 and rec["cases"] > 0 and rec["error"] is None
        return rec


def _rng(seed: int, N: int, tag: str) -> np.random.Generator:
    return np.random.default_rng([seed, N, sum(tag.encode())])


# ------------------------------------------------------------------ builders


def coarse_family(count: int, seed: int = 0) -> JLFamily:
    return generate_family(count, suggest_dimension(count), "coarse", seed)


def nn_family(N: int, gamma: Fraction, seed: int = 0) -> JLFamily:
    """Exactly orthogonal sign vectors for the ``2N`` positions."""
    k = 1
    while k < 2 * N:
        k *= 2
    return generate_family(2 * N, k, "fine", seed, gamma=gamma, method="hadamard")


def nn_setup(N: int, mqar: bool, gamma=None) -> tuple[int, int, Fraction]:
    """``(sigma_size, d_in, gamma)`` used for the nearest-neighbour sweeps."""
    sigma = 2 * N if mqar else max(4, N * N)
    d_in = max(1, (sigma - 1).bit_length())
    g = Fraction(1, d_in) if gamma is None else Fraction(str(gamma))
    return sigma, d_in, g


def build_default(name: str, N: int, kc: int = 2, seed: int = 0, variant: str | None = None, gamma=None) -> TransformerModel:
    """The construction ``name`` at ``N`` with seeded default parameters."""
    cfg = PrecisionConfig(N, kc)
    if name == "index-lookup":
        return build_index_lookup_tf(N, tuple(range(IL_SIGMA)), coarse_family(N, seed), cfg)
    if name == "equality":
        return build_equality_tf(N, coarse_family(N, seed), cfg)
    if name == "partition-equality":
        rng = _rng(seed, N, "partition")
        S_A = sorted(int(i) + 1 for i in rng.choice(N, N // 2, replace=False))
        return build_partition_equality_tf(N, S_A, coarse_family(N, seed), cfg)
    if name == "threshold-ksparse":
        feats = disj_features(N) if variant == "disj" else ineq_features(N)
        return build_threshold_ksparse_tf(N, feats, 0, coarse_family(N + 1, seed), cfg)
    if name == "nearest-neighbor":
        _, d_in, g = nn_setup(N, variant != "nearest", gamma)
        return build_nearest_neighbor_tf(N, d_in, g, nn_family(N, g, seed), PrecisionConfig(2 * N, kc))
    raise ValueError(f"unknown construction {name!r}; choose from {', '.join(CONSTRUCTIONS)}")


def measure_widths(N: int, kc: int = 2, seed: int = 0) -> dict[str, int]:
    """Measured width ``max(m, d)`` of every construction at ``N``."""
    return {
        "index-lookup": build_default("index-lookup", N, kc, seed).stats()["width"],
        "equality": build_default("equality", N, kc, seed).stats()["width"],
        "threshold-ksparse": build_default("threshold-ksparse", N, kc, seed).stats()["width"],
        "nearest-neighbor": build_default("nearest-neighbor", N, kc, seed, "mqar").stats()["width"],
    }


# ------------------------------------------------------------------ verify


def _bit_cases(N: int, trials: int, exhaustive: bool, rng: np.random.Generator, kind: str, S_A=None) -> Iterator[list[int]]:
    if exhaustive:
        for bits in itertools.product((0, 1), repeat=N):
            yield list(bits)
        return
    h = N // 2
    for _ in range(trials):
        a = rng.integers(0, 2, h)
        coin = rng.random() < 0.5
        if kind == "disj":
            if coin:
                pair = rng.integers(0, 3, h)
                a, b = (pair == 1).astype(int), (pair == 2).astype(int)
            else:
                b = rng.integers(0, 2, h)
        else:
            b = a.copy() if coin else rng.integers(0, 2, h)
        if S_A is None:
            yield [int(v) for v in a] + [int(v) for v in b]
        else:
            bits = [0] * N
            S_B = sorted(set(range(1, N + 1)) - set(S_A))
            for i, v in zip(S_A, a):
                bits[i - 1] = int(v)
            for i, v in zip(S_B, b):
                bits[i - 1] = int(v)
            yield bits


def _verify_index_lookup(N: int, trials: int, seed: int, kc: int) -> list[dict]:
    model = build_default("index-lookup", N, kc, seed)
    tally = _Tally(model.cfg.scale)
    rng = _rng(seed, N, "index-lookup")
    for t in range(trials):
        inst = gen_index_lookup(N, IL_SIGMA, seed=int(rng.integers(2**62)))
        p = inst.params["position"]
        res = model_forward(model, index_lookup_tokens(inst.tokens, p), trace=True)
        tally.check(res.outputs[0], inst.label, {"case": t, "tokens": list(inst.tokens), "position": p})
        tally.target(res.attention[0][0][0][p - 1])
    return [tally.record(model, construction="index-lookup", variant=None, N=N, mode="random")]


def _verify_equality(name: str, N: int, trials: int, seed: int, kc: int, exhaustive_max: int) -> list[dict]:
    model = build_default(name, N, kc, seed)
    tally = _Tally(model.cfg.scale)
    exhaustive = N <= exhaustive_max
    rng = _rng(seed, N, name)
    S_A = model.meta["S_A"]
    S_B = sorted(set(range(1, N + 1)) - set(S_A))
    partner = model.meta["partner"]
    targets = np.array([partner[i] - 1 for i in range(N)])
    for t, bits in enumerate(_bit_cases(N, trials, exhaustive, rng, "eq", None if name == "equality" else S_A)):
        differ = [bits[i - 1] for i in S_A] != [bits[i - 1] for i in S_B]
        expected = int(not differ) if name == "equality" else int(differ)
        res = model_forward(model, equality_tokens(bits), trace=True)
        tally.check(res.outputs[0], expected, {"case": t, "bits": bits})
        w = res.attention[0][0]
        tally.target(w[np.arange(N), targets].min())
        tally.rounding(w)
    return [tally.record(model, construction=name, variant=None, N=N, mode="exhaustive" if exhaustive else "random")]


def _verify_threshold(N: int, trials: int, seed: int, kc: int, exhaustive_max: int) -> list[dict]:
    out = []
    for variant in ("ineq", "disj"):
        model = build_default("threshold-ksparse", N, kc, seed, variant)
        feats = model.meta["features"]
        tally = _Tally(model.cfg.scale)
        exhaustive = N <= exhaustive_max
        rng = _rng(seed, N, "threshold-" + variant)
        for t, bits in enumerate(_bit_cases(N, trials, exhaustive, rng, variant)):
            res = model_forward(model, threshold_tokens(bits), trace=True)
            tally.check(res.outputs[0], oracle_boolean(variant, bits), {"case": t, "bits": bits})
            for h, w in enumerate(res.attention[0]):
                for i, (pos, _table) in enumerate(feats, start=1):
                    tgt = pos[h] if h < len(pos) else 0
                    tally.target(w[i, tgt])
                tally.rounding(w)
        out.append(tally.record(model, construction="threshold-ksparse", variant=variant, N=N, mode="exhaustive" if exhaustive else "random"))
    return out


def _verify_nearest(N: int, trials: int, seed: int, kc: int, gamma) -> list[dict]:
    out = []
    for variant, mqar in (("mqar", True), ("nearest", False)):
        sigma, d_in, g = nn_setup(N, mqar, gamma)
        model = build_default("nearest-neighbor", N, kc, seed, variant, gamma)
        tally = _Tally(model.cfg.scale)
        rng = _rng(seed, N, "nn-" + variant)
        error = None
        count = (trials + 1) // 2 if mqar else trials // 2
        for t in range(count):
            inst = gen_nn_instance(N, sigma, int(rng.integers(2**62)), mqar=mqar)
            first = inst.params["first_query"]
            queries = list(range(first, N + 1))
            try:
                expected = [oracle_nearest_neighbor(inst, q, g) for q in queries]
            except MarginViolation as exc:
                error = f"margin violation: {exc}"
                tally.first = {"case": t, "codes": list(inst.tokens), "gamma": _frac(g), "margin": inst.params["margin"]}
                break
            rows = nn_query_rows(N, first)
            res = model_forward(model, nn_tokens(inst.tokens, inst.params["labels"]), rows, trace=True)
            tally.check(res.outputs, expected, {"case": t, "codes": list(inst.tokens), "labels": list(inst.params["labels"])})
            w = res.attention[0][0]
            for q, r in zip(queries, rows):
                codes = inst.tokens
                dots = [d_in - 2 * bin(codes[q - 1] ^ codes[j]).count("1") for j in range(q - 1)]
                j = int(np.argmax(dots))
                tally.target(w[r, 2 * j])
        out.append(
            tally.record(
                model, construction="nearest-neighbor", variant=variant, N=N, mode="random", gamma=_frac(g), d_in=d_in, error=error
            )
        )
    return out


def verify_construction(
    name: str,
    N: int,
    trials: int,
    seed: int = 0,
    kc: int = 2,
    gamma=None,
    exhaustive_max: int = 12,
) -> list[dict]:
    """Compare construction ``name`` with its oracle at ``N``.

    Inputs of length at most ``exhaustive_max`` are checked exhaustively for
    the Boolean constructions; otherwise ``trials`` seeded inputs are drawn.
    """
    if name == "index-lookup":
        return _verify_index_lookup(N, trials, seed, kc)
    if name in ("equality", "partition-equality"):
        return _verify_equality(name, N, trials, seed, kc, exhaustive_max)
    if name == "threshold-ksparse":
        return _verify_threshold(N, trials, seed, kc, exhaustive_max)
    if name == "nearest-neighbor":
        return _verify_nearest(N, trials, seed, kc, gamma)
    raise ValueError(f"unknown construction {name!r}; choose from {', '.join(CONSTRUCTIONS)}")


# ---------------------------------------------------------------- protocols


def _partitions(kind: str, n: int, rng: np.random.Generator) -> Iterable[Partition]:
    if kind == "interleaved":
        return [Partition.interleaved(n)]
    if kind == "prefix":
        return [Partition.prefix(n, int(rng.integers(1, n)))]
    if kind == "random":
        return [Partition.random(n, rng)]
    if kind == "all":
        return [Partition.interleaved(n), Partition.prefix(n, int(rng.integers(1, n))), Partition.random(n, rng)]
    raise ValueError(f"unknown partition kind {kind!r}")


def run_protocol_sweep(name: str, N: int, trials: int, seed: int = 0, kc: int = 2, partition: str = "interleaved", p: int = 8) -> dict:
    rng = _rng(seed, N, name)
    rec: dict = {"protocol": name, "N": N, "cases": 0, "mismatches": 0, "first_counterexample": None, "error": None}

    def miss(case: dict) -> None:
        rec["mismatches"] += 1
        if rec["first_counterexample"] is None:
            rec["first_counterexample"] = case

    if name == "one-layer":
        model = build_default("index-lookup", N, kc, seed)
        rec.update(partition=partition, bound=None, max_bits=0, within_bound=True, itemized=None)
        for t in range(trials):
            inst = gen_index_lookup(N, IL_SIGMA, seed=int(rng.integers(2**62)))
            toks = index_lookup_tokens(inst.tokens, inst.params["position"])
            direct = model_forward(model, toks).outputs[0]
            for part in _partitions(partition, len(toks), rng):
                out, tr = run_one_layer_tf_protocol(model, toks, part)
                rec["cases"] += 1
                if out != direct:
                    miss({"case": t, "tokens": list(inst.tokens), "position": inst.params["position"], "partition": part.kind, "expected": direct, "got": out})
                rec["max_bits"] = max(rec["max_bits"], tr.total_bits)
                rec["within_bound"] = rec["within_bound"] and tr.meta["within_bound"]
                rec["bound"] = tr.meta["bound"]
                if rec["itemized"] is None:
                    rec["itemized"] = dict(sorted(tr.meta["itemized"].items()))
        rec["passed"] = rec["mismatches"] == 0 and rec["within_bound"] and rec["cases"] > 0
    elif name == "rnn-prefix":
        rnn = dfa_to_rnn(dyck22_dfa())
        rec.update(bound=rnn.state_bits, max_bits=0, exact_bits=True)
        for t in range(trials):
            s = gen_dyck22(N, int(rng.integers(2**62))).tokens
            direct = rnn_forward(rnn, s).outputs[-1]
            if direct != int(oracle_dyck(s)):
                miss({"case": t, "string": "".join(s), "expected": int(oracle_dyck(s)), "got": direct, "stage": "direct"})
            for K in range(1, len(s)):
                out, tr = run_rnn_prefix_protocol(rnn, s, K)
                rec["cases"] += 1
                rec["max_bits"] = max(rec["max_bits"], tr.total_bits)
                rec["exact_bits"] = rec["exact_bits"] and tr.total_bits == rnn.state_bits and len(tr.messages) == 1
                if out != direct:
                    miss({"case": t, "string": "".join(s), "K": K, "expected": direct, "got": out})
        rec["passed"] = rec["mismatches"] == 0 and rec["exact_bits"] and rec["cases"] > 0
    elif name == "index-reduction":
        rec.update(p=p, m=None, mp=None, floor_m=None, meets_floor=True)
        for t in range(trials):
            r = index_reduction(N, p, int(rng.integers(2**62)))
            rec["cases"] += 1
            rec.update(m=r["m"], mp=r["mp"], floor_m=r["floor_m"])
            rec["meets_floor"] = rec["meets_floor"] and r["meets_floor"]
            if not r["correct"]:
                miss({"case": t, **r})
        rec["passed"] = rec["mismatches"] == 0 and rec["meets_floor"] and rec["cases"] > 0
    elif name == "fooling-set":
        members = enumerate_dyck_fooling_set(N)
        rep = verify_fooling_property(members, N, check_pairs=N <= 10)
        rec.update(rep.to_dict())
        rec["cases"] = rep.pairs_checked
        rec["mismatches"] = rep.pair_failures
        rec["first_counterexample"] = rep.first_failure
        rec["passed"] = rep.passed
    else:
        raise ValueError(f"unknown protocol {name!r}; choose from {', '.join(PROTOCOLS)}")
    return rec


# ------------------------------------------------------------------- bounds


def bounds_report(N: int, p: int | None = None, H: int = 1, kc: int = 2, measure: bool = False, seed: int = 0) -> dict:
    """Recurrent floors at ``N`` with optional measured construction widths."""
    p = PrecisionConfig(N, kc).p if p is None else p
    rec = lower_bound_table(N, p, H)
    if measure:
        widths = measure_widths(N, kc, seed)
        floors = {
            "index-lookup": rec["index_lookup_m"],
            "equality": rec["equality_m"],
            "threshold-ksparse": rec["equality_m"],
            "nearest-neighbor": rec["nearest_neighbor_m"],
        }
        rec["widths"] = widths
        rec["below_floor"] = {k: widths[k] < floors[k] for k in widths}
    return rec


def log_fit(ns: Iterable[int], widths: Iterable[int]) -> dict:
    """Least-squares ``C`` for ``width ~ C log2 N`` and the worst relative residual."""
    ns, ws = list(ns), [float(w) for w in widths]
    xs = [math.log2(n) for n in ns]
    C = sum(x * w for x, w in zip(xs, ws)) / sum(x * x for x in xs)
    res = [abs(w - C * x) / w for x, w in zip(xs, ws)]
    return {"C": C, "max_rel_residual": max(res), "residuals": res}
