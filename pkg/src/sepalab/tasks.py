"""Seeded task generators and brute-force oracles.

Every generator is a pure function of its arguments: the same ``(kind,
params, seed)`` always yields the same :class:`TaskInstance`.  Labels are
computed by the matching oracle, never assumed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Sequence, TextIO

import numpy as np

__all__ = [
    "TaskInstance",
    "MarginViolation",
    "gen_index_lookup",
    "oracle_index",
    "oracle_dyck",
    "gen_dyck22",
    "corrupt_dyck",
    "gen_equality",
    "oracle_equality_instance",
    "ncp_labels",
    "gen_nn_instance",
    "gen_assoc_recall",
    "oracle_nearest_neighbor",
    "nn_margin",
    "default_nn_sigma",
    "code_to_signs",
    "oracle_boolean",
    "instance_to_json",
    "instance_from_json",
    "write_jsonl",
    "read_jsonl",
    "GENERATORS",
]

KINDS = ("index_lookup", "dyck22", "eq_random", "eq_one", "eq_ncp", "nearest_neighbor", "mqar", "assoc_recall")
BRACKETS = ("()", "[]", "{}", "<>")
ALL_VALID = -1
END = -2


class MarginViolation(ValueError):
    """The nearest stored point is not unique by the required margin."""


@dataclass(frozen=True)
class TaskInstance:
    kind: str
    tokens: tuple
    label: Any
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


# ------------------------------------------------------------------ index lookup


def oracle_index(tokens: Sequence, p: int):
    """Symbol at 1-based position ``p``."""
    if not 1 <= p <= len(tokens):
        raise IndexError(f"position {p} outside 1..{len(tokens)}")
    return tokens[p - 1]


def gen_index_lookup(N: int, sigma_size: int = 64, seed: int = 0, variable_length: bool = False) -> TaskInstance:
    """Symbols i.i.d. uniform over ``range(sigma_size)`` and a uniform query position.

    With ``variable_length`` the length is uniform on ``[10, N]`` (so ``N``
    must be at least 10); otherwise it is exactly ``N``.
    """
    if sigma_size < 2:
        raise ValueError("sigma_size must be at least 2")
    if variable_length and N < 10:
        raise ValueError("variable-length index lookup needs N >= 10")
    if N < 1:
        raise ValueError("N must be positive")
    rng = _rng(seed)
    length = int(rng.integers(10, N + 1)) if variable_length else N
    tokens = tuple(int(v) for v in rng.integers(0, sigma_size, size=length))
    p = int(rng.integers(1, length + 1))
    return TaskInstance(
        "index_lookup",
        tokens,
        oracle_index(tokens, p),
        seed,
        {"N": N, "sigma_size": sigma_size, "length": length, "position": p, "variable_length": variable_length},
    )


# ------------------------------------------------------------------------ dyck


def oracle_dyck(s: Sequence[str], n_types: int = 2, depth_cap: int | None = 2) -> bool:
    """Membership in the Dyck language over ``n_types`` bracket pairs with
    at most ``depth_cap`` unclosed brackets in every prefix (``None``: no cap)."""
    if not 1 <= n_types <= len(BRACKETS):
        raise ValueError(f"n_types must be between 1 and {len(BRACKETS)}")
    opens = {BRACKETS[i][0]: BRACKETS[i][1] for i in range(n_types)}
    closes = set(opens.values())
    stack: list[str] = []
    for ch in s:
        if ch in opens:
            stack.append(opens[ch])
            if depth_cap is not None and len(stack) > depth_cap:
                return False
        elif ch in closes:
            if not stack or stack.pop() != ch:
                return False
        else:
            return False
    return not stack


def _dyck_positive(N: int, rng: np.random.Generator) -> str:
    out: list[str] = []
    stack: list[str] = []
    for _ in range(N - 2):
        if len(stack) >= 2:
            out.append(stack.pop())
            continue
        opts = ["(", "["] + ([stack[-1]] if stack else [])
        ch = opts[int(rng.integers(len(opts)))]
        if ch in "([":
            stack.append(")" if ch == "(" else "]")
        else:
            stack.pop()
        out.append(ch)
    if stack:
        out.extend(reversed(stack))
    else:
        out.append("(" if rng.integers(2) == 0 else "[")
        out.append(")" if out[-1] == "(" else "]")
    return "".join(out)


_SWAP_TYPE = {"(": "[", "[": "(", ")": "]", "]": ")"}
_FLIP_DIR = {"(": ")", ")": "(", "[": "]", "]": "["}


def corrupt_dyck(s: str, rng: np.random.Generator) -> str:
    """Change ``k ~ U{1..max(1, N/10)}`` distinct positions; each either swaps
    bracket type or direction with probability 1/2."""
    n = len(s)
    k = int(rng.integers(1, max(1, n // 10) + 1))
    idx = rng.choice(n, size=k, replace=False)
    chars = list(s)
    for i in idx:
        table = _SWAP_TYPE if rng.random() < 0.5 else _FLIP_DIR
        chars[i] = table[chars[i]]
    return "".join(chars)


def gen_dyck22(N: int, seed: int = 0, max_retries: int = 100) -> TaskInstance:
    """Length-``N`` string, well-nested with depth at most 2 with probability 1/2."""
    if N < 4 or N % 2:
        raise ValueError("N must be even and at least 4")
    rng = _rng(seed)
    positive = bool(rng.random() < 0.5)
    s = _dyck_positive(N, rng)
    retries = 0
    if not positive:
        base = s
        while True:
            s = corrupt_dyck(base, rng)
            if not oracle_dyck(s, 2, 2):
                break
            retries += 1
            if retries >= max_retries:
                raise RuntimeError("corruption kept producing members of the language")
    return TaskInstance("dyck22", tuple(s), int(oracle_dyck(s, 2, 2)), seed, {"N": N, "retries": retries})


# -------------------------------------------------------------------- equality


def ncp_labels(tokens: Sequence[int], sep: int) -> tuple[int, ...]:
    """Per-prefix next-token labels: ``-1`` before the separator (anything may
    follow), the forced copy token afterwards and ``-2`` at the end."""
    h = list(tokens).index(sep)
    first = tokens[:h]
    out = []
    for t in range(1, len(tokens) + 1):
        if t <= h:
            out.append(ALL_VALID)
        elif t - h - 1 < len(first):
            out.append(int(first[t - h - 1]))
        else:
            out.append(END)
    return tuple(out)


def oracle_equality_instance(inst: TaskInstance):
    sep = inst.params["sep"]
    toks = list(inst.tokens)
    if inst.kind == "eq_ncp":
        return ncp_labels(toks, sep)
    h = toks.index(sep)
    return int(toks[:h] == toks[h + 1 :])


def gen_equality(
    variant: str,
    N: int,
    sigma_size: int | None = None,
    seed: int = 0,
    fixed_length: bool = True,
) -> TaskInstance:
    """Equality data in three variants.

    ``random``: binary halves, the second a copy with probability 1/2 and
    fresh otherwise.  ``one``: the second half is a copy, and with
    probability 1/2 exactly one position is changed.  ``ncp``: always a copy,
    labelled per prefix.  The separator token is the integer ``sigma_size``.
    Without ``fixed_length`` the total length is drawn from
    ``{N/10, N/10 + 2, ..., N}`` (rounded up to even).
    """
    if variant not in ("random", "one", "ncp"):
        raise ValueError(f"unknown equality variant {variant!r}")
    if N < 2 or N % 2:
        raise ValueError("N must be even and at least 2")
    if sigma_size is None:
        sigma_size = 2 if variant == "random" else 1024
    if sigma_size < 2:
        raise ValueError("sigma_size must be at least 2")
    rng = _rng(seed)
    if fixed_length:
        length = N
    else:
        lo = max(2, -(-N // 10))
        lo += lo % 2
        length = int(rng.choice(np.arange(lo, N + 1, 2)))
    half = length // 2
    first = [int(v) for v in rng.integers(0, sigma_size, size=half)]
    params: dict = {"N": N, "sigma_size": sigma_size, "length": length, "sep": sigma_size}
    if variant == "random":
        copy = bool(rng.random() < 0.5)
        second = list(first) if copy else [int(v) for v in rng.integers(0, sigma_size, size=half)]
        params["copied"] = copy
    elif variant == "one":
        second = list(first)
        if rng.random() < 0.5:
            j = int(rng.integers(half))
            shift = int(rng.integers(1, sigma_size))
            second[j] = (second[j] + shift) % sigma_size
            params["changed"] = j + 1
    else:
        second = list(first)
    tokens = tuple(first + [sigma_size] + second)
    inst = TaskInstance("eq_" + variant, tokens, None, seed, params)
    return TaskInstance(inst.kind, tokens, oracle_equality_instance(inst), seed, params)


# ----------------------------------------------------------- nearest neighbour


def code_to_signs(code: int, d: int) -> np.ndarray:
    """Big-endian bits of ``code`` as a ``+-1`` vector of length ``d``."""
    return np.array([1 if (code >> (d - 1 - j)) & 1 else -1 for j in range(d)], dtype=np.int64)


def _dot(a: int, b: int, d: int) -> int:
    """``d * <x_a, x_b>`` for hypercube points ``x = signs / sqrt(d)``."""
    return d - 2 * bin((a ^ b) & ((1 << d) - 1)).count("1")


def _nn_scan(codes: Sequence[int], k: int, d: int) -> tuple[int, int]:
    """(argmax j, gap in units of 1/d) over ``x_1 .. x_{k-1}`` for query ``x_k``."""
    q = codes[k - 1]
    dots = [_dot(q, codes[i], d) for i in range(k - 1)]
    order = sorted(range(k - 1), key=lambda i: -dots[i])
    top = order[0]
    gap = dots[top] - dots[order[1]] if len(order) > 1 else 2 * d
    return top + 1, gap


def oracle_nearest_neighbor(inst: TaskInstance, k: int, gamma=None):
    """Label of the stored point with the largest inner product with ``x_k``.

    Dot products are exact (integers over ``d``).  A tie, or a gap below
    ``gamma`` when given, raises :class:`MarginViolation`.
    """
    N, d = inst.params["N"], inst.params["d"]
    if not N // 2 < k <= len(inst.tokens):
        raise ValueError(f"query index {k} outside ({N // 2}, {len(inst.tokens)}]")
    j, gap = _nn_scan(inst.tokens, k, d)
    need = 1 if gamma is None else max(1, Fraction(gamma) * d)
    if gap < need:
        raise MarginViolation(f"query {k}: nearest-point gap {Fraction(gap, d)} below required margin")
    return int(inst.params["labels"][j - 1])


def nn_margin(inst: TaskInstance) -> Fraction:
    """Smallest top-minus-second inner-product gap over all queries."""
    N, d = inst.params["N"], inst.params["d"]
    gaps = [_nn_scan(inst.tokens, k, d)[1] for k in range(N // 2 + 1, len(inst.tokens) + 1)]
    return Fraction(min(gaps), d)


def default_nn_sigma(N: int, mqar: bool) -> int:
    """``2N`` codes for recall; ``N**2`` for fresh queries, which need room
    for every query to have a unique nearest earlier point."""
    return 2 * N if mqar else max(4, N * N)


def _nn_build(N, sigma_size, seed, mqar, n_queries, kind) -> TaskInstance:
    if N < 2 or N % 2:
        raise ValueError("N must be even and at least 2")
    if sigma_size is None:
        sigma_size = default_nn_sigma(N, mqar)
    if sigma_size < 2:
        raise ValueError("sigma_size must be at least 2")
    d = max(1, (sigma_size - 1).bit_length())
    half = N // 2
    need = half if mqar else half + n_queries
    if sigma_size < need:
        raise ValueError(f"need {need} distinct vectors but sigma_size is {sigma_size}")
    rng = _rng(seed)
    for _attempt in range(100):
        stored = [int(c) for c in rng.choice(sigma_size, size=half, replace=False)]
        labels = [int(v) for v in rng.integers(0, 2, size=half)]
        codes = list(stored)
        if mqar:
            codes += [stored[i] for i in rng.permutation(half)[:n_queries]]
        else:
            pool = [int(c) for c in rng.permutation(sigma_size) if int(c) not in set(stored)]
            ok = True
            for _ in range(n_queries):
                for idx, cand in enumerate(pool):
                    _, gap = _nn_scan(codes + [cand], len(codes) + 1, d)
                    if gap > 0:
                        codes.append(cand)
                        pool.pop(idx)
                        break
                else:
                    ok = False
                    break
            if not ok:
                continue
        for k in range(half + 1, len(codes) + 1):
            j, gap = _nn_scan(codes, k, d)
            if gap <= 0:
                raise AssertionError("generator produced a tie")
            labels.append(labels[j - 1])
        params = {"N": N, "sigma_size": sigma_size, "d": d, "labels": labels, "first_query": half + 1}
        inst = TaskInstance(kind, tuple(codes), tuple(labels[half:]), seed, params)
        params["margin"] = str(nn_margin(inst))
        return inst
    raise ValueError("could not place queries with a unique nearest neighbour")


def gen_nn_instance(N: int, sigma_size: int | None = None, seed: int = 0, mqar: bool = False) -> TaskInstance:
    """Points ``x_1 .. x_N`` on the hypercube ``{-1, 1}^d / sqrt(d)``.

    Points are codes in ``range(sigma_size)`` (``d = ceil(log2 sigma_size)``);
    the first ``N/2`` are distinct and carry random labels.  Queries
    ``x_{N/2+1} .. x_N`` are a permutation of the stored codes when ``mqar``,
    otherwise fresh unused codes whose nearest earlier point is unique, so
    every gap is at least ``2/d``.  Query labels are the nearest point's label.
    """
    return _nn_build(N, sigma_size, seed, mqar, N // 2, "mqar" if mqar else "nearest_neighbor")


def gen_assoc_recall(N: int, sigma_size: int | None = None, seed: int = 0) -> TaskInstance:
    """Single-query recall: ``N/2`` stored key/label pairs and one repeated key."""
    return _nn_build(N, sigma_size, seed, True, 1, "assoc_recall")


# --------------------------------------------------------------- boolean oracles


def oracle_boolean(kind: str, x: Sequence[int], **kw) -> int:
    """Reference Boolean functions on bit strings.

    ``eq``/``ineq``: compare the two halves.  ``disj``: 1 iff the halves share
    a 1 at some aligned position.  ``index``: ``x`` holds ``a`` followed by
    ``b`` with keyword ``position`` (1-based) giving the queried bit.
    ``threshold``: keyword ``features`` (callables or ``(positions, table)``)
    and ``b``; 1 iff the feature sum exceeds ``b``.
    """
    x = [int(v) for v in x]
    if kind in ("eq", "ineq", "disj"):
        if len(x) % 2:
            raise ValueError(f"{kind} needs an even-length input")
        h = len(x) // 2
        a, b = x[:h], x[h:]
        if kind == "eq":
            return int(a == b)
        if kind == "ineq":
            return int(a != b)
        return int(any(u and v for u, v in zip(a, b)))
    if kind == "index":
        p = kw["position"]
        if not 1 <= p <= len(x):
            raise ValueError("position outside the input")
        return x[p - 1]
    if kind == "threshold":
        total = 0
        for f in kw["features"]:
            if callable(f):
                total += int(f(x))
            else:
                pos, table = f
                a = 0
                for q in pos:
                    a = 2 * a + x[q - 1]
                total += int(table[a])
        return int(total > Fraction(kw["b"]))
    raise ValueError(f"unknown boolean kind {kind!r}")


# ------------------------------------------------------------------------ JSONL


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(u) for u in v]
    if isinstance(v, list):
        return [_plain(u) for u in v]
    if isinstance(v, dict):
        return {k: _plain(u) for k, u in v.items()}
    if isinstance(v, np.integer):
        return int(v)
    return v


def instance_to_json(inst: TaskInstance) -> dict:
    return {
        "kind": inst.kind,
        "seed": inst.seed,
        "params": _plain(inst.params),
        "tokens": _plain(inst.tokens),
        "label": _plain(inst.label),
    }


def instance_from_json(d: dict) -> TaskInstance:
    label = d["label"]
    if isinstance(label, list):
        label = tuple(label)
    return TaskInstance(d["kind"], tuple(d["tokens"]), label, d["seed"], dict(d["params"]))


def write_jsonl(instances: Iterable[TaskInstance], fp: TextIO) -> int:
    n = 0
    for inst in instances:
        fp.write(json.dumps(instance_to_json(inst), sort_keys=True, separators=(",", ":")) + "\n")
        n += 1
    return n


def read_jsonl(fp: TextIO) -> list[TaskInstance]:
    return [instance_from_json(json.loads(line)) for line in fp if line.strip()]


GENERATORS = {
    "index_lookup": lambda N, seed, **kw: gen_index_lookup(N, kw.get("sigma_size") or 64, seed, kw.get("variable_length", False)),
    "dyck22": lambda N, seed, **kw: gen_dyck22(N, seed),
    "eq_random": lambda N, seed, **kw: gen_equality("random", N, kw.get("sigma_size"), seed, not kw.get("variable_length", False)),
    "eq_one": lambda N, seed, **kw: gen_equality("one", N, kw.get("sigma_size"), seed, not kw.get("variable_length", False)),
    "eq_ncp": lambda N, seed, **kw: gen_equality("ncp", N, kw.get("sigma_size"), seed, not kw.get("variable_length", False)),
    "nearest_neighbor": lambda N, seed, **kw: gen_nn_instance(N, kw.get("sigma_size"), seed, False),
    "mqar": lambda N, seed, **kw: gen_nn_instance(N, kw.get("sigma_size"), seed, True),
    "assoc_recall": lambda N, seed, **kw: gen_assoc_recall(N, kw.get("sigma_size"), seed),
}
