"""Families of nearly orthogonal sign vectors used as position and address codes.

A family stores the integer sign matrix ``T_s`` (entries in ``{-1, +1}``); the
unit vectors are ``T(i) = T_s(i) / sqrt(k)``.  All margin checks are done on the
exact integer Gram matrix, so ``<T(i), T(j)> = G[i, j] / k`` with no floating
error.

Two tolerance profiles exist:

``coarse``
    every off-diagonal dot product is at most ``1/4`` (one sided).
``fine``
    every off-diagonal dot product has magnitude at most ``gamma / 100``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

__all__ = [
    "JLFamily",
    "FamilyError",
    "suggest_dimension",
    "generate_family",
    "verify_family",
    "sign_vector",
    "family_to_csv",
    "family_from_csv",
]

PROFILES = ("coarse", "fine")


class FamilyError(ValueError):
    """Raised when no family satisfying the profile could be produced."""


@dataclass(frozen=True)
class JLFamily:
    count: int
    k: int
    profile: str
    seed: int
    signs: np.ndarray = field(repr=False)
    gamma: Fraction = Fraction(1, 4)
    attempts: int = 1
    method: str = "random"

    def __post_init__(self) -> None:
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")
        s = np.asarray(self.signs)
        if s.shape != (self.count, self.k):
            raise ValueError(f"sign matrix has shape {s.shape}, expected {(self.count, self.k)}")
        if not np.isin(s, (-1, 1)).all():
            raise ValueError("sign matrix entries must be +-1")
        s = s.astype(np.int8)
        s.setflags(write=False)
        object.__setattr__(self, "signs", s)
        object.__setattr__(self, "gamma", Fraction(self.gamma))

    def vectors(self) -> np.ndarray:
        """Float view ``T = T_s / sqrt(k)``, for display only."""
        return self.signs.astype(np.float64) / math.sqrt(self.k)

    def gram(self) -> np.ndarray:
        s = self.signs.astype(np.int64)
        return s @ s.T


@dataclass(frozen=True)
class FamilyReport:
    max_offdiag: Fraction | None
    min_diag: Fraction
    passed: bool
    worst_pair: tuple[int, int] | None

    def to_dict(self) -> dict:
        return {
            "max_offdiag": None if self.max_offdiag is None else str(self.max_offdiag),
            "min_diag": str(self.min_diag),
            "pass": self.passed,
            "worst_pair": None if self.worst_pair is None else list(self.worst_pair),
        }


def suggest_dimension(count: int, gamma=Fraction(1, 4), c: float = 8.0) -> int:
    """``ceil(c * ln(2 * count) / gamma**2)``, at least 1."""
    g = float(gamma)
    return max(1, math.ceil(c * math.log(2 * max(count, 1)) / (g * g)))


def _violations(gram: np.ndarray, k: int, profile: str, gamma: Fraction) -> np.ndarray:
    """Boolean matrix of off-diagonal pairs breaking the profile bound."""
    off = ~np.eye(gram.shape[0], dtype=bool)
    if profile == "coarse":
        bad = 4 * gram > k
    else:
        bad = 100 * gamma.denominator * np.abs(gram) > gamma.numerator * k
    return bad & off


def verify_family(f: JLFamily) -> FamilyReport:
    g = f.gram()
    diag = np.diag(g)
    min_diag = Fraction(int(diag.min()), f.k)
    if f.count < 2:
        return FamilyReport(None, min_diag, bool(min_diag == 1), None)
    off = ~np.eye(f.count, dtype=bool)
    if f.profile == "coarse":
        score = np.where(off, g, np.iinfo(np.int64).min)
    else:
        score = np.where(off, np.abs(g), -1)
    i, j = np.unravel_index(int(np.argmax(score)), score.shape)
    worst = Fraction(int(score[i, j]), f.k)
    bad = _violations(g, f.k, f.profile, f.gamma)
    passed = bool(min_diag == 1 and not bad.any())
    pair = (int(min(i, j)) + 1, int(max(i, j)) + 1)
    return FamilyReport(worst, min_diag, passed, pair)


def _hadamard_rows(count: int, k: int, rng: np.random.Generator) -> np.ndarray:
    if k & (k - 1) or k < count:
        raise FamilyError(f"hadamard method needs a power-of-two k >= count, got k={k}, count={count}")
    h = np.ones((1, 1), dtype=np.int8)
    while h.shape[0] < k:
        h = np.block([[h, h], [h, -h]])
    rows = rng.permutation(k)[:count]
    flips = rng.choice(np.array([-1, 1], dtype=np.int8), size=k)
    return h[rows] * flips


def generate_family(
    count: int,
    k: int,
    profile: str = "coarse",
    seed: int = 0,
    *,
    gamma=Fraction(1, 4),
    method: str = "random",
    max_attempts: int = 64,
) -> JLFamily:
    """Seeded sample-and-verify construction of a sign-vector family.

    ``method="random"`` draws i.i.d. signs and retries with ``seed + 1``,
    ``seed + 2``, ... until the profile holds.  ``method="hadamard"`` takes a
    seeded subset of Sylvester-Hadamard rows with random column flips; the
    rows are exactly orthogonal, so it satisfies either profile whenever ``k``
    is a power of two no smaller than ``count``.
    """
    if count < 1 or k < 1:
        raise ValueError("count and k must be positive")
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    gamma = Fraction(gamma).limit_denominator(10**9) if isinstance(gamma, float) else Fraction(gamma)
    first_bad = None
    for attempt in range(max_attempts):
        rng = np.random.default_rng(seed + attempt)
        if method == "random":
            signs = rng.choice(np.array([-1, 1], dtype=np.int8), size=(count, k))
        elif method == "hadamard":
            signs = _hadamard_rows(count, k, rng)
        else:
            raise ValueError(f"unknown method {method!r}")
        fam = JLFamily(count, k, profile, seed, signs, gamma, attempt + 1, method)
        rep = verify_family(fam)
        if rep.passed:
            return fam
        if first_bad is None:
            first_bad = (rep.worst_pair, rep.max_offdiag)
    pair, val = first_bad
    raise FamilyError(
        f"no {profile} family of {count} vectors in {k} dimensions after {max_attempts} attempts; "
        f"first violated pair {pair} has dot product {val}"
    )


def sign_vector(f: JLFamily, i: int) -> np.ndarray:
    """``T_s(i)`` for 1-based ``i``."""
    if not 1 <= i <= f.count:
        raise IndexError(f"vector index {i} outside 1..{f.count}")
    return f.signs[i - 1].astype(np.int64)


def family_to_csv(f: JLFamily) -> str:
    buf = io.StringIO()
    buf.write(f"# k={f.k} count={f.count} profile={f.profile} seed={f.seed} "
              f"gamma={f.gamma} method={f.method} attempts={f.attempts}\n")
    w = csv.writer(buf, lineterminator="\n")
    for row in f.signs:
        w.writerow(int(v) for v in row)
    return buf.getvalue()


def family_from_csv(text: str) -> JLFamily:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError("missing family header line")
    meta = dict(tok.split("=", 1) for tok in lines[0][1:].split())
    rows = [[int(v) for v in r] for r in csv.reader(lines[1:]) if r]
    k = int(meta["k"])
    signs = np.array(rows, dtype=np.int8).reshape(len(rows), k)
    return JLFamily(
        count=len(rows),
        k=k,
        profile=meta.get("profile", "coarse"),
        seed=int(meta.get("seed", 0)),
        signs=signs,
        gamma=Fraction(meta.get("gamma", "1/4")),
        attempts=int(meta.get("attempts", 1)),
        method=meta.get("method", "random"),
    )
