"""Fixed-point numbers on the grid ``{t / S : |t| <= S * B}`` with ``S = B = N**Kc``.

Every value is stored as an integer tick count.  Rounding is always toward
negative infinity and every result saturates at ``+-B``.  Besides the scalar
:class:`FixedNum` type, the module exposes tick-array kernels
(:func:`matmul_ticks`, :func:`exp_ticks`, :func:`softmax_ticks`) that the
Transformer evaluator and the protocols share, so both produce bit-identical
results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from functools import total_ordering
from numbers import Rational
from typing import Iterable, Sequence

import mpmath
import numpy as np
import scipy.sparse as sp

__all__ = [
    "PrecisionConfig",
    "FixedNum",
    "quantize",
    "quantize_ticks",
    "fp_arith",
    "fp_exp",
    "stable_softmax",
    "saturate",
    "exp_ticks",
    "softmax_ticks",
    "matmul_ticks",
    "col_l1",
    "scale_ticks",
    "inv_sqrt_ticks",
]

_MP_DIGITS = 60
# Float results closer than this (in ticks) to an integer are recomputed with mpmath.
_BORDER = 1e-6


@dataclass(frozen=True)
class PrecisionConfig:
    """Grid parameters derived from the maximum sequence length ``N``."""

    N: int
    Kc: int = 2

    def __post_init__(self) -> None:
        if not isinstance(self.N, int) or self.N < 2:
            raise ValueError(f"N must be an integer >= 2, got {self.N!r}")
        if not isinstance(self.Kc, int) or self.Kc < 1:
            raise ValueError(f"Kc must be a positive integer, got {self.Kc!r}")

    @property
    def scale(self) -> int:
        """Ticks per unit, ``1 / step``."""
        return self.N**self.Kc

    @property
    def step(self) -> Fraction:
        return Fraction(1, self.scale)

    @property
    def bound(self) -> Fraction:
        return Fraction(self.N**self.Kc)

    @property
    def bound_ticks(self) -> int:
        return self.scale * self.N**self.Kc

    @property
    def p(self) -> int:
        """Smallest integer ``p`` with ``2**p >= N**(2*Kc)``."""
        return (self.N ** (2 * self.Kc) - 1).bit_length()

    @property
    def log_n_bits(self) -> int:
        """``ceil(log2 N)``."""
        return (self.N - 1).bit_length()

    def to_dict(self) -> dict:
        return {"N": self.N, "Kc": self.Kc}


def _as_fraction(x) -> Fraction:
    if isinstance(x, FixedNum):
        return x.value
    if isinstance(x, (int, Fraction, Rational)):
        return Fraction(x)
    if isinstance(x, (float, np.floating)):
        if not math.isfinite(x):
            raise ValueError(f"cannot quantize non-finite value {x!r}")
        return Fraction(float(x))
    if isinstance(x, Decimal):
        if not x.is_finite():
            raise ValueError(f"cannot quantize non-finite value {x!r}")
        return Fraction(x)
    if isinstance(x, np.integer):
        return Fraction(int(x))
    raise TypeError(f"unsupported numeric type {type(x).__name__}")


def quantize_ticks(x, cfg: PrecisionConfig) -> int:
    """Tick count of the largest grid value ``<= x``, saturated to ``+-B``."""
    if isinstance(x, mpmath.mpf):
        if not mpmath.isfinite(x):
            raise ValueError(f"cannot quantize non-finite value {x!r}")
        with mpmath.workdps(_MP_DIGITS):
            t = int(mpmath.floor(x * cfg.scale))
    else:
        t = math.floor(_as_fraction(x) * cfg.scale)
    lim = cfg.bound_ticks
    return max(-lim, min(lim, t))


def quantize(x, cfg: PrecisionConfig) -> "FixedNum":
    return FixedNum(quantize_ticks(x, cfg), cfg)


@total_ordering
@dataclass(frozen=True)
class FixedNum:
    """A grid value ``ticks / cfg.scale``."""

    ticks: int
    cfg: PrecisionConfig

    def __post_init__(self) -> None:
        if abs(self.ticks) > self.cfg.bound_ticks:
            raise ValueError("tick count outside the saturation range")

    @property
    def value(self) -> Fraction:
        return Fraction(self.ticks, self.cfg.scale)

    def __float__(self) -> float:
        return self.ticks / self.cfg.scale

    def __repr__(self) -> str:
        return f"FixedNum({self.value}, N={self.cfg.N}, Kc={self.cfg.Kc})"

    def _check(self, other: "FixedNum") -> None:
        if not isinstance(other, FixedNum):
            raise TypeError("FixedNum arithmetic needs FixedNum operands")
        if other.cfg != self.cfg:
            raise ValueError("precision configs differ")

    def __add__(self, other: "FixedNum") -> "FixedNum":
        return fp_arith(self, other, "add")

    def __sub__(self, other: "FixedNum") -> "FixedNum":
        return fp_arith(self, other, "sub")

    def __mul__(self, other: "FixedNum") -> "FixedNum":
        return fp_arith(self, other, "mul")

    def __neg__(self) -> "FixedNum":
        return FixedNum(-self.ticks, self.cfg)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FixedNum):
            return NotImplemented
        return self.cfg == other.cfg and self.ticks == other.ticks

    def __hash__(self) -> int:
        return hash((self.ticks, self.cfg))

    def __lt__(self, other: "FixedNum") -> bool:
        self._check(other)
        return self.ticks < other.ticks


def _clamp(t: int, cfg: PrecisionConfig) -> int:
    lim = cfg.bound_ticks
    return max(-lim, min(lim, t))


def fp_arith(a: FixedNum, b: FixedNum, kind: str) -> FixedNum:
    """Exact rational result of ``a <kind> b`` floored back onto the grid."""
    a._check(b)
    cfg = a.cfg
    if kind == "add":
        t = a.ticks + b.ticks
    elif kind == "sub":
        t = a.ticks - b.ticks
    elif kind == "mul":
        t = (a.ticks * b.ticks) // cfg.scale
    else:
        raise ValueError(f"unknown operation {kind!r}")
    return FixedNum(_clamp(t, cfg), cfg)


def _exp_ticks_exact(t: int, scale: int) -> int:
    with mpmath.workdps(_MP_DIGITS):
        return int(mpmath.floor(mpmath.exp(mpmath.mpf(t) / scale) * scale))


def exp_ticks(diff: np.ndarray, scale: int, bound_ticks: int | None = None) -> np.ndarray:
    """``floor(S * exp(t / S))`` elementwise for an integer tick array ``t``.

    Evaluated in float64 with an mpmath fallback for entries whose scaled
    value lands within a hair of an integer, so the floor is always exact.
    """
    t = np.asarray(diff, dtype=np.int64)
    x = t.astype(np.float64) / scale
    with np.errstate(over="ignore", under="ignore"):
        y = np.exp(x) * scale
    if bound_ticks is not None:
        y = np.minimum(y, float(bound_ticks) + 2.0)
    out = np.floor(y)
    near = np.abs(y - np.rint(y)) < _BORDER * np.maximum(1.0, y * 1e-9)
    near &= np.rint(y) >= 1.0
    near &= t != 0
    res = out.astype(np.int64)
    if near.any():
        for idx in zip(*np.nonzero(near)):
            res[idx] = _exp_ticks_exact(int(t[idx]), scale)
    if bound_ticks is not None:
        np.minimum(res, bound_ticks, out=res)
    return res


def fp_exp(a: FixedNum) -> FixedNum:
    """Grid floor of ``exp(a)``, saturated at ``B``."""
    cfg = a.cfg
    if a.ticks == 0:
        return FixedNum(cfg.scale, cfg)
    if a.ticks > 0 and a.value > 64 * cfg.Kc * math.log(cfg.N) + 1:
        return FixedNum(cfg.bound_ticks, cfg)
    t = int(exp_ticks(np.array([a.ticks]), cfg.scale, cfg.bound_ticks)[0])
    return FixedNum(_clamp(t, cfg), cfg)


def saturate(ticks: np.ndarray, cfg: PrecisionConfig) -> np.ndarray:
    lim = cfg.bound_ticks
    return np.clip(ticks, -lim, lim)


def softmax_ticks(logits: np.ndarray, scale: int, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise stable softmax on tick arrays.

    The row maximum is subtracted, each exponential is floored to the grid,
    the denominator is the exact integer sum and each weight is the floor of
    the exact quotient.  Masked-out entries get weight zero.
    """
    z = np.atleast_2d(np.asarray(logits, dtype=np.int64))
    if z.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    if mask is not None:
        mask = np.broadcast_to(np.atleast_2d(mask), z.shape)
        big = np.iinfo(np.int64).min
        m = np.where(mask, z, big).max(axis=1, keepdims=True)
        if (m == big).any():
            raise ValueError("softmax row with every entry masked")
        diff = np.where(mask, z - m, 0)
    else:
        m = z.max(axis=1, keepdims=True)
        diff = z - m
    e = exp_ticks(diff, scale)
    if mask is not None:
        e = np.where(mask, e, 0)
    total = e.sum(axis=1, keepdims=True)
    return (e * scale) // total


def stable_softmax(logits: Sequence[FixedNum]) -> list[FixedNum]:
    if len(logits) == 0:
        raise ValueError("softmax of an empty vector")
    cfg = logits[0].cfg
    for x in logits:
        if x.cfg != cfg:
            raise ValueError("precision configs differ")
    w = softmax_ticks(np.array([[x.ticks for x in logits]], dtype=np.int64), cfg.scale)[0]
    return [FixedNum(int(t), cfg) for t in w]


def _max_abs(a) -> int:
    if sp.issparse(a):
        if a.nnz == 0:
            return 0
        return int(np.abs(a.data).max())
    if a.size == 0:
        return 0
    return int(np.abs(a).max())


def col_l1(b) -> int:
    """Largest column L1 norm of a (possibly sparse) integer matrix."""
    if sp.issparse(b):
        if b.nnz == 0:
            return 0
        return int(abs(b).sum(axis=0).max())
    b = np.asarray(b)
    if b.size == 0:
        return 0
    return int(np.abs(b).sum(axis=0).max())


def matmul_ticks(a: np.ndarray, b, cfg: PrecisionConfig, b_l1: int | None = None) -> np.ndarray:
    """Grid product of tick matrices: ``floor((a @ b) / S)`` then saturate.

    The integer product is accumulated exactly.  With ``A = max|a|`` and
    ``C`` the largest column L1 norm of ``b``, every partial sum is bounded by
    ``A * C``; float64 BLAS is used when that is below ``2**53``, int64 when
    below ``2**62``, and Python integers otherwise.  ``b`` may be a scipy
    sparse matrix; ``b_l1`` lets callers pass a precomputed ``C``.
    """
    a = np.asarray(a, dtype=np.int64)
    if b_l1 is None:
        b_l1 = col_l1(b)
    bound = _max_abs(a) * b_l1
    no_clip = bound // cfg.scale < cfg.bound_ticks
    if bound < 2**53:
        if sp.issparse(b):
            bf = b if b.dtype == np.float64 else b.astype(np.float64)
            prod = np.asarray(a.astype(np.float64) @ bf)
        else:
            prod = a.astype(np.float64) @ np.asarray(b, dtype=np.float64)
        prod = np.rint(prod).astype(np.int64)
    elif bound < 2**62:
        bi = b.astype(np.int64) if sp.issparse(b) else np.asarray(b, dtype=np.int64)
        prod = np.asarray(a @ bi)
    else:
        bd = b.toarray() if sp.issparse(b) else np.asarray(b)
        prod = np.asarray(a.astype(object) @ bd.astype(np.int64).astype(object))
        prod = prod // cfg.scale
        lim = cfg.bound_ticks
        return np.array(
            [[max(-lim, min(lim, int(v))) for v in row] for row in np.atleast_2d(prod)],
            dtype=np.int64,
        ).reshape(prod.shape)
    if no_clip:
        return prod // cfg.scale
    return saturate(prod // cfg.scale, cfg)


def scale_ticks(eta: int, x: np.ndarray, cfg: PrecisionConfig) -> np.ndarray:
    """Grid product of the scalar ``eta`` (ticks) with every entry of ``x``."""
    x = np.asarray(x, dtype=np.int64)
    if abs(eta) * _max_abs(x) < 2**62:
        return saturate((x * eta) // cfg.scale, cfg)
    out = [(int(v) * eta) // cfg.scale for v in x.ravel()]
    return saturate(np.array(out, dtype=object).astype(np.int64).reshape(x.shape), cfg)


def inv_sqrt_ticks(k: int, cfg: PrecisionConfig, sign: int = 1) -> int:
    """Exact ticks of ``sign / sqrt(k)`` (floor), via integer square roots."""
    q = math.isqrt(cfg.scale * cfg.scale // k)
    if sign >= 0:
        return q
    # floor(-x) = -ceil(x); x = S/sqrt(k) is an integer only for perfect ratios
    exact = q * q * k == cfg.scale * cfg.scale
    return -q if exact else -(q + 1)


def grid_sum(values: Iterable[FixedNum]) -> FixedNum:
    """Left fold of grid additions."""
    it = iter(values)
    acc = next(it)
    for v in it:
        acc = acc + v
    return acc
