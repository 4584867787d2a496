"""Explicit finite-precision Transformer weights for the separation tasks.

Each ``build_*`` function returns a :class:`~sepalab.transformer_core.TransformerModel`
whose weights are fixed tick integers.  The matching ``*_tokens`` helpers turn
task inputs into model token sequences, and :func:`report` recomputes width,
size and attention-margin diagnostics by actually running the model.

Positional codes come from a :class:`~sepalab.jl_vectors.JLFamily`; vector
``i`` of the family (1-based) is written ``T(i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import mpmath
import numpy as np
import scipy.sparse as sp

from .fixed_precision import PrecisionConfig, inv_sqrt_ticks, quantize_ticks
from .jl_vectors import JLFamily
from .transformer_core import (
    AttentionHead,
    Embedder,
    FeedForward,
    Readout,
    TransformerLayer,
    TransformerModel,
    Weight,
    model_forward,
)

__all__ = [
    "ConstructionError",
    "ConstructionReport",
    "Feature",
    "Probe",
    "build_index_lookup_tf",
    "build_equality_tf",
    "build_partition_equality_tf",
    "build_threshold_ksparse_tf",
    "build_nearest_neighbor_tf",
    "index_lookup_tokens",
    "equality_tokens",
    "threshold_tokens",
    "nn_tokens",
    "nn_query_rows",
    "ineq_features",
    "disj_features",
    "report",
]


class ConstructionError(ValueError):
    pass


class _Sparse:
    """Accumulates ``(row, col, value)`` triples for a tick matrix."""

    def __init__(self, rows: int, cols: int) -> None:
        self.shape = (rows, cols)
        self.r: list[int] = []
        self.c: list[int] = []
        self.v: list[int] = []

    def set(self, r: int, c: int, v: int) -> None:
        self.r.append(r)
        self.c.append(c)
        self.v.append(int(v))

    def eye(self, r0: int, c0: int, n: int, v: int) -> None:
        for i in range(n):
            self.set(r0 + i, c0 + i, v)

    def weight(self) -> Weight:
        return Weight(
            sp.coo_matrix(
                (np.array(self.v, dtype=np.int64), (np.array(self.r, dtype=np.int64), np.array(self.c, dtype=np.int64))),
                shape=self.shape,
            )
        )


def _t_ticks(family: JLFamily, cfg: PrecisionConfig) -> np.ndarray:
    """Grid ticks of all unit vectors ``T(i)``; row ``i - 1`` holds ``T(i)``."""
    plus = inv_sqrt_ticks(family.k, cfg, +1)
    minus = inv_sqrt_ticks(family.k, cfg, -1)
    return np.where(family.signs > 0, plus, minus).astype(np.int64)


def _ln(x) -> mpmath.mpf:
    with mpmath.workdps(60):
        return mpmath.log(mpmath.mpf(x))


def _eta_ticks(value: mpmath.mpf, cfg: PrecisionConfig) -> int:
    return quantize_ticks(value, cfg)


def _check_family(family: JLFamily, need: int, profile: str = "coarse") -> None:
    if family.count < need:
        raise ConstructionError(f"family has {family.count} vectors, construction needs {need}")
    if family.profile != profile:
        raise ConstructionError(f"construction needs a {profile}-profile family, got {family.profile}")


def _bits(n: int) -> int:
    return max(1, (n - 1).bit_length())


# ------------------------------------------------------------------ index lookup


def build_index_lookup_tf(
    N: int,
    alphabet: Sequence,
    family: JLFamily,
    cfg: PrecisionConfig | None = None,
) -> TransformerModel:
    """One layer, one head; returns ``s_p`` for the input ``s_1 .. s_n, idx(p)``.

    Layout ``[rho(s) | block for T(p) | block for T(i)]`` where ``rho`` is the
    big-endian binary code of the symbol's index in ``alphabet``.
    """
    cfg = cfg or PrecisionConfig(N)
    _check_family(family, N)
    alphabet = tuple(alphabet)
    if len(set(alphabet)) != len(alphabet) or len(alphabet) < 1:
        raise ConstructionError("alphabet must be a nonempty sequence of distinct symbols")
    S = cfg.scale
    b, k = _bits(len(alphabet)), family.k
    d = b + 2 * k
    T = _t_ticks(family, cfg)

    tokens = {}
    for idx, sym in enumerate(alphabet):
        v = np.zeros(d, np.int64)
        for j in range(b):
            v[j] = S * ((idx >> (b - 1 - j)) & 1)
        tokens[sym] = v
    for p in range(1, N + 1):
        v = np.zeros(d, np.int64)
        v[b : b + k] = T[p - 1]
        tokens[("idx", p)] = v
    positions = np.zeros((N + 1, d), np.int64)
    positions[:N, b + k :] = T[:N]
    emb = Embedder(d, tokens, positions, 1, frozenset(("idx", p) for p in range(1, N + 1)))

    wq, wk, wv = _Sparse(k, d), _Sparse(k, d), _Sparse(b, d)
    wq.eye(0, b, k, S)
    wk.eye(0, b + k, k, S)
    wv.eye(0, 0, b, S)
    eta = 2 * _ln(3 * N) + 1
    head = AttentionHead(wq.weight(), wk.weight(), wv.weight(), _eta_ticks(eta, cfg))
    wo = _Sparse(b, b)
    wo.eye(0, 0, b, S)
    layer = TransformerLayer((head,), wo.weight(), FeedForward(), residual=False)

    # h(v) = 2 (ReLU(v - 1/4) - ReLU(v - 3/4)) then bit = [h >= 1/2]
    w1, w2 = _Sparse(2 * b, b), _Sparse(b, 2 * b)
    b1 = np.zeros(2 * b, np.int64)
    for j in range(b):
        w1.set(2 * j, j, S)
        w1.set(2 * j + 1, j, S)
        b1[2 * j], b1[2 * j + 1] = -(S // 4), -((3 * S) // 4)
        w2.set(j, 2 * j, 2 * S)
        w2.set(j, 2 * j + 1, -2 * S)
    ffn = FeedForward(((w1.weight(), b1), (w2.weight(), np.zeros(b, np.int64))))
    readout = Readout(ffn, threshold=S // 2, alphabet=alphabet)
    return TransformerModel(
        cfg,
        emb,
        (layer,),
        readout,
        causal=False,
        name="index-lookup",
        meta={"N": N, "k": k, "symbol_bits": b, "eta": [[str(eta)]], "eta_ticks": [[head.eta]]},
    )


def index_lookup_tokens(seq: Sequence, p: int) -> list:
    """Model input for the query "what is the symbol at 1-based position p"."""
    return list(seq) + [("idx", p)]


# ---------------------------------------------------------- equality variants


def _pairing(N: int, S_A: Iterable[int]) -> list[int]:
    """``partner[i]`` (1-based positions) for the sorted pairing of S_A with S_B."""
    a = sorted(set(S_A))
    if len(a) != N // 2 or any(not 1 <= i <= N for i in a):
        raise ConstructionError(f"S_A must be {N // 2} distinct positions in 1..{N}")
    bset = sorted(set(range(1, N + 1)) - set(a))
    partner = list(range(N + 1))
    for ai, bi in zip(a, bset):
        partner[bi] = ai
    return partner


def build_partition_equality_tf(
    N: int,
    S_A: Iterable[int],
    family: JLFamily,
    cfg: PrecisionConfig | None = None,
    *,
    negate: bool = False,
    name: str = "partition-equality",
) -> TransformerModel:
    """Two layers; outputs 1 iff ``x[S_A] != x[S_B]`` compared in position order.

    Layer 1 layout ``[x, r, T(i), T(partner(i)), 1]``: each position looks up
    its partner's bit (a position in S_A is its own partner) with
    ``eta = ln N + Kc ln 2N`` so the weights round to exactly 0 or 1; the FFN
    replaces ``r`` by ``[x != r]``.  Layer 2 averages that slot uniformly and
    the readout fires when the mean is at least ``1/N``.
    """
    if N % 2:
        raise ConstructionError("N must be even")
    cfg = cfg or PrecisionConfig(N)
    _check_family(family, N)
    partner = _pairing(N, S_A)
    S, k = cfg.scale, family.k
    d = 2 * k + 3
    A, B, ONE = 2, 2 + k, 2 + 2 * k
    T = _t_ticks(family, cfg)

    tokens = {}
    for x in (-1, 1):
        v = np.zeros(d, np.int64)
        v[0] = x * S
        tokens[x] = v
    positions = np.zeros((N, d), np.int64)
    for i in range(1, N + 1):
        positions[i - 1, A : A + k] = T[i - 1]
        positions[i - 1, B : B + k] = T[partner[i] - 1]
        positions[i - 1, ONE] = S
    emb = Embedder(d, tokens, positions, 1)

    wq, wk, wv = _Sparse(k + 1, d), _Sparse(k + 1, d), _Sparse(1, d)
    wq.eye(0, B, k, S)
    wq.set(k, ONE, S)
    wk.eye(0, A, k, S)
    wk.set(k, ONE, -(S // 2))
    wv.set(0, 0, S)
    eta = _ln(N) + cfg.Kc * _ln(2 * N)
    head1 = AttentionHead(wq.weight(), wk.weight(), wv.weight(), _eta_ticks(eta, cfg))
    wo1 = _Sparse(d, 1)
    wo1.set(1, 0, S)

    # FFN: identity ReLU(v) - ReLU(-v) on every slot except r, which becomes
    # (ReLU(x - r) + ReLU(r - x)) / 2 = [x != r] for x, r in {-1, +1}
    w1, w2 = _Sparse(2 * d, d), _Sparse(d, 2 * d)
    for i in range(d):
        if i == 1:
            for unit, sign in ((2, 1), (3, -1)):
                w1.set(unit, 0, sign * S)
                w1.set(unit, 1, -sign * S)
                w2.set(1, unit, S // 2)
        else:
            w1.set(2 * i, i, S)
            w1.set(2 * i + 1, i, -S)
            w2.set(i, 2 * i, S)
            w2.set(i, 2 * i + 1, -S)
    ffn1 = FeedForward(((w1.weight(), np.zeros(2 * d, np.int64)), (w2.weight(), np.zeros(d, np.int64))))
    layer1 = TransformerLayer((head1,), wo1.weight(), ffn1, residual=True)

    zq = _Sparse(1, d)
    wv2 = _Sparse(1, d)
    wv2.set(0, 1, S)
    head2 = AttentionHead(zq.weight(), _Sparse(1, d).weight(), wv2.weight(), 0)
    wo2 = _Sparse(1, 1)
    wo2.set(0, 0, S)
    layer2 = TransformerLayer((head2,), wo2.weight(), FeedForward(), residual=False)

    readout = Readout(FeedForward(), threshold=quantize_ticks(Fraction(1, N), cfg), negate=negate)
    return TransformerModel(
        cfg,
        emb,
        (layer1, layer2),
        readout,
        causal=False,
        name=name,
        meta={
            "N": N,
            "k": k,
            "S_A": sorted(set(S_A)),
            "partner": partner[1:],
            "eta": [[str(eta)], ["0"]],
            "eta_ticks": [[head1.eta], [0]],
        },
    )


def build_equality_tf(N: int, family: JLFamily, cfg: PrecisionConfig | None = None) -> TransformerModel:
    """``EQ(x) = 1`` iff the two halves of ``x`` agree; inputs are ``+-1`` tokens."""
    return build_partition_equality_tf(N, range(1, N // 2 + 1), family, cfg, negate=True, name="equality")


def equality_tokens(bits: Sequence[int]) -> list[int]:
    """Map ``{0, 1}`` bits to the ``{-1, +1}`` tokens the equality models read."""
    return [1 if b else -1 for b in bits]


# --------------------------------------------------- threshold of sparse features


@dataclass(frozen=True)
class Feature:
    """A Boolean function of the bits at ``positions`` (1-based).

    ``table[a]`` is the value on the assignment whose big-endian index is ``a``.
    """

    positions: tuple[int, ...]
    table: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.table) != 2 ** len(self.positions):
            raise ValueError("truth table length must be 2**arity")

    def __call__(self, x: Sequence[int]) -> int:
        a = 0
        for pos in self.positions:
            a = 2 * a + int(x[pos - 1])
        return int(self.table[a])


def ineq_features(N: int) -> list[Feature]:
    """XOR of each mirrored pair; their sum is positive iff the halves differ."""
    h = N // 2
    return [Feature((i, i + h), (0, 1, 1, 0)) for i in range(1, h + 1)]


def disj_features(N: int) -> list[Feature]:
    """AND of each mirrored pair; their sum is positive iff the halves intersect."""
    h = N // 2
    return [Feature((i, i + h), (0, 0, 0, 1)) for i in range(1, h + 1)]


def build_threshold_ksparse_tf(
    N: int,
    features: Sequence,
    b,
    family: JLFamily,
    cfg: PrecisionConfig | None = None,
    k: int | None = None,
) -> TransformerModel:
    """Outputs ``[sum_j g_j(x) > b]`` for up to ``N`` features of arity ``<= k``.

    A BOS token sits at position 0 with code ``T(0)`` (family vector 1).
    Feature ``j`` lives at position ``j``; head ``h`` of layer 1 fetches the bit
    at its ``h``-th index (unused slots fetch BOS, whose bit is 0).  The FFN
    evaluates the truth table carried in the embedding, layer 2 averages the
    feature values over all ``N + 1`` positions and the readout compares the
    mean with ``floor(b)`` times the uniform weight.
    """
    cfg = cfg or PrecisionConfig(N)
    feats = [f if isinstance(f, Feature) else Feature(tuple(f[0]), tuple(f[1])) for f in features]
    if len(feats) > N:
        raise ConstructionError(f"at most {N} features allowed, got {len(feats)}")
    arity = max((len(f.positions) for f in feats), default=0)
    k = max(1, arity) if k is None else k
    if arity > k:
        raise ConstructionError(f"feature arity {arity} exceeds k={k}")
    for f in feats:
        if any(not 1 <= p <= N for p in f.positions):
            raise ConstructionError("feature positions must lie in 1..N")
    _check_family(family, N + 1)
    S, kj = cfg.scale, family.k
    w_unit = S // (N + 1)
    if w_unit < 1:
        raise ConstructionError("precision too low: need N**Kc >= N + 1")
    T = _t_ticks(family, cfg)
    nt = 2**k
    X, RET, TI, TQ = 0, 1, 1 + k, 1 + k + kj
    TT = TQ + k * kj
    ONE = TT + nt
    d = ONE + 1

    tokens = {}
    for x in (0, 1):
        v = np.zeros(d, np.int64)
        v[X] = x * S
        tokens[x] = v
    tokens["BOS"] = np.zeros(d, np.int64)
    positions = np.zeros((N + 1, d), np.int64)
    for i in range(N + 1):
        row = positions[i]
        row[TI : TI + kj] = T[i]
        row[ONE] = S
        f = feats[i - 1] if 1 <= i <= len(feats) else None
        idx = list(f.positions) if f else []
        for h in range(k):
            target = idx[h] if h < len(idx) else 0
            row[TQ + h * kj : TQ + (h + 1) * kj] = T[target]
        if f:
            r = len(f.positions)
            for a in range(nt):
                # slots beyond the arity read BOS; the table ignores those bits
                row[TT + a] = S * f.table[a >> (k - r)]
    emb = Embedder(d, tokens, positions, 0)

    eta = _ln(N + 1) + cfg.Kc * _ln(2 * (N + 1))
    eta_t = _eta_ticks(eta, cfg)
    heads = []
    for h in range(k):
        wq, wk, wv = _Sparse(kj + 1, d), _Sparse(kj + 1, d), _Sparse(1, d)
        wq.eye(0, TQ + h * kj, kj, S)
        wq.set(kj, ONE, S)
        wk.eye(0, TI, kj, S)
        wk.set(kj, ONE, -(S // 2))
        wv.set(0, X, S)
        heads.append(AttentionHead(wq.weight(), wk.weight(), wv.weight(), eta_t))
    wo1 = _Sparse(d, k)
    for h in range(k):
        wo1.set(RET + h, h, S)

    # u_a = [ret == a] via ReLU(sum_h +-ret_h + zeros(a) - (k - 1)); t_a passes through
    f1, f2, f3 = _Sparse(2 * nt, d), _Sparse(nt, 2 * nt), _Sparse(1, nt)
    b1 = np.zeros(2 * nt, np.int64)
    for a in range(nt):
        bits = [(a >> (k - 1 - h)) & 1 for h in range(k)]
        for h, bit in enumerate(bits):
            f1.set(a, RET + h, S if bit else -S)
        b1[a] = S * (bits.count(0) - (k - 1))
        f1.set(nt + a, TT + a, S)
        f2.set(a, a, S)
        f2.set(a, nt + a, S)
        f3.set(0, a, S)
    ffn1 = FeedForward(
        (
            (f1.weight(), b1),
            (f2.weight(), np.full(nt, -S, np.int64)),
            (f3.weight(), np.zeros(1, np.int64)),
        )
    )
    layer1 = TransformerLayer(tuple(heads), wo1.weight(), ffn1, residual=True)

    v2 = _Sparse(1, 1)
    v2.set(0, 0, S)
    head2 = AttentionHead(_Sparse(1, 1).weight(), _Sparse(1, 1).weight(), v2.weight(), 0)
    wo2 = _Sparse(1, 1)
    wo2.set(0, 0, S)
    layer2 = TransformerLayer((head2,), wo2.weight(), FeedForward(), residual=False)

    bf = math.floor(Fraction(b))
    bf = max(-1, min(N, bf))
    readout = Readout(FeedForward(), threshold=bf * w_unit, strict=True)
    return TransformerModel(
        cfg,
        emb,
        (layer1, layer2),
        readout,
        causal=False,
        name="threshold-ksparse",
        prefix=("BOS",),
        meta={
            "N": N,
            "k": k,
            "jl_k": kj,
            "b": str(Fraction(b)),
            "features": [[list(f.positions), list(f.table)] for f in feats],
            "eta": [[str(eta)] * k, ["0"]],
            "eta_ticks": [[eta_t] * k, [0]],
        },
    )


def threshold_tokens(bits: Sequence[int]) -> list[int]:
    return [int(b) for b in bits]


# --------------------------------------------------------------- nearest neighbor


def build_nearest_neighbor_tf(
    N: int,
    d_in: int,
    gamma,
    family_fine: JLFamily,
    cfg: PrecisionConfig | None = None,
) -> TransformerModel:
    """Causal two-layer model predicting the label of the nearest stored point.

    The input interleaves points and labels ``x_1, y_1, ..., x_n`` (at most
    ``2N - 1`` tokens).  Points are tokens ``("x", code)`` where bit ``j`` of
    the ``d_in``-bit code gives the sign of coordinate ``j``; labels are
    ``("y", 0)`` and ``("y", 1)``.

    Layout ``[x | y | c | T(i) | T(2 ceil(i/2)) | out]`` with ``c = 1`` on
    points and ``-2`` on labels.  Layer 1 scores a point ``x_i`` by
    ``x_q . x_i + 3 - 10 <T(q), T(i)>`` and every label by about ``-6``, so the
    nearest earlier point dominates, and copies ``2 T_s`` of its label
    position into ``out`` where the clamp ``sigma`` restores the exact signs.
    Layer 2 matches ``out / k`` against ``T(i)`` to read the label.
    """
    gamma = Fraction(gamma).limit_denominator(10**9) if isinstance(gamma, float) else Fraction(gamma)
    if gamma <= 0:
        raise ConstructionError("gamma must be positive")
    _check_family(family_fine, 2 * N, "fine")
    if family_fine.gamma > gamma:
        raise ConstructionError("family tolerance is looser than gamma / 100")
    L = 2 * N
    cfg = cfg or PrecisionConfig(L)
    S, k = cfg.scale, family_fine.k
    XS, YS, CS, B4, B5, B6 = 0, d_in, d_in + 1, d_in + 2, d_in + 2 + k, d_in + 2 + 2 * k
    d = d_in + 2 + 3 * k
    T = _t_ticks(family_fine, cfg)

    xp, xm = inv_sqrt_ticks(d_in, cfg, +1), inv_sqrt_ticks(d_in, cfg, -1)
    tokens = {}
    for code in range(2**d_in):
        v = np.zeros(d, np.int64)
        for j in range(d_in):
            v[XS + j] = xp if (code >> (d_in - 1 - j)) & 1 else xm
        v[CS] = S
        tokens[("x", code)] = v
    for y in (0, 1):
        v = np.zeros(d, np.int64)
        v[YS] = y * S
        v[CS] = -2 * S
        tokens[("y", y)] = v
    positions = np.zeros((L, d), np.int64)
    for j in range(1, L + 1):
        positions[j - 1, B4 : B4 + k] = T[j - 1]
        positions[j - 1, B5 : B5 + k] = T[2 * ((j + 1) // 2) - 1]
    emb = Embedder(d, tokens, positions, 1)

    m1 = d_in + 1 + k
    wq, wk, wv = _Sparse(m1, d), _Sparse(m1, d), _Sparse(k, d)
    wq.eye(0, XS, d_in, S)
    wk.eye(0, XS, d_in, S)
    wq.set(d_in, CS, S)
    wk.set(d_in, CS, 3 * S)
    wq.eye(d_in + 1, B4, k, -10 * S)
    wk.eye(d_in + 1, B4, k, S)
    v_scale = quantize_ticks(2 * mpmath.sqrt(k), cfg)
    wv.eye(0, B5, k, v_scale)
    eta1 = mpmath.mpf(5) / (4 * mpmath.mpf(gamma.numerator) / gamma.denominator) * _ln(18 * N)
    head1 = AttentionHead(wq.weight(), wk.weight(), wv.weight(), _eta_ticks(eta1, cfg))
    wo1 = _Sparse(d, k)
    wo1.eye(B6, 0, k, S)

    # identity ReLU(x) - ReLU(-x) on the first d - k slots,
    # sigma(x) = ReLU(x + 1) - ReLU(x - 1) - 1 on the retrieved block
    w1, w2 = _Sparse(2 * d, d), _Sparse(d, 2 * d)
    b1 = np.zeros(2 * d, np.int64)
    b2 = np.zeros(d, np.int64)
    for i in range(d):
        w1.set(2 * i, i, S)
        w1.set(2 * i + 1, i, -S if i < B6 else S)
        w2.set(i, 2 * i, S)
        w2.set(i, 2 * i + 1, -S)
        if i >= B6:
            b1[2 * i], b1[2 * i + 1] = S, -S
            b2[i] = -S
    ffn1 = FeedForward(((w1.weight(), b1), (w2.weight(), b2)))
    layer1 = TransformerLayer((head1,), wo1.weight(), ffn1, residual=True)

    wq2, wk2, wv2 = _Sparse(k, d), _Sparse(k, d), _Sparse(1, d)
    wq2.eye(0, B6, k, quantize_ticks(Fraction(1, k), cfg))
    wk2.eye(0, B4, k, S)
    wv2.set(0, YS, S)
    eta2 = 2 * mpmath.sqrt(k) * _ln(18 * N)
    head2 = AttentionHead(wq2.weight(), wk2.weight(), wv2.weight(), _eta_ticks(eta2, cfg))
    wo2 = _Sparse(1, 1)
    wo2.set(0, 0, S)
    layer2 = TransformerLayer((head2,), wo2.weight(), FeedForward(), residual=False)
    readout = Readout(FeedForward(), threshold=S // 2)
    return TransformerModel(
        cfg,
        emb,
        (layer1, layer2),
        readout,
        causal=True,
        name="nearest-neighbor",
        meta={
            "N": N,
            "d_in": d_in,
            "gamma": str(gamma),
            "k": k,
            "eta": [[str(eta1)], [str(eta2)]],
            "eta_ticks": [[head1.eta], [head2.eta]],
        },
    )


def nn_tokens(vectors: Sequence[int], labels: Sequence[int]) -> list:
    """Interleave point codes and labels, ending with the last point."""
    out: list = []
    for i, code in enumerate(vectors):
        out.append(("x", int(code)))
        if i < len(vectors) - 1:
            out.append(("y", int(labels[i])))
    return out


def nn_query_rows(n_points: int, first_query: int) -> list[int]:
    """0-based rows of the points ``x_q`` for ``q = first_query .. n_points``."""
    return [2 * q - 2 for q in range(first_query, n_points + 1)]


# ------------------------------------------------------------------------ report


@dataclass
class ConstructionReport:
    name: str
    N: int
    width: int
    m: int
    d: int
    p: int
    H: int
    L: int
    size_bits: int
    eta: list
    min_target_weight: Fraction | None = None
    max_stray_mass: Fraction | None = None
    hard_rounding: bool | None = None
    samples: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def f(x):
            return None if x is None else str(x)

        return {
            "name": self.name,
            "N": self.N,
            "width": self.width,
            "m": self.m,
            "d": self.d,
            "p": self.p,
            "H": self.H,
            "L": self.L,
            "size_bits": self.size_bits,
            "eta": self.eta,
            "min_target_weight": f(self.min_target_weight),
            "min_target_weight_float": None if self.min_target_weight is None else float(self.min_target_weight),
            "max_stray_mass": f(self.max_stray_mass),
            "hard_rounding": self.hard_rounding,
            "samples": self.samples,
            **self.extra,
        }


@dataclass(frozen=True)
class Probe:
    """One diagnostic run: model input, decision rows and the expected
    attention target (0-based token index, prefix included) per row at
    ``layer``."""

    tokens: list
    rows: list[int]
    targets: list[int]
    layer: int = 0


def report(model: TransformerModel, probes: Sequence[Probe] = ()) -> ConstructionReport:
    """Width/size statistics plus attention margins measured on ``probes``.

    For each probe the model is run with tracing; at the probe's layer and for
    each head, the weight on the target is recorded together with the total
    weight on every other key.  ``hard_rounding`` records whether all traced
    weights at that layer are exactly 0 or 1 on the grid.
    """
    st = model.stats()
    S = model.cfg.scale
    min_t = max_s = None
    hard = None
    off = len(model.prefix)
    for pr in probes:
        # earlier layers are traced for every position, so map rows to the full sequence
        res = model_forward(model, pr.tokens, pr.rows, trace=True)
        for w in res.attention[pr.layer]:
            if pr.layer == len(model.layers) - 1:
                sel = w
            else:
                sel = w[[r + off for r in pr.rows]]
            for row, tgt in zip(sel, pr.targets):
                t = Fraction(int(row[tgt]), S)
                s = Fraction(int(row.sum() - row[tgt]), S)
                min_t = t if min_t is None else min(min_t, t)
                max_s = s if max_s is None else max(max_s, s)
            ok = bool(np.isin(w, (0, S)).all())
            hard = ok if hard is None else hard and ok
    return ConstructionReport(
        name=model.name,
        N=int(model.meta.get("N", model.cfg.N)),
        width=st["width"],
        m=st["m"],
        d=st["d"],
        p=st["p"],
        H=st["H"],
        L=st["L"],
        size_bits=st["size_bits"],
        eta=model.meta.get("eta", []),
        min_target_weight=min_t,
        max_stray_mass=max_s,
        hard_rounding=hard,
        samples=len(probes),
    )
