"""A finite-precision Transformer evaluator working on integer tick arrays.

Conventions
-----------
* Weight matrices are stored in ``out x in`` orientation, so a projection of
  a row vector ``x`` is ``W @ x``.  ``W_O`` follows the same convention: it maps
  the concatenated head outputs (length ``H * m_v``) to the model dimension.
* Attention uses no ``1/sqrt(m)`` temperature.  Each head carries a scalar
  ``eta`` applied to the query: ``logit_j = (eta * W_Q x_q) . (W_K x_j)``.
* Every product is accumulated exactly in integers and floored onto the grid
  once per output entry, then saturated.  Softmax is
  :func:`~sepalab.fixed_precision.softmax_ticks`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Sequence

import numpy as np
import scipy.sparse as sp

from .fixed_precision import (
    FixedNum,
    PrecisionConfig,
    col_l1,
    matmul_ticks,
    saturate,
    scale_ticks,
    softmax_ticks,
)

__all__ = [
    "Weight",
    "AttentionHead",
    "FeedForward",
    "TransformerLayer",
    "Embedder",
    "Readout",
    "TransformerModel",
    "ForwardResult",
    "attend",
    "model_forward",
    "clamp_sigma",
    "sigma_ffn",
    "identity_ffn",
    "model_to_json",
    "model_from_json",
]

SCHEMA = 1


class Weight:
    """An integer tick matrix (sparse) with cached transposed copies."""

    def __init__(self, ticks) -> None:
        m = sp.csr_matrix(ticks, dtype=np.int64)
        m.eliminate_zeros()
        m.sort_indices()
        self.ticks = m

    @property
    def shape(self) -> tuple[int, int]:
        return self.ticks.shape

    @cached_property
    def _t_float(self):
        return self.ticks.T.tocsr().astype(np.float64)

    @cached_property
    def _t_int(self):
        return self.ticks.T.tocsr()

    @cached_property
    def max_abs(self) -> int:
        return int(np.abs(self.ticks.data).max()) if self.ticks.nnz else 0

    @cached_property
    def _gather(self) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
        """``(rows, cols, vals)`` when every row has at most one entry."""
        counts = np.diff(self.ticks.indptr)
        if counts.max(initial=0) > 1:
            return None
        rows = np.nonzero(counts)[0]
        return rows, self.ticks.indices.copy(), self.ticks.data.copy()

    def apply(self, x: np.ndarray, cfg: PrecisionConfig) -> np.ndarray:
        """Grid value of ``x @ W.T`` for a batch of row vectors ``x``."""
        x = np.atleast_2d(x)
        if x.shape[1] != self.shape[1]:
            raise ValueError(f"dimension mismatch: input {x.shape[1]}, weight expects {self.shape[1]}")
        g = self._gather
        if g is not None and x.size and int(np.abs(x).max()) * self.max_abs < 2**62:
            rows, cols, vals = g
            out = np.zeros((x.shape[0], self.shape[0]), np.int64)
            if len(rows):
                sub = x[:, cols]
                if np.all(vals == cfg.scale):
                    out[:, rows] = sub
                else:
                    out[:, rows] = saturate((sub * vals) // cfg.scale, cfg)
            return out
        b = self._t_float if self.max_abs < 2**53 else self._t_int
        return matmul_ticks(x, b, cfg, self.row_l1)

    @cached_property
    def row_l1(self) -> int:
        """Largest row L1 norm, bounding ``|W x|`` by ``row_l1 * max|x|``."""
        return col_l1(self._t_int)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Weight) or other.shape != self.shape:
            return False
        return (self.ticks != other.ticks).nnz == 0

    def __hash__(self) -> int:
        return hash((self.shape, self.ticks.nnz))

    def to_json(self) -> dict:
        coo = self.ticks.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return {
            "shape": list(self.shape),
            "rows": coo.row[order].tolist(),
            "cols": coo.col[order].tolist(),
            "vals": [int(v) for v in coo.data[order]],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Weight":
        vals = np.array(d["vals"], dtype=np.int64)
        mat = sp.coo_matrix(
            (vals, (np.array(d["rows"], dtype=np.int64), np.array(d["cols"], dtype=np.int64))),
            shape=tuple(d["shape"]),
        )
        return cls(mat)


@dataclass(frozen=True, eq=False)
class AttentionHead:
    w_q: Weight
    w_k: Weight
    w_v: Weight
    eta: int

    def __post_init__(self) -> None:
        if self.w_q.shape != self.w_k.shape:
            raise ValueError(f"W_Q {self.w_q.shape} and W_K {self.w_k.shape} must match")
        if self.w_v.shape[1] != self.w_q.shape[1]:
            raise ValueError("W_V input dimension differs from W_Q")

    @property
    def m(self) -> int:
        return self.w_q.shape[0]

    @property
    def m_v(self) -> int:
        return self.w_v.shape[0]

    @property
    def d(self) -> int:
        return self.w_q.shape[1]


@dataclass(frozen=True, eq=False)
class FeedForward:
    """Affine maps with ReLU between consecutive maps (none after the last)."""

    layers: tuple[tuple[Weight, np.ndarray], ...] = ()

    def __post_init__(self) -> None:
        prev = None
        for w, b in self.layers:
            if b.shape != (w.shape[0],):
                raise ValueError("bias length must equal weight output dimension")
            if prev is not None and w.shape[1] != prev:
                raise ValueError("consecutive feed-forward shapes do not compose")
            prev = w.shape[0]

    @property
    def in_dim(self) -> int | None:
        return self.layers[0][0].shape[1] if self.layers else None

    @property
    def out_dim(self) -> int | None:
        return self.layers[-1][0].shape[0] if self.layers else None

    def apply(self, x: np.ndarray, cfg: PrecisionConfig) -> np.ndarray:
        h = np.atleast_2d(np.asarray(x, dtype=np.int64))
        for i, (w, b) in enumerate(self.layers):
            h = w.apply(h, cfg) + b[None, :]
            if h.size and int(np.abs(h).max()) > cfg.bound_ticks:
                h = saturate(h, cfg)
            if i < len(self.layers) - 1:
                h = np.maximum(h, 0)
        return h


@dataclass(frozen=True, eq=False)
class TransformerLayer:
    heads: tuple[AttentionHead, ...]
    w_o: Weight
    ffn: FeedForward = field(default_factory=FeedForward)
    residual: bool = True

    def __post_init__(self) -> None:
        total = sum(h.m_v for h in self.heads)
        if self.w_o.shape[1] != total:
            raise ValueError(f"W_O expects {self.w_o.shape[1]} inputs, heads provide {total}")
        if self.ffn.in_dim is not None and self.ffn.in_dim != self.w_o.shape[0]:
            raise ValueError("feed-forward input dimension differs from W_O output")
        if self.heads and self.residual and self.w_o.shape[0] != self.heads[0].d:
            raise ValueError("residual connection needs W_O to preserve the model dimension")

    @property
    def in_dim(self) -> int:
        return self.heads[0].d if self.heads else self.w_o.shape[0]

    @property
    def out_dim(self) -> int:
        return self.ffn.out_dim if self.ffn.out_dim is not None else self.w_o.shape[0]


Token = Hashable


@dataclass(frozen=True, eq=False)
class Embedder:
    """Additive embedding ``token_table[token] + position_table[position]``.

    The token at sequence index ``j`` sits at position ``position_start + j``.
    Tokens listed in ``no_position`` receive no positional term.
    """

    dim: int
    token_table: dict
    position_table: np.ndarray
    position_start: int = 1
    no_position: frozenset = frozenset()

    def __post_init__(self) -> None:
        for tok, vec in self.token_table.items():
            if np.shape(vec) != (self.dim,):
                raise ValueError(f"embedding of {tok!r} has wrong length")
        if self.position_table.ndim != 2 or self.position_table.shape[1] != self.dim:
            raise ValueError("position table must have shape (positions, dim)")

    @property
    def max_positions(self) -> int:
        return self.position_table.shape[0]

    @cached_property
    def _token_index(self) -> tuple[dict, np.ndarray]:
        keys = list(self.token_table)
        mat = np.stack([np.asarray(self.token_table[t], dtype=np.int64) for t in keys]) if keys else np.zeros((0, self.dim), np.int64)
        return {t: i for i, t in enumerate(keys)}, mat

    def embed(self, tokens: Sequence[Token], cfg: PrecisionConfig) -> np.ndarray:
        index, mat = self._token_index
        try:
            ids = [index[t] for t in tokens]
        except KeyError as exc:
            raise ValueError(f"unknown token {exc.args[0]!r}") from None
        if len(tokens) > self.max_positions:
            raise ValueError(f"sequence of length {len(tokens)} exceeds the model's {self.max_positions} positions")
        x = mat[ids] + self.position_table[: len(tokens)]
        if self.no_position:
            for j, t in enumerate(tokens):
                if t in self.no_position:
                    x[j] -= self.position_table[j]
        if self._peak > cfg.bound_ticks:
            x = saturate(x, cfg)
        return x

    @cached_property
    def _peak(self) -> int:
        _, mat = self._token_index
        a = int(np.abs(mat).max()) if mat.size else 0
        b = int(np.abs(self.position_table).max()) if self.position_table.size else 0
        return a + b


@dataclass(frozen=True, eq=False)
class Readout:
    """Decision rule applied to a final hidden row.

    ``ffn`` maps the row to scores; each score is compared with ``threshold``
    (``>`` when ``strict`` else ``>=``) giving bits, optionally negated.  With
    an ``alphabet`` the bits are read big-endian as an index into it.
    """

    ffn: FeedForward
    threshold: int
    strict: bool = False
    negate: bool = False
    alphabet: tuple | None = None

    def decide(self, rows: np.ndarray, cfg: PrecisionConfig) -> list:
        scores = self.ffn.apply(rows, cfg)
        bits = scores > self.threshold if self.strict else scores >= self.threshold
        if self.negate:
            bits = ~bits
        bits = bits.astype(int)
        out = []
        for row in bits:
            if self.alphabet is not None:
                idx = 0
                for b in row:
                    idx = 2 * idx + int(b)
                out.append(self.alphabet[idx] if idx < len(self.alphabet) else None)
            elif len(row) == 1:
                out.append(int(row[0]))
            else:
                out.append(tuple(int(b) for b in row))
        return out


@dataclass(frozen=True, eq=False)
class TransformerModel:
    cfg: PrecisionConfig
    embedder: Embedder
    layers: tuple[TransformerLayer, ...]
    readout: Readout
    causal: bool = False
    name: str = "transformer"
    prefix: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        dim = self.embedder.dim
        for i, layer in enumerate(self.layers):
            if layer.in_dim != dim:
                raise ValueError(f"layer {i} expects dimension {layer.in_dim}, receives {dim}")
            dim = layer.out_dim
        if self.readout.ffn.in_dim not in (None, dim):
            raise ValueError("readout dimension differs from the final layer output")

    @property
    def max_len(self) -> int:
        return self.embedder.max_positions - len(self.prefix)

    def stats(self) -> dict:
        """Width ``max(m, d)`` and size proxy ``m * d * p * H``."""
        m = max((max(h.m, h.m_v) for layer in self.layers for h in layer.heads), default=0)
        d = max([self.embedder.dim] + [layer.out_dim for layer in self.layers])
        H = max((len(layer.heads) for layer in self.layers), default=0)
        p = self.cfg.p
        return {
            "m": m,
            "d": d,
            "width": max(m, d),
            "p": p,
            "H": H,
            "L": len(self.layers),
            "size_bits": m * d * p * max(H, 1),
        }


@dataclass
class ForwardResult:
    outputs: list
    rows: list[int]
    hidden: np.ndarray
    attention: list | None = None


def _attention_rows(
    head: AttentionHead,
    x: np.ndarray,
    rows: Sequence[int],
    causal: bool,
    cfg: PrecisionConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Head outputs and softmax weights (both ticks) for the query ``rows``."""
    keys = head.w_k.apply(x, cfg)
    values = head.w_v.apply(x, cfg)
    q = scale_ticks(head.eta, head.w_q.apply(x[list(rows)], cfg), cfg)
    logits = matmul_ticks(q, keys.T, cfg)
    mask = None
    if causal:
        mask = np.arange(x.shape[0])[None, :] <= np.asarray(rows)[:, None]
    w = softmax_ticks(logits, cfg.scale, mask)
    return matmul_ticks(w, values, cfg), w


def attend(
    head: AttentionHead,
    x: np.ndarray,
    query_index: int,
    cfg: PrecisionConfig,
    causal: bool = False,
) -> np.ndarray:
    """Output of one head at a single query row (0-based ``query_index``)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.int64))
    if x.shape[0] == 0:
        raise ValueError("empty sequence")
    if not 0 <= query_index < x.shape[0]:
        raise IndexError(f"query index {query_index} out of range")
    if x.shape[1] != head.d:
        raise ValueError(f"dimension mismatch: rows have {x.shape[1]}, head expects {head.d}")
    out, _ = _attention_rows(head, x, [query_index], causal, cfg)
    return out[0]


def layer_forward(
    layer: TransformerLayer,
    x: np.ndarray,
    rows: Sequence[int],
    causal: bool,
    cfg: PrecisionConfig,
    trace: list | None = None,
) -> np.ndarray:
    parts = []
    for head in layer.heads:
        out, w = _attention_rows(head, x, rows, causal, cfg)
        parts.append(out)
        if trace is not None:
            trace.append(w)
    cat = np.concatenate(parts, axis=1) if parts else np.zeros((len(rows), 0), np.int64)
    h = layer.w_o.apply(cat, cfg) if cat.shape[1] else np.zeros((len(rows), layer.w_o.shape[0]), np.int64)
    if layer.residual:
        h = saturate(h + x[list(rows)], cfg)
    if layer.ffn.layers:
        h = layer.ffn.apply(h, cfg)
    return h


def model_forward(
    model: TransformerModel,
    symbols: Sequence[Token],
    rows: Sequence[int] | None = None,
    trace: bool = False,
) -> ForwardResult:
    """Run ``model`` on ``symbols`` and decide at the requested rows.

    ``rows`` index into ``symbols`` (0-based, prefix tokens excluded) and
    default to the last symbol.  Earlier layers are evaluated at every
    position; the last layer only at the requested rows.
    """
    cfg = model.cfg
    if len(symbols) > model.max_len:
        raise ValueError(f"input length {len(symbols)} exceeds the model maximum {model.max_len}")
    tokens = list(model.prefix) + list(symbols)
    if not tokens:
        raise ValueError("empty input")
    off = len(model.prefix)
    want = [len(tokens) - 1] if rows is None else [r + off for r in rows]
    for r in want:
        if not 0 <= r < len(tokens):
            raise IndexError(f"row {r - off} out of range")
    x = model.embedder.embed(tokens, cfg)
    attn = [] if trace else None
    n = len(model.layers)
    for i, layer in enumerate(model.layers):
        need = want if i == n - 1 else list(range(len(tokens)))
        tr = [] if trace else None
        x = layer_forward(layer, x, need, model.causal, cfg, tr)
        if trace:
            attn.append(tr)
    final = x if n else x[want]
    outputs = model.readout.decide(final, cfg)
    return ForwardResult(outputs, [r - off for r in want], final, attn)


def _relu_pair_weight(rows: list[tuple[int, int, int]], shape: tuple[int, int]) -> Weight:
    r, c, v = zip(*rows) if rows else ((), (), ())
    return Weight(sp.coo_matrix((np.array(v, np.int64), (np.array(r), np.array(c))), shape=shape))


def identity_ffn(dim: int, cfg: PrecisionConfig) -> FeedForward:
    """``x -> ReLU(x) - ReLU(-x)`` on every coordinate (exact on the grid)."""
    s = cfg.scale
    w1 = _relu_pair_weight([(2 * i, i, s) for i in range(dim)] + [(2 * i + 1, i, -s) for i in range(dim)], (2 * dim, dim))
    w2 = _relu_pair_weight([(i, 2 * i, s) for i in range(dim)] + [(i, 2 * i + 1, -s) for i in range(dim)], (dim, 2 * dim))
    return FeedForward(((w1, np.zeros(2 * dim, np.int64)), (w2, np.zeros(dim, np.int64))))


def sigma_ffn(dim: int, cfg: PrecisionConfig) -> FeedForward:
    """``x -> ReLU(x + 1) - ReLU(x - 1) - 1`` on every coordinate.

    Exact clipping to ``[-1, 1]`` whenever ``|x| <= B - 1``; above that
    ``x + 1`` saturates at ``B`` and the result falls short of 1 by up to a tick.
    """
    s = cfg.scale
    w1 = _relu_pair_weight([(2 * i, i, s) for i in range(dim)] + [(2 * i + 1, i, s) for i in range(dim)], (2 * dim, dim))
    b1 = np.array([s, -s] * dim, dtype=np.int64)
    w2 = _relu_pair_weight([(i, 2 * i, s) for i in range(dim)] + [(i, 2 * i + 1, -s) for i in range(dim)], (dim, 2 * dim))
    return FeedForward(((w1, b1), (w2, np.full(dim, -s, np.int64))))


def clamp_sigma(x: FixedNum) -> FixedNum:
    """Clamp to ``[-1, 1]`` through the two-ReLU network (see :func:`sigma_ffn`)."""
    cfg = x.cfg
    out = sigma_ffn(1, cfg).apply(np.array([[x.ticks]], dtype=np.int64), cfg)
    return FixedNum(int(out[0, 0]), cfg)


# ---------------------------------------------------------------- serialization


def _enc_token(t):
    if isinstance(t, tuple):
        return [_enc_token(v) for v in t]
    if isinstance(t, (np.integer,)):
        return int(t)
    return t


def _dec_token(t):
    if isinstance(t, list):
        return tuple(_dec_token(v) for v in t)
    return t


def _ffn_json(f: FeedForward) -> list:
    return [{"w": w.to_json(), "b": [int(v) for v in b]} for w, b in f.layers]


def _ffn_from(d: list) -> FeedForward:
    return FeedForward(tuple((Weight.from_json(e["w"]), np.array(e["b"], dtype=np.int64)) for e in d))


def model_to_json(model: TransformerModel) -> dict:
    emb = model.embedder
    pos = Weight(emb.position_table).to_json()
    return {
        "schema": SCHEMA,
        "name": model.name,
        "cfg": model.cfg.to_dict(),
        "causal": model.causal,
        "prefix": [_enc_token(t) for t in model.prefix],
        "meta": model.meta,
        "embedder": {
            "dim": emb.dim,
            "position_start": emb.position_start,
            "positions": pos,
            "no_position": sorted((_enc_token(t) for t in emb.no_position), key=json.dumps),
            "tokens": [[_enc_token(t), [int(v) for v in vec]] for t, vec in emb.token_table.items()],
        },
        "layers": [
            {
                "residual": layer.residual,
                "w_o": layer.w_o.to_json(),
                "ffn": _ffn_json(layer.ffn),
                "heads": [
                    {"w_q": h.w_q.to_json(), "w_k": h.w_k.to_json(), "w_v": h.w_v.to_json(), "eta": h.eta}
                    for h in layer.heads
                ],
            }
            for layer in model.layers
        ],
        "readout": {
            "ffn": _ffn_json(model.readout.ffn),
            "threshold": model.readout.threshold,
            "strict": model.readout.strict,
            "negate": model.readout.negate,
            "alphabet": None if model.readout.alphabet is None else [_enc_token(a) for a in model.readout.alphabet],
        },
    }


def model_from_json(d: dict) -> TransformerModel:
    if d.get("schema") != SCHEMA:
        raise ValueError(f"unsupported model schema {d.get('schema')!r}")
    cfg = PrecisionConfig(**d["cfg"])
    e = d["embedder"]
    emb = Embedder(
        dim=e["dim"],
        token_table={_dec_token(t): np.array(v, dtype=np.int64) for t, v in e["tokens"]},
        position_table=Weight.from_json(e["positions"]).ticks.toarray(),
        position_start=e["position_start"],
        no_position=frozenset(_dec_token(t) for t in e["no_position"]),
    )
    layers = tuple(
        TransformerLayer(
            heads=tuple(
                AttentionHead(Weight.from_json(h["w_q"]), Weight.from_json(h["w_k"]), Weight.from_json(h["w_v"]), int(h["eta"]))
                for h in ld["heads"]
            ),
            w_o=Weight.from_json(ld["w_o"]),
            ffn=_ffn_from(ld["ffn"]),
            residual=ld["residual"],
        )
        for ld in d["layers"]
    )
    r = d["readout"]
    readout = Readout(
        ffn=_ffn_from(r["ffn"]),
        threshold=int(r["threshold"]),
        strict=r["strict"],
        negate=r["negate"],
        alphabet=None if r["alphabet"] is None else tuple(_dec_token(a) for a in r["alphabet"]),
    )
    return TransformerModel(
        cfg=cfg,
        embedder=emb,
        layers=layers,
        readout=readout,
        causal=d["causal"],
        name=d["name"],
        prefix=tuple(_dec_token(t) for t in d["prefix"]),
        meta=d["meta"],
    )
