"""Two-party simulations of the recurrent and one-layer attention protocols.

Every payload is serialized to an explicit bit string before the receiver
decodes it, so transcript bit counts are lengths of real messages.  Grid
values travel as ``p``-bit two's-complement ticks, softmax partial sums as
unsigned ``p + ceil(log2 N)``-bit integers and value partial sums (at scale
``S**2``) as ``2p``-bit two's-complement integers.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .fixed_precision import exp_ticks, matmul_ticks, saturate, scale_ticks
from .rnn_core import RNNModel, hidden_bits, index_lookup_rnn, rnn_forward
from .tasks import oracle_dyck
from .transformer_core import TransformerModel

__all__ = [
    "ProtocolError",
    "Partition",
    "Message",
    "Transcript",
    "encode_signed",
    "decode_signed",
    "encode_unsigned",
    "decode_unsigned",
    "run_rnn_prefix_protocol",
    "run_one_layer_tf_protocol",
    "one_layer_bound",
    "index_reduction",
    "enumerate_dyck_fooling_set",
    "complement_from_odd",
    "FoolingReport",
    "verify_fooling_property",
    "lower_bound_table",
]


class ProtocolError(ValueError):
    """Invalid protocol input or a payload that does not fit its field."""


# ----------------------------------------------------------------- encoding


def encode_signed(value: int, bits: int) -> str:
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if not lo <= value <= hi:
        raise ProtocolError(f"value {value} does not fit in {bits}-bit two's complement")
    return format(value & ((1 << bits) - 1), f"0{bits}b")


def decode_signed(payload: str) -> int:
    v = int(payload, 2)
    return v - (1 << len(payload)) if payload[0] == "1" else v


def encode_unsigned(value: int, bits: int) -> str:
    if not 0 <= value < (1 << bits):
        raise ProtocolError(f"value {value} does not fit in {bits} unsigned bits")
    return format(value, f"0{bits}b") if bits else ""


def decode_unsigned(payload: str) -> int:
    return int(payload, 2) if payload else 0


# ------------------------------------------------------------------ types


@dataclass(frozen=True)
class Partition:
    """Disjoint ``S_A``, ``S_B`` covering ``{1..N}`` (1-based positions)."""

    N: int
    S_A: frozenset
    S_B: frozenset
    kind: str = "arbitrary"

    def __post_init__(self) -> None:
        if self.S_A & self.S_B:
            raise ProtocolError("S_A and S_B overlap")
        if self.S_A | self.S_B != frozenset(range(1, self.N + 1)):
            raise ProtocolError("S_A and S_B must cover 1..N")

    @classmethod
    def prefix(cls, N: int, K: int) -> "Partition":
        if not 1 <= K < N:
            raise ProtocolError(f"prefix split K={K} must satisfy 1 <= K < N={N}")
        return cls(N, frozenset(range(1, K + 1)), frozenset(range(K + 1, N + 1)), "prefix")

    @classmethod
    def interleaved(cls, N: int) -> "Partition":
        return cls(N, frozenset(range(1, N + 1, 2)), frozenset(range(2, N + 1, 2)), "interleaved")

    @classmethod
    def random(cls, N: int, rng: np.random.Generator) -> "Partition":
        mask = rng.integers(0, 2, N).astype(bool)
        a = frozenset(int(i) + 1 for i in np.nonzero(mask)[0])
        return cls(N, a, frozenset(range(1, N + 1)) - a, "arbitrary")


@dataclass(frozen=True)
class Message:
    sender: str
    label: str
    payload: str

    @property
    def bits(self) -> int:
        return len(self.payload)

    def to_dict(self) -> dict:
        return {"sender": self.sender, "label": self.label, "bits": self.bits, "payload": self.payload}


@dataclass
class Transcript:
    messages: list[Message] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def send(self, sender: str, label: str, payload: str) -> str:
        self.messages.append(Message(sender, label, payload))
        return payload

    @property
    def total_bits(self) -> int:
        return sum(m.bits for m in self.messages)

    def by_label(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for m in self.messages:
            key = m.label.split("[")[0]
            out[key] = out.get(key, 0) + m.bits
        return out

    def to_dict(self) -> dict:
        return {"messages": [m.to_dict() for m in self.messages], "total_bits": self.total_bits, "meta": self.meta}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# ------------------------------------------------------ recurrent protocol


def run_rnn_prefix_protocol(rnn: RNNModel, inputs: Sequence, K: int) -> tuple[object, Transcript]:
    """Alice reads ``s_1..s_K`` and sends ``h_K``; Bob reads the rest.

    Returns the output at step ``N`` and a one-message transcript.
    """
    N = len(inputs)
    if not 1 <= K < N:
        raise ProtocolError(f"split K={K} must satisfy 1 <= K < N={N}")
    tr = Transcript(meta={"protocol": "rnn-prefix", "N": N, "K": K, "m": rnn.m, "p": rnn.p, "bound": rnn.state_bits})
    alice = rnn_forward(rnn, inputs[:K])
    payload = tr.send("alice", "hidden", hidden_bits(rnn, alice.hidden))
    bob = rnn_forward(rnn, inputs[K:], h=int(payload, 2), start=K + 1)
    return bob.outputs[-1], tr


def index_reduction(N: int, p: int, seed: int = 0) -> dict:
    """Run the prefix protocol for a state-copying index-lookup RNN.

    Alice holds the ``N`` bits, Bob the index; the single message carries the
    whole ``m * p``-bit state and ``m`` is compared against ``ceil(N / p)``.
    """
    rng = np.random.default_rng(seed)
    bits = [int(b) for b in rng.integers(0, 2, N)]
    q = int(rng.integers(1, N + 1))
    rnn = index_lookup_rnn(N, p)
    out, tr = run_rnn_prefix_protocol(rnn, bits + [("idx", q)], N)
    floor_m = -(-N // p)
    return {
        "N": N,
        "p": p,
        "m": rnn.m,
        "mp": rnn.state_bits,
        "message_bits": tr.total_bits,
        "floor_m": floor_m,
        "correct": out == bits[q - 1],
        "meets_floor": rnn.m >= floor_m and tr.total_bits >= N,
    }


# ---------------------------------------------------- one-layer protocol


def one_layer_bound(m: int, p: int, N: int, H: int) -> int:
    """``3 m (p + ceil(log2 N)) H``."""
    return 3 * m * (p + max(1, math.ceil(math.log2(N)))) * H


def run_one_layer_tf_protocol(
    tf: TransformerModel,
    inputs: Sequence,
    partition: Partition,
) -> tuple[object, Transcript]:
    """Simulate the four-step protocol for the last position of ``inputs``.

    ``partition`` ranges over the ``N = len(inputs)`` input positions; fixed
    prefix tokens of the model are public.  If ``N`` is in ``S_B`` the roles
    of the two parties swap.  Alice sends ``x_N`` once; then, per head, both
    parties send their local maximum logit, their softmax partial denominator
    and their value partial sums.
    """
    if len(tf.layers) != 1:
        raise ProtocolError(f"one-layer protocol needs a 1-layer model, got {len(tf.layers)}")
    N = len(inputs)
    if partition.N != N:
        raise ProtocolError(f"partition covers {partition.N} positions, input has {N}")
    cfg = tf.cfg
    p = cfg.p
    logn = max(1, math.ceil(math.log2(N)))
    layer = tf.layers[0]
    swap = N not in partition.S_A
    own = {"alice": partition.S_B if swap else partition.S_A, "bob": partition.S_A if swap else partition.S_B}
    holder = "alice"
    other = "bob"
    off = len(tf.prefix)
    tokens = list(tf.prefix) + list(inputs)
    x = tf.embedder.embed(tokens, cfg)
    rows = {
        holder: sorted(list(range(off)) + [off + i - 1 for i in own[holder]]),
        other: sorted(off + i - 1 for i in own[other]),
    }

    tr = Transcript(meta={"protocol": "one-layer", "N": N, "p": p, "swapped": swap, "partition": partition.kind})
    q_row = off + N - 1
    sent = "".join(tr.send(holder, f"x_N[{j}]", encode_signed(int(v), p)) for j, v in enumerate(x[q_row]))
    x_n = np.array([decode_signed(sent[j * p : (j + 1) * p]) for j in range(x.shape[1])], dtype=np.int64)

    head_outs = []
    for h_idx, head in enumerate(layer.heads):
        q = scale_ticks(head.eta, head.w_q.apply(x_n[None, :], cfg), cfg)
        local = {}
        for party in (holder, other):
            r = rows[party]
            if r:
                keys = head.w_k.apply(x[r], cfg)
                logits = matmul_ticks(q, keys.T, cfg)[0]
                local[party] = (r, logits)
            else:
                local[party] = (r, np.zeros(0, np.int64))

        # step 2: maxima (an empty side sends the smallest encodable value)
        maxima = []
        for party in (holder, other):
            _, lg = local[party]
            v = int(lg.max()) if lg.size else -(1 << (p - 1))
            maxima.append(decode_signed(tr.send(party, f"max[{h_idx}]", encode_signed(v, p))))
        M = max(maxima)

        # step 3: partial denominators
        zs = []
        exps = {}
        for party in (holder, other):
            _, lg = local[party]
            e = exp_ticks(lg - M, cfg.scale) if lg.size else np.zeros(0, np.int64)
            exps[party] = e
            zs.append(decode_unsigned(tr.send(party, f"Z[{h_idx}]", encode_unsigned(int(e.sum()), p + logn))))
        Z = sum(zs)

        # step 4: value partial sums at scale S**2
        U = np.zeros(head.m_v, dtype=object)
        for party in (holder, other):
            r, _ = local[party]
            part = np.zeros(head.m_v, dtype=object)
            if r:
                w = (exps[party].astype(object) * cfg.scale) // Z
                vals = head.w_v.apply(x[r], cfg).astype(object)
                part = (w[:, None] * vals).sum(axis=0)
            payload = "".join(encode_signed(int(v), 2 * p) for v in part)
            tr.send(party, f"U[{h_idx}]", payload)
            U = U + np.array([decode_signed(payload[j * 2 * p : (j + 1) * 2 * p]) for j in range(head.m_v)], dtype=object)
        out = np.array([int(v) // cfg.scale for v in U], dtype=np.int64)
        head_outs.append(saturate(out, cfg))

    cat = np.concatenate(head_outs)[None, :]
    h = layer.w_o.apply(cat, cfg)
    if layer.residual:
        h = saturate(h + x_n[None, :], cfg)
    if layer.ffn.layers:
        h = layer.ffn.apply(h, cfg)
    output = tf.readout.decide(h, cfg)[0]

    stats = tf.stats()
    H = len(layer.heads)
    bound = one_layer_bound(stats["width"], p, N, H)
    tr.meta.update(
        {
            "width": stats["width"],
            "H": H,
            "bound": bound,
            "within_bound": tr.total_bits <= bound,
            "itemized": tr.by_label(),
        }
    )
    return output, tr


# ---------------------------------------------------------------- fooling set


_OPEN = {")": "(", "]": "["}
_CLOSE = {"(": ")", "[": "]"}


def enumerate_dyck_fooling_set(N: int) -> set[str]:
    """All balanced bracket strings over ``()[]`` of length ``N`` and depth <= 2."""
    if N % 2 or N < 2:
        raise ValueError("N must be a positive even number")
    if N > 20:
        raise ValueError("N > 20 is refused to bound memory")
    out: set[str] = set()

    def walk(prefix: list[str], stack: list[str]) -> None:
        rem = N - len(prefix)
        if rem == 0:
            if not stack:
                out.add("".join(prefix))
            return
        if len(stack) < 2 and len(stack) + 1 <= rem - 1:
            for o in "([":
                prefix.append(o)
                stack.append(o)
                walk(prefix, stack)
                stack.pop()
                prefix.pop()
        if stack:
            top = stack.pop()
            prefix.append(_CLOSE[top])
            walk(prefix, stack)
            prefix.pop()
            stack.append(top)

    walk([], [])
    return out


def complement_from_odd(x: str) -> str | None:
    """The unique even-index string ``y`` completing odd-index string ``x``.

    Returns ``None`` when no completion exists.
    """
    y = []
    stack: list[str] = []
    n = len(x)
    for j in range(n):
        c = x[j]
        if c in "([":
            if stack:
                return None
            stack.append(c)
        elif len(stack) != 2 or stack[-1] != _OPEN[c]:
            return None
        else:
            stack.pop()
        # depth is now 1; choose y_j from the next odd symbol
        nxt = x[j + 1] if j + 1 < n else None
        if nxt is not None and nxt in _OPEN:
            y.append(_OPEN[nxt])
            stack.append(_OPEN[nxt])
        else:
            y.append(_CLOSE[stack.pop()])
    return "".join(y)


@dataclass
class FoolingReport:
    N: int
    size: int
    expected_size: int
    pairs_checked: int
    pair_failures: int
    members_valid: bool
    complement_unique: bool
    log2_size: float
    first_failure: list | None = None

    @property
    def passed(self) -> bool:
        return (
            self.size == self.expected_size
            and self.pair_failures == 0
            and self.members_valid
            and self.complement_unique
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _join(x: str, y: str) -> str:
    return "".join(a + b for a, b in zip(x, y))


def verify_fooling_property(members: set[str] | Sequence[str], N: int, check_pairs: bool = True) -> FoolingReport:
    """Check every pair ``f(x1, y2) = 0 or f(x2, y1) = 0`` with the stack oracle."""
    ms = sorted(members)
    halves = [(s[0::2], s[1::2]) for s in ms]
    valid = all(len(s) == N and oracle_dyck(s) for s in ms)
    unique = all(complement_from_odd(x) == y for x, y in halves)
    checked = failures = 0
    first = None
    if check_pairs:
        for i in range(len(halves)):
            x1, y1 = halves[i]
            for j in range(i + 1, len(halves)):
                x2, y2 = halves[j]
                checked += 1
                if oracle_dyck(_join(x1, y2)) and oracle_dyck(_join(x2, y1)):
                    failures += 1
                    if first is None:
                        first = [ms[i], ms[j]]
    return FoolingReport(
        N=N,
        size=len(ms),
        expected_size=2 ** (N - 1),
        pairs_checked=checked,
        pair_failures=failures,
        members_valid=valid,
        complement_unique=unique,
        log2_size=math.log2(len(ms)) if ms else 0.0,
        first_failure=first,
    )


# ----------------------------------------------------------- lower bounds


def lower_bound_table(N: int, p: int, H: int = 1) -> dict:
    """Recurrent width floors and the one-layer Dyck floor at ``N``, ``p``."""
    logn = max(1, math.ceil(math.log2(N)))
    return {
        "N": N,
        "p": p,
        "H": H,
        "index_lookup_m": -(-N // p),
        "assoc_recall_m": -(-N // p),
        "equality_mp": N / 2,
        "equality_m": N / (2 * p),
        "nearest_neighbor_m": N / (2 * p),
        "dyck_one_layer_mH": -(-(N - 1) // (3 * (p + logn))),
        "dyck_one_layer_m": -(-(N - 1) // (3 * (p + logn) * H)),
    }
