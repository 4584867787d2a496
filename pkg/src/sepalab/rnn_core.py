"""Recurrent models with an explicit ``m * p``-bit hidden state, plus DFAs.

The hidden state is a Python integer in ``[0, 2**(m*p))``.  Transitions are
either lookup tables keyed by ``(state, symbol)`` or side-effect-free
callables; a time-varying model receives the 1-based step index as well.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Sequence

__all__ = [
    "RNNModel",
    "RNNRun",
    "DFA",
    "rnn_forward",
    "dfa_to_rnn",
    "dyck22_dfa",
    "parity_dfa",
    "minimize",
    "index_lookup_rnn",
    "hidden_bits",
]


@dataclass(frozen=True, eq=False)
class RNNModel:
    """``h_t = g_t(x_t, h_{t-1})``, ``y_t = f_t(h_t)``.

    ``transition(x, h)`` (or ``transition(x, h, t)`` when ``time_varying``) and
    ``readout(h)`` (or ``readout(h, t)``) may be replaced by ``table`` and
    ``output_table`` dictionaries.
    """

    m: int
    p: int
    h0: int = 0
    transition: Callable | None = None
    readout: Callable | None = None
    alphabet: frozenset | None = None
    time_varying: bool = False
    table: dict | None = None
    output_table: dict | None = None
    name: str = "rnn"

    def __post_init__(self) -> None:
        if self.m < 1 or self.p < 1:
            raise ValueError("m and p must be positive")
        if self.transition is None and self.table is None:
            raise ValueError("need a transition callable or table")
        if not 0 <= self.h0 < 2**self.state_bits:
            raise ValueError("initial state does not fit in m*p bits")

    @property
    def state_bits(self) -> int:
        return self.m * self.p

    def step(self, x, h: int, t: int) -> int:
        if self.alphabet is not None and x not in self.alphabet:
            raise ValueError(f"symbol {x!r} outside the alphabet")
        if self.table is not None:
            try:
                nh = self.table[(h, x)]
            except KeyError:
                raise ValueError(f"no transition for state {h} on {x!r}") from None
        elif self.time_varying:
            nh = self.transition(x, h, t)
        else:
            nh = self.transition(x, h)
        if not 0 <= nh < 2**self.state_bits:
            raise ValueError(f"hidden state {nh} does not fit in {self.state_bits} bits")
        return nh

    def output(self, h: int, t: int):
        if self.output_table is not None:
            return self.output_table[h]
        if self.readout is None:
            return h
        return self.readout(h, t) if self.time_varying else self.readout(h)


@dataclass
class RNNRun:
    outputs: list
    hidden: int
    states: list[int]


def rnn_forward(rnn: RNNModel, inputs: Sequence, h: int | None = None, start: int = 1) -> RNNRun:
    """Run from state ``h`` (default ``h0``); the first input is step ``start``."""
    cur = rnn.h0 if h is None else h
    if not 0 <= cur < 2**rnn.state_bits:
        raise ValueError("starting state does not fit in m*p bits")
    states = [cur]
    outputs = []
    for i, x in enumerate(inputs):
        t = start + i
        cur = rnn.step(x, cur, t)
        states.append(cur)
        outputs.append(rnn.output(cur, t))
    return RNNRun(outputs, cur, states)


def hidden_bits(rnn: RNNModel, h: int) -> str:
    """The state as a string of exactly ``m * p`` bits."""
    return format(h, f"0{rnn.state_bits}b")


# --------------------------------------------------------------------------- DFA


@dataclass(frozen=True, eq=False)
class DFA:
    states: tuple
    alphabet: tuple
    start: Hashable
    accept: frozenset
    delta: dict = field(repr=False)

    def __post_init__(self) -> None:
        st = set(self.states)
        if len(st) != len(self.states):
            raise ValueError("duplicate states")
        if self.start not in st or not set(self.accept) <= st:
            raise ValueError("start/accept states must be declared")
        for q in self.states:
            for a in self.alphabet:
                if self.delta.get((q, a)) not in st:
                    raise ValueError(f"transition from {q!r} on {a!r} missing or undeclared")

    def run(self, s: Iterable) -> Hashable:
        q = self.start
        for a in s:
            q = self.delta[(q, a)]
        return q

    def accepts(self, s: Iterable) -> bool:
        return self.run(s) in self.accept

    def to_json(self) -> dict:
        idx = {q: i for i, q in enumerate(self.states)}
        return {
            "states": [str(q) for q in self.states],
            "alphabet": list(self.alphabet),
            "start": idx[self.start],
            "accept": sorted(idx[q] for q in self.accept),
            "delta": [[idx[self.delta[(q, a)]] for a in self.alphabet] for q in self.states],
        }

    @classmethod
    def from_json(cls, d: dict) -> "DFA":
        n = len(d["states"])
        names = d["states"]
        delta = {(names[i], a): names[d["delta"][i][j]] for i in range(n) for j, a in enumerate(d["alphabet"])}
        return cls(tuple(names), tuple(d["alphabet"]), names[d["start"]], frozenset(names[i] for i in d["accept"]), delta)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def minimize(a: DFA) -> DFA:
    """Hopcroft partition refinement on the reachable part of ``a``.

    States of the result are frozensets of equivalent original states.
    """
    seen = {a.start}
    queue = deque([a.start])
    while queue:
        q = queue.popleft()
        for s in a.alphabet:
            r = a.delta[(q, s)]
            if r not in seen:
                seen.add(r)
                queue.append(r)
    reach = [q for q in a.states if q in seen]
    inv: dict = {}
    for q in reach:
        for s in a.alphabet:
            inv.setdefault((a.delta[(q, s)], s), set()).add(q)

    acc = frozenset(q for q in reach if q in a.accept)
    rej = frozenset(q for q in reach if q not in a.accept)
    partition = {blk for blk in (acc, rej) if blk}
    work = {min((acc, rej), key=len)} if acc and rej else set(partition)
    while work:
        target = work.pop()
        for s in a.alphabet:
            pre = set()
            for q in target:
                pre |= inv.get((q, s), set())
            for blk in list(partition):
                inter, diff = blk & pre, blk - pre
                if inter and diff:
                    partition.remove(blk)
                    inter, diff = frozenset(inter), frozenset(diff)
                    partition |= {inter, diff}
                    if blk in work:
                        work.remove(blk)
                        work |= {inter, diff}
                    else:
                        work.add(min((inter, diff), key=len))
    block_of = {q: blk for blk in partition for q in blk}
    order = sorted(partition, key=lambda b: reach.index(min(b, key=reach.index)))
    delta = {(blk, s): block_of[a.delta[(next(iter(blk)), s)]] for blk in order for s in a.alphabet}
    return DFA(
        tuple(order),
        a.alphabet,
        block_of[a.start],
        frozenset(b for b in order if next(iter(b)) in a.accept),
        delta,
    )


def dyck22_dfa() -> DFA:
    """Bracket strings over ``()[]`` with nesting depth at most 2.

    States are the open-bracket stacks ``"", "(", "[", "((", "([", "[(", "[["``
    plus a rejecting sink ``"#"``.
    """
    stacks = ["", "(", "[", "((", "([", "[(", "[["]
    sink = "#"
    alphabet = ("(", ")", "[", "]")
    match = {")": "(", "]": "["}
    delta = {}
    for st in stacks:
        for a in alphabet:
            if a in "([":
                delta[(st, a)] = st + a if len(st) < 2 else sink
            else:
                delta[(st, a)] = st[:-1] if st and st[-1] == match[a] else sink
    for a in alphabet:
        delta[(sink, a)] = sink
    return DFA(tuple(stacks + [sink]), alphabet, "", frozenset({""}), delta)


def parity_dfa(symbol: str = "(", alphabet: Sequence[str] = ("(", ")", "[", "]")) -> DFA:
    """Accepts strings with an even number of ``symbol``."""
    delta = {}
    for q in ("even", "odd"):
        for a in alphabet:
            delta[(q, a)] = ({"even": "odd", "odd": "even"}[q]) if a == symbol else q
    return DFA(("even", "odd"), tuple(alphabet), "even", frozenset({"even"}), delta)


def dfa_to_rnn(a: DFA) -> RNNModel:
    """Encode the ``n`` states in ``max(1, ceil(log2 n))`` bits (``p = 1``).

    Step outputs are 1 when the prefix read so far is accepted.
    """
    n = len(a.states)
    bits = max(1, (n - 1).bit_length())
    code = {q: i for i, q in enumerate(a.states)}
    table = {(code[q], s): code[a.delta[(q, s)]] for q in a.states for s in a.alphabet}
    outputs = {code[q]: int(q in a.accept) for q in a.states}
    return RNNModel(
        m=bits,
        p=1,
        h0=code[a.start],
        alphabet=frozenset(a.alphabet),
        table=table,
        output_table=outputs,
        name="dfa",
    )


def index_lookup_rnn(N: int, p: int, sigma_size: int = 2) -> RNNModel:
    """Time-varying RNN for the input ``s_1 .. s_N, ("idx", q)``.

    Steps ``1..N`` write symbol ``s_t`` into its ``ceil(log2 sigma)``-bit slot;
    the index step replaces the state by ``s_q``.  The state therefore needs
    ``N * ceil(log2 sigma)`` bits, i.e. ``m = ceil(that / p)``.
    """
    w = max(1, (sigma_size - 1).bit_length())
    m = -(-N * w // p)
    total = m * p
    idx_tokens = {("idx", q) for q in range(1, N + 1)}

    def g(x, h, t):
        if isinstance(x, tuple):
            q = x[1]
            return (h >> ((q - 1) * w)) & ((1 << w) - 1)
        if t > N:
            raise ValueError("symbol after the sequence ended")
        return h | (int(x) << ((t - 1) * w))

    def f(h, t):
        return h if t == N + 1 else None

    alphabet = frozenset(range(sigma_size)) | idx_tokens
    rnn = RNNModel(m=m, p=p, h0=0, transition=g, readout=f, alphabet=alphabet, time_varying=True, name="index-lookup-rnn")
    assert rnn.state_bits == total
    return rnn
