from __future__ import annotations

import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sepalab.rnn_core import (
    DFA,
    RNNModel,
    dfa_to_rnn,
    dyck22_dfa,
    hidden_bits,
    index_lookup_rnn,
    minimize,
    parity_dfa,
    rnn_forward,
)
from sepalab.tasks import oracle_dyck

BR = "()[]"


def _stack_oracle(s: str) -> bool:
    stack: list[str] = []
    for c in s:
        if c in "([":
            stack.append(c)
            if len(stack) > 2:
                return False
        elif not stack or stack.pop() != {")": "(", "]": "["}[c]:
            return False
    return not stack


DYCK_RNN = dfa_to_rnn(dyck22_dfa())


def test_empty_input_returns_initial_state():
    run = rnn_forward(DYCK_RNN, "")
    assert run.outputs == [] and run.hidden == DYCK_RNN.h0 and run.states == [DYCK_RNN.h0]


def test_dyck_rnn_examples():
    assert rnn_forward(DYCK_RNN, "([])()").outputs[-1] == 1
    assert rnn_forward(DYCK_RNN, "([[]])").outputs[-1] == 0
    assert dyck22_dfa().accepts("()")
    assert not dyck22_dfa().accepts("([)]")


def test_symbol_outside_alphabet():
    with pytest.raises(ValueError):
        rnn_forward(DYCK_RNN, "(x)")


def test_dyck_rnn_uses_three_bits():
    assert (DYCK_RNN.m, DYCK_RNN.p, DYCK_RNN.state_bits) == (3, 1, 3)
    assert len(hidden_bits(DYCK_RNN, 5)) == 3


def test_dyck_rnn_matches_stack_oracle_exhaustively_to_length_8():
    count = 0
    for n in range(9):
        for tup in itertools.product(BR, repeat=n):
            s = "".join(tup)
            assert rnn_forward(DYCK_RNN, s).outputs[-1:] == ([int(_stack_oracle(s))] if n else [])
            count += 1
    assert count == sum(4**n for n in range(9))


def test_minimized_dyck_dfa_has_eight_states():
    m = minimize(dyck22_dfa())
    assert len(m.states) == 8
    assert sum(1 for blk in m.states if "#" in blk) == 1


def test_minimize_merges_redundant_states():
    # two copies of the parity machine glued together minimize back to 2 states
    delta = {}
    for q in range(4):
        delta[(q, "a")] = (q + 1) % 4
        delta[(q, "b")] = q
    a = DFA((0, 1, 2, 3), ("a", "b"), 0, frozenset({0, 2}), delta)
    m = minimize(a)
    assert len(m.states) == 2
    for n in range(7):
        for s in itertools.product("ab", repeat=n):
            assert m.accepts(s) == a.accepts(s)


def test_minimize_drops_unreachable_states():
    delta = {(q, "a"): q for q in "xyz"}
    a = DFA(("x", "y", "z"), ("a",), "x", frozenset({"x", "z"}), delta)
    assert len(minimize(a).states) == 1


def test_single_state_dfa_becomes_a_one_bit_rnn():
    a = DFA(("q",), ("a", "b"), "q", frozenset({"q"}), {("q", "a"): "q", ("q", "b"): "q"})
    r = dfa_to_rnn(a)
    assert r.state_bits == 1
    assert rnn_forward(r, "abba").outputs == [1, 1, 1, 1]


def test_parity_rnn_is_the_xor_recurrence():
    r = dfa_to_rnn(parity_dfa())
    assert r.state_bits == 1
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = "".join(rng.choice(list(BR), int(rng.integers(0, 30))))
        h = 0
        outs = []
        for c in s:
            h ^= int(c == "(")
            outs.append(int(h == 0))
        assert rnn_forward(r, s).outputs == outs


@pytest.mark.parametrize("machine", [dyck22_dfa(), parity_dfa()])
def test_rnn_agrees_with_dfa_on_random_strings(machine):
    r = dfa_to_rnn(machine)
    rng = np.random.default_rng(1)
    for _ in range(5_000):
        s = "".join(rng.choice(list(BR), int(rng.integers(1, 65))))
        assert rnn_forward(r, s).outputs[-1] == int(machine.accepts(s))


@settings(max_examples=200)
@given(st.text(alphabet=BR, max_size=30), st.text(alphabet=BR, max_size=30))
def test_prefix_compositionality(a, b):
    whole = rnn_forward(DYCK_RNN, a + b)
    first = rnn_forward(DYCK_RNN, a)
    rest = rnn_forward(DYCK_RNN, b, h=first.hidden, start=len(a) + 1)
    assert rest.hidden == whole.hidden
    assert first.outputs + rest.outputs == whole.outputs


@settings(max_examples=200)
@given(st.text(alphabet=BR, max_size=24))
def test_dfa_equals_library_oracle(s):
    assert dyck22_dfa().accepts(s) == oracle_dyck(s)


def test_dfa_json_round_trip():
    a = dyck22_dfa()
    doc = json.loads(a.dumps())
    assert set(doc) == {"states", "alphabet", "start", "accept", "delta"}
    b = DFA.from_json(doc)
    for n in range(7):
        for s in itertools.product(BR, repeat=n):
            assert a.accepts(s) == b.accepts(s)


def test_dfa_must_be_total():
    with pytest.raises(ValueError):
        DFA(("a",), ("x", "y"), "a", frozenset(), {("a", "x"): "a"})


def test_hidden_state_width_is_enforced():
    with pytest.raises(ValueError):
        RNNModel(m=1, p=2, h0=4, transition=lambda x, h: h)
    r = RNNModel(m=1, p=2, transition=lambda x, h: h + 1)
    with pytest.raises(ValueError):
        rnn_forward(r, "abcd")


def test_time_varying_index_lookup_rnn():
    N, p = 16, 4
    r = index_lookup_rnn(N, p)
    assert r.m == 4 and r.state_bits == 16
    rng = np.random.default_rng(3)
    for _ in range(50):
        bits = [int(b) for b in rng.integers(0, 2, N)]
        q = int(rng.integers(1, N + 1))
        assert rnn_forward(r, bits + [("idx", q)]).outputs[-1] == bits[q - 1]
    r8 = index_lookup_rnn(8, 3, sigma_size=5)
    assert r8.state_bits >= 8 * 3
    seq = [4, 0, 3, 1, 2, 2, 4, 1]
    assert rnn_forward(r8, seq + [("idx", 7)]).outputs[-1] == 4
