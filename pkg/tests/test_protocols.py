from __future__ import annotations

import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sepalab.constructions import build_index_lookup_tf, index_lookup_tokens
from sepalab.fixed_precision import PrecisionConfig, exp_ticks, matmul_ticks, scale_ticks
from sepalab.jl_vectors import generate_family, suggest_dimension
from sepalab.protocols import (
    Partition,
    ProtocolError,
    Transcript,
    complement_from_odd,
    decode_signed,
    decode_unsigned,
    encode_signed,
    encode_unsigned,
    enumerate_dyck_fooling_set,
    index_reduction,
    lower_bound_table,
    one_layer_bound,
    run_one_layer_tf_protocol,
    run_rnn_prefix_protocol,
    verify_fooling_property,
)
from sepalab.rnn_core import dfa_to_rnn, dyck22_dfa, rnn_forward
from sepalab.sweeps import build_default
from sepalab.tasks import gen_dyck22, oracle_dyck
from sepalab.transformer_core import (
    AttentionHead,
    Embedder,
    FeedForward,
    Readout,
    TransformerLayer,
    TransformerModel,
    Weight,
    model_forward,
)

DYCK_RNN = dfa_to_rnn(dyck22_dfa())


# ------------------------------------------------------------------ encoding


@given(st.integers(1, 40).flatmap(lambda b: st.tuples(st.just(b), st.integers(-(2 ** (b - 1)), 2 ** (b - 1) - 1))))
def test_signed_round_trip(bv):
    bits, v = bv
    payload = encode_signed(v, bits)
    assert len(payload) == bits and decode_signed(payload) == v


@given(st.integers(0, 40).flatmap(lambda b: st.tuples(st.just(b), st.integers(0, 2**b - 1))))
def test_unsigned_round_trip(bv):
    bits, v = bv
    payload = encode_unsigned(v, bits)
    assert len(payload) == bits and decode_unsigned(payload) == v


def test_encoding_overflow_is_an_error():
    with pytest.raises(ProtocolError):
        encode_signed(128, 8)
    with pytest.raises(ProtocolError):
        encode_signed(-129, 8)
    with pytest.raises(ProtocolError):
        encode_unsigned(256, 8)
    with pytest.raises(ProtocolError):
        encode_unsigned(-1, 8)


def test_transcript_counts_payload_lengths():
    tr = Transcript()
    tr.send("alice", "a[0]", "101")
    tr.send("bob", "a[1]", "0")
    tr.send("bob", "b", "")
    assert tr.total_bits == 4
    assert tr.by_label() == {"a": 4, "b": 0}
    doc = json.loads(tr.dumps())
    assert [m["bits"] for m in doc["messages"]] == [3, 1, 0] and doc["total_bits"] == 4


def test_partition_validation():
    with pytest.raises(ProtocolError):
        Partition(4, frozenset({1, 2}), frozenset({2, 3, 4}))
    with pytest.raises(ProtocolError):
        Partition(4, frozenset({1}), frozenset({2, 3}))
    with pytest.raises(ProtocolError):
        Partition.prefix(4, 4)
    p = Partition.interleaved(5)
    assert p.S_A == {1, 3, 5} and p.S_B == {2, 4}


# ----------------------------------------------------------- rnn protocol


def test_dyck_prefix_protocol_every_split():
    rng = np.random.default_rng(0)
    for t in range(40):
        s = gen_dyck22(16, int(rng.integers(2**32))).tokens
        direct = rnn_forward(DYCK_RNN, s).outputs[-1]
        assert direct == int(oracle_dyck(s))
        for K in range(1, len(s)):
            out, tr = run_rnn_prefix_protocol(DYCK_RNN, s, K)
            assert out == direct
            assert len(tr.messages) == 1 and tr.total_bits == 3 == DYCK_RNN.m * DYCK_RNN.p


def test_prefix_protocol_split_bounds():
    s = "([])()"
    out, tr = run_rnn_prefix_protocol(DYCK_RNN, s, len(s) - 1)
    assert out == 1 and tr.total_bits == 3
    for K in (0, len(s)):
        with pytest.raises(ProtocolError):
            run_rnn_prefix_protocol(DYCK_RNN, s, K)


@pytest.mark.parametrize("N,p", [(16, 4), (16, 8), (20, 3), (64, 8)])
def test_index_reduction_carries_the_full_state(N, p):
    for seed in range(10):
        r = index_reduction(N, p, seed)
        assert r["correct"] and r["meets_floor"]
        assert r["m"] == math.ceil(N / p) == r["floor_m"]
        assert r["message_bits"] == r["mp"] >= N


# --------------------------------------------------------- one-layer protocol


def test_one_layer_bound_example():
    assert one_layer_bound(4, 8, 16, 1) == 144


def _il_model(N: int):
    return build_index_lookup_tf(N, tuple(range(8)), generate_family(N, suggest_dimension(N), "coarse", 0))


@pytest.mark.parametrize("kind", ["interleaved", "prefix", "random"])
def test_one_layer_protocol_matches_direct_evaluation(kind):
    N = 16
    model = _il_model(N)
    rng = np.random.default_rng(1)
    for _ in range(30):
        seq = [int(v) for v in rng.integers(0, 8, N)]
        toks = index_lookup_tokens(seq, int(rng.integers(1, N + 1)))
        n = len(toks)
        part = {
            "interleaved": lambda: Partition.interleaved(n),
            "prefix": lambda: Partition.prefix(n, int(rng.integers(1, n))),
            "random": lambda: Partition.random(n, rng),
        }[kind]()
        out, tr = run_one_layer_tf_protocol(model, toks, part)
        assert out == model_forward(model, toks).outputs[0]
        assert tr.meta["within_bound"] and tr.total_bits <= tr.meta["bound"]
        assert tr.total_bits == sum(tr.meta["itemized"].values())


def test_one_layer_transcript_itemization():
    N = 16
    model = _il_model(N)
    toks = index_lookup_tokens(list(range(8)) * 2, 3)
    out, tr = run_one_layer_tf_protocol(model, toks, Partition.interleaved(len(toks)))
    p, d = model.cfg.p, model.embedder.dim
    logn = math.ceil(math.log2(len(toks)))
    m_v = model.layers[0].heads[0].m_v
    assert tr.meta["itemized"] == {"x_N": d * p, "max": 2 * p, "Z": 2 * (p + logn), "U": 2 * 2 * p * m_v}
    assert tr.meta["bound"] == one_layer_bound(tr.meta["width"], p, len(toks), 1)


def test_roles_swap_when_last_position_is_with_bob():
    N = 8
    model = _il_model(N)
    toks = index_lookup_tokens([1, 2, 3, 4, 5, 6, 7, 0], 4)
    n = len(toks)
    even = Partition(n, frozenset(range(2, n + 1, 2)), frozenset(range(1, n + 1, 2)))
    assert n in even.S_B
    out, tr = run_one_layer_tf_protocol(model, toks, even)
    assert tr.meta["swapped"] and out == 4
    assert tr.messages[0].sender == "alice"


def test_one_layer_protocol_rejects_deeper_models_and_bad_partitions():
    with pytest.raises(ProtocolError):
        run_one_layer_tf_protocol(build_default("equality", 8), [1] * 8, Partition.interleaved(8))
    model = _il_model(8)
    with pytest.raises(ProtocolError):
        run_one_layer_tf_protocol(model, index_lookup_tokens([0] * 8, 1), Partition.interleaved(8))


CFG = PrecisionConfig(8)
S = CFG.scale


def _small_multihead_model(seed: int) -> TransformerModel:
    # entries kept small so every payload fits its field
    rng = np.random.default_rng(seed)
    d = 3

    def mat(r, c):
        return Weight(rng.integers(-S // 4, S // 4 + 1, size=(r, c)))

    tokens = {t: rng.integers(-S // 2, S // 2 + 1, size=d) for t in "abc"}
    emb = Embedder(d, tokens, rng.integers(-S // 8, S // 8 + 1, size=(8, d)))
    heads = tuple(AttentionHead(mat(2, d), mat(2, d), mat(1, d), int(rng.integers(S, 2 * S))) for _ in range(3))
    ffn = FeedForward(((mat(4, d), rng.integers(-S // 4, S // 4, 4)), (mat(1, 4), np.zeros(1, np.int64))))
    layer = TransformerLayer(heads, mat(d, 3), ffn, residual=True)
    return TransformerModel(CFG, emb, (layer,), Readout(FeedForward(), threshold=0))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.text(alphabet="abc", min_size=2, max_size=8), st.data())
def test_multihead_protocol_matches_direct_evaluation(seed, text, data):
    model = _small_multihead_model(seed)
    n = len(text)
    mask = data.draw(st.lists(st.booleans(), min_size=n, max_size=n))
    a = frozenset(i + 1 for i in range(n) if mask[i])
    part = Partition(n, a, frozenset(range(1, n + 1)) - a)
    out, tr = run_one_layer_tf_protocol(model, list(text), part)
    assert out == model_forward(model, list(text)).outputs[0]
    assert tr.meta["H"] == 3 and tr.meta["within_bound"]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.text(alphabet="abc", min_size=2, max_size=8), st.data())
def test_softmax_denominator_is_partition_independent(seed, text, data):
    model = _small_multihead_model(seed)
    n = len(text)
    mask = data.draw(st.lists(st.booleans(), min_size=n, max_size=n))
    a = frozenset(i + 1 for i in range(n) if mask[i])
    _, tr = run_one_layer_tf_protocol(model, list(text), Partition(n, a, frozenset(range(1, n + 1)) - a))
    x = model.embedder.embed(list(text), CFG)
    for h, head in enumerate(model.layers[0].heads):
        q = scale_ticks(head.eta, head.w_q.apply(x[-1:], CFG), CFG)
        logits = matmul_ticks(q, head.w_k.apply(x, CFG).T, CFG)[0]
        direct = int(exp_ticks(logits - logits.max(), S).sum())
        sent = [decode_unsigned(m.payload) for m in tr.messages if m.label == f"Z[{h}]"]
        assert len(sent) == 2 and sum(sent) == direct


# ------------------------------------------------------------------ fooling set


def _dfs_oracle(N: int) -> set[str]:
    return {"".join(t) for t in itertools.product("()[]", repeat=N) if oracle_dyck("".join(t))}


def test_fooling_set_small_cases():
    assert enumerate_dyck_fooling_set(2) == {"()", "[]"}
    s4 = enumerate_dyck_fooling_set(4)
    assert len(s4) == 8 and {"(())", "([])", "()[]"} <= s4
    assert s4 == _dfs_oracle(4)
    assert enumerate_dyck_fooling_set(8) == _dfs_oracle(8)


@pytest.mark.parametrize("N", range(2, 17, 2))
def test_fooling_set_size(N):
    assert len(enumerate_dyck_fooling_set(N)) == 2 ** (N - 1)


def test_fooling_set_rejects_odd_or_large_lengths():
    for N in (3, 22, 0):
        with pytest.raises(ValueError):
            enumerate_dyck_fooling_set(N)


@pytest.mark.parametrize("N", [4, 6, 8])
def test_fooling_property_all_pairs(N):
    rep = verify_fooling_property(enumerate_dyck_fooling_set(N), N)
    assert rep.passed
    size = 2 ** (N - 1)
    assert rep.pairs_checked == size * (size - 1) // 2
    assert rep.log2_size == N - 1


def test_fooling_report_flags_incomplete_or_invalid_sets():
    partial = verify_fooling_property({"(())", "([])"}, 4)
    assert partial.pair_failures == 0 and partial.size == 2 and not partial.passed
    rep = verify_fooling_property({"((", "()"}, 2)
    assert not rep.members_valid and not rep.passed


def test_fooling_pair_check_uses_the_oracle(monkeypatch):
    import sepalab.protocols as proto

    monkeypatch.setattr(proto, "oracle_dyck", lambda s: True)
    rep = proto.verify_fooling_property({"()", "[]"}, 2)
    assert rep.pair_failures == 1 and rep.first_failure == ["()", "[]"]


def test_complement_is_unique_for_every_member():
    for N in (2, 4, 6, 8, 10):
        members = enumerate_dyck_fooling_set(N)
        by_odd: dict[str, list[str]] = {}
        for s in members:
            by_odd.setdefault(s[0::2], []).append(s[1::2])
        assert all(len(v) == 1 for v in by_odd.values())
        for x, (y,) in by_odd.items():
            assert complement_from_odd(x) == y


def test_complement_of_an_impossible_odd_half():
    assert complement_from_odd("))") is None


# --------------------------------------------------------------- lower bounds


def test_lower_bound_table_examples():
    t = lower_bound_table(1024, 20)
    assert t["index_lookup_m"] == 52 == t["assoc_recall_m"]
    assert t["dyck_one_layer_mH"] == 12 == math.ceil(1023 / (3 * 30))
    assert t["equality_mp"] == 512 and t["equality_m"] == t["nearest_neighbor_m"] == 25.6
    assert lower_bound_table(1024, 20, H=4)["dyck_one_layer_m"] == 3


def test_payloads_that_overflow_their_field_are_refused():
    # grid values reach +-S**2 but a p-bit field holds only [-2**(p-1), 2**(p-1))
    cfg = PrecisionConfig(8)
    assert cfg.bound_ticks >= 1 << (cfg.p - 1)
    with pytest.raises(ProtocolError):
        encode_signed(cfg.bound_ticks, cfg.p)
