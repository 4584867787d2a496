from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from sepalab.constructions import (
    ConstructionError,
    Feature,
    Probe,
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
    report,
    threshold_tokens,
)
from sepalab.fixed_precision import PrecisionConfig
from sepalab.jl_vectors import generate_family, suggest_dimension
from sepalab.sweeps import build_default, nn_family, nn_setup
from sepalab.tasks import gen_nn_instance, oracle_boolean, oracle_nearest_neighbor
from sepalab.transformer_core import model_forward


def coarse(count: int, seed: int = 0):
    return generate_family(count, suggest_dimension(count), "coarse", seed)


def _eq(bits) -> int:
    h = len(bits) // 2
    return int(list(bits[:h]) == list(bits[h:]))


# -------------------------------------------------------------- index lookup


def test_index_lookup_example_and_constant_sequence():
    N = 8
    model = build_index_lookup_tf(N, "abc", coarse(N))
    assert model_forward(model, index_lookup_tokens("abcabcab", 5)).outputs == ["b"]
    for p in range(1, N + 1):
        assert model_forward(model, index_lookup_tokens("a" * N, p)).outputs == ["a"]


@pytest.mark.parametrize("N", [8, 16])
def test_index_lookup_is_exact_on_every_shorter_length(N):
    model = build_index_lookup_tf(N, tuple(range(5)), coarse(N, 1))
    rng = np.random.default_rng(N)
    for n in range(1, N + 1):
        for _ in range(10):
            seq = [int(v) for v in rng.integers(0, 5, n)]
            p = int(rng.integers(1, n + 1))
            assert model_forward(model, index_lookup_tokens(seq, p)).outputs == [seq[p - 1]]


def test_index_lookup_exhaustive_binary_at_n6():
    N = 6
    model = build_index_lookup_tf(N, (0, 1), coarse(N, 2))
    for bits in itertools.product((0, 1), repeat=N):
        for p in range(1, N + 1):
            assert model_forward(model, index_lookup_tokens(bits, p)).outputs == [bits[p - 1]]


def test_index_lookup_report_width_and_margin():
    N = 64
    fam = coarse(N)
    model = build_index_lookup_tf(N, tuple(range(64)), fam)
    rng = np.random.default_rng(0)
    probes = []
    for _ in range(30):
        seq = [int(v) for v in rng.integers(0, 64, N)]
        p = int(rng.integers(1, N + 1))
        probes.append(Probe(index_lookup_tokens(seq, p), [N], [p - 1]))
    rep = report(model, probes)
    assert rep.width == 2 * fam.k + 6
    assert (rep.H, rep.L, rep.samples) == (1, 1, 30)
    assert rep.size_bits == rep.m * rep.d * rep.p * rep.H
    assert rep.min_target_weight >= Fraction(3, 4)
    assert rep.min_target_weight + rep.max_stray_mass <= 1
    d = rep.to_dict()
    assert d["name"] == "index-lookup" and Fraction(d["min_target_weight"]) == rep.min_target_weight


def test_index_lookup_rejects_bad_families():
    with pytest.raises(ConstructionError):
        build_index_lookup_tf(8, "ab", coarse(7))
    with pytest.raises(ConstructionError):
        build_index_lookup_tf(8, "ab", generate_family(8, 16, "fine", 0, gamma=Fraction(1, 2), method="hadamard"))
    with pytest.raises(ConstructionError):
        build_index_lookup_tf(8, "aa", coarse(8))


# ----------------------------------------------------------------- equality


def test_equality_matches_oracle_on_all_inputs_at_n8():
    N = 8
    model = build_equality_tf(N, coarse(N))
    for bits in itertools.product((0, 1), repeat=N):
        assert model_forward(model, equality_tokens(bits)).outputs == [_eq(bits)]


def test_equality_copy_and_single_mismatch():
    N = 16
    model = build_equality_tf(N, coarse(N))
    rng = np.random.default_rng(5)
    for _ in range(20):
        y = [int(v) for v in rng.integers(0, 2, N // 2)]
        assert model_forward(model, equality_tokens(y + y)).outputs == [1]
        z = list(y)
        i = int(rng.integers(0, N // 2))
        z[i] ^= 1
        assert model_forward(model, equality_tokens(y + z)).outputs == [0]


def test_equality_layer_one_rounds_to_hard_attention():
    N = 8
    model = build_equality_tf(N, coarse(N))
    partner = model.meta["partner"]
    targets = [partner[i] - 1 for i in range(N)]
    probes = [
        Probe(equality_tokens(bits), list(range(N)), targets)
        for bits in itertools.product((0, 1), repeat=N)
        if sum(bits) % 5 == 0
    ]
    rep = report(model, probes)
    assert rep.hard_rounding is True
    assert rep.min_target_weight == 1 and rep.max_stray_mass == 0


def test_equality_rejects_odd_length():
    with pytest.raises(ConstructionError):
        build_equality_tf(7, coarse(7))


def test_equality_size_grows_like_log_cubed():
    ns = [8, 16, 32, 64]
    sizes = [report(build_default("equality", N)).size_bits for N in ns]
    xs = [math.log2(N) ** 3 for N in ns]
    c = sum(x * s for x, s in zip(xs, sizes)) / sum(x * x for x in xs)
    for x, s in zip(xs, sizes):
        assert c * x / 2 <= s <= 2 * c * x


# ------------------------------------------------------- partition equality


def test_identity_partition_is_the_negated_equality_model():
    N = 8
    fam = coarse(N)
    a = build_equality_tf(N, fam)
    b = build_partition_equality_tf(N, range(1, N // 2 + 1), fam)
    for bits in itertools.product((0, 1), repeat=N):
        toks = equality_tokens(bits)
        assert model_forward(a, toks).outputs[0] == 1 - model_forward(b, toks).outputs[0]


def test_odd_positions_against_even_positions():
    N = 8
    model = build_partition_equality_tf(N, [1, 3, 5, 7], coarse(N))
    for half in itertools.product((0, 1), repeat=N // 2):
        bits = [v for v in half for _ in range(2)]
        assert model_forward(model, equality_tokens(bits)).outputs == [0]
    assert model_forward(model, equality_tokens([1, 0] + [0] * 6)).outputs == [1]


def test_random_partition_exhaustive_at_n8():
    N = 8
    rng = np.random.default_rng(11)
    for _ in range(3):
        S_A = sorted(int(i) + 1 for i in rng.choice(N, N // 2, replace=False))
        S_B = sorted(set(range(1, N + 1)) - set(S_A))
        model = build_partition_equality_tf(N, S_A, coarse(N, 3))
        for bits in itertools.product((0, 1), repeat=N):
            expected = int([bits[i - 1] for i in S_A] != [bits[i - 1] for i in S_B])
            assert model_forward(model, equality_tokens(bits)).outputs == [expected]


def test_unbalanced_partition_is_rejected():
    with pytest.raises(ConstructionError):
        build_partition_equality_tf(8, [1, 2, 3], coarse(8))
    with pytest.raises(ConstructionError):
        build_partition_equality_tf(8, [1, 2, 3, 9], coarse(8))


# ---------------------------------------------------------------- threshold


def test_threshold_ineq_reproduces_equality_complement():
    N = 8
    eq = build_equality_tf(N, coarse(N))
    th = build_threshold_ksparse_tf(N, ineq_features(N), 0, coarse(N + 1))
    for bits in itertools.product((0, 1), repeat=N):
        got = model_forward(th, threshold_tokens(bits)).outputs[0]
        assert got == oracle_boolean("ineq", bits)
        assert got == 1 - model_forward(eq, equality_tokens(bits)).outputs[0]


def test_threshold_disj_exhaustive_and_disjoint_halves():
    N = 8
    th = build_threshold_ksparse_tf(N, disj_features(N), 0, coarse(N + 1))
    for bits in itertools.product((0, 1), repeat=N):
        assert model_forward(th, threshold_tokens(bits)).outputs == [oracle_boolean("disj", bits)]
    assert model_forward(th, threshold_tokens([1, 1, 0, 0, 0, 0, 1, 1])).outputs == [0]


def test_threshold_degenerate_offsets():
    N = 8
    fam = coarse(N + 1)
    empty = [Feature((), (0,))] * 3
    always = build_threshold_ksparse_tf(N, empty, -1, fam, k=2)
    never = build_threshold_ksparse_tf(N, empty, N, fam, k=2)
    for bits in ([0] * N, [1] * N, [1, 0] * 4):
        assert model_forward(always, threshold_tokens(bits)).outputs == [1]
        assert model_forward(never, threshold_tokens(bits)).outputs == [0]


def test_threshold_three_sparse_majority_features():
    N = 6
    maj = tuple(int(a + b + c >= 2) for a, b, c in itertools.product((0, 1), repeat=3))
    feats = [Feature((1, 3, 5), maj), Feature((2, 4, 6), maj), Feature((1, 2), (0, 1, 1, 0))]
    th = build_threshold_ksparse_tf(N, feats, 1, coarse(N + 1))
    for bits in itertools.product((0, 1), repeat=N):
        total = sum(f(bits) for f in feats)
        assert model_forward(th, threshold_tokens(bits)).outputs == [int(total > 1)]


def test_threshold_rejects_excess_arity_and_features():
    with pytest.raises(ConstructionError):
        build_threshold_ksparse_tf(8, [Feature((1, 2, 3), (0,) * 8)], 0, coarse(9), k=2)
    with pytest.raises(ConstructionError):
        build_threshold_ksparse_tf(2, [Feature((1,), (0, 1))] * 3, 0, coarse(3))
    with pytest.raises(ValueError):
        Feature((1, 2), (0, 1))


# ---------------------------------------------------------- nearest neighbor


def _nn_model(N: int, mqar: bool):
    _, d_in, g = nn_setup(N, mqar)
    fam = nn_family(N, g)
    return build_nearest_neighbor_tf(N, d_in, g, fam, PrecisionConfig(2 * N)), d_in, g


@pytest.mark.parametrize("mqar", [True, False])
def test_nearest_neighbor_matches_oracle_at_n16(mqar):
    N = 16
    model, d_in, g = _nn_model(N, mqar)
    sigma, _, _ = nn_setup(N, mqar)
    for seed in range(25):
        inst = gen_nn_instance(N, sigma, seed, mqar=mqar)
        first = inst.params["first_query"]
        expected = [oracle_nearest_neighbor(inst, q, g) for q in range(first, N + 1)]
        res = model_forward(model, nn_tokens(inst.tokens, inst.params["labels"]), nn_query_rows(N, first))
        assert res.outputs == expected


def test_nearest_neighbor_two_points():
    N = 8
    model, d_in, _ = _nn_model(N, True)
    for y in (0, 1):
        toks = nn_tokens([5, 9, 5], [y, 1 - y])
        assert model_forward(model, toks, [4]).outputs == [y]


def test_nearest_neighbor_target_weight_and_stray_mass():
    N = 16
    model, _, g = _nn_model(N, True)
    sigma, d_in, _ = nn_setup(N, True)
    probes = []
    for seed in range(10):
        inst = gen_nn_instance(N, sigma, seed, mqar=True)
        first = inst.params["first_query"]
        rows = nn_query_rows(N, first)
        targets = []
        for q in range(first, N + 1):
            j = inst.tokens.index(inst.tokens[q - 1]) + 1
            targets.append(2 * j - 2)
        probes.append(Probe(nn_tokens(inst.tokens, inst.params["labels"]), rows, targets))
    rep = report(model, probes)
    assert rep.min_target_weight >= Fraction(9, 10)
    assert rep.max_stray_mass <= Fraction(1, 10)


def test_nearest_neighbor_works_on_shorter_inputs():
    N = 16
    model, d_in, g = _nn_model(N, True)
    sigma, _, _ = nn_setup(N, True)
    for n in (4, 8, 12):
        for seed in range(5):
            inst = gen_nn_instance(n, sigma, seed, mqar=True)
            first = inst.params["first_query"]
            res = model_forward(model, nn_tokens(inst.tokens, inst.params["labels"]), nn_query_rows(n, first))
            assert res.outputs == list(inst.label)


def test_nearest_neighbor_builder_checks():
    N = 8
    _, d_in, g = nn_setup(N, True)
    with pytest.raises(ConstructionError):
        build_nearest_neighbor_tf(N, d_in, g, coarse(2 * N))
    with pytest.raises(ConstructionError):
        build_nearest_neighbor_tf(N, d_in, 0, nn_family(N, g))
    with pytest.raises(ConstructionError):
        build_nearest_neighbor_tf(N, d_in, g / 4, nn_family(N, g))
