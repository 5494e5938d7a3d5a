import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact import treemod


def test_geometric_example():
    spec = treemod.TreeSpec(1, [1.0] * 45, [2**i for i in range(1, 46)], [1.0] * 45)
    assert treemod.modulus_lower_bound(spec) == pytest.approx(1.0, abs=1e-12)


def test_single_scale_and_equal_caps():
    spec = treemod.TreeSpec(2, [3.0], [3], [0.5])
    assert treemod.modulus_lower_bound(spec) == pytest.approx(1.5 / 3.0)
    S = [2, 4, 8, 16]
    spec = treemod.TreeSpec(1, [s * 0.5 for s in S], S, [0.5] * 4)
    assert treemod.modulus_lower_bound(spec) == pytest.approx(1 / 4)


def test_invariants_enforced():
    with pytest.raises(ValueError):
        treemod.TreeSpec(1, [1, 1], [2, 5], [1, 1])
    with pytest.raises(ValueError):
        treemod.TreeSpec(1, [1], [3], [1])
    with pytest.raises(ValueError):
        treemod.TreeSpec(1, [1], [1], [0.0])
    with pytest.raises(ValueError):
        treemod.TreeSpec(1, [1], [1.5], [1])


def test_overflow_is_an_error():
    with pytest.raises(ValueError):
        treemod.modulus_lower_bound(treemod.TreeSpec(1, [1e308, 1e308], [1, 1], [1e-10, 1e-10]))


def test_area_closed_form():
    N, s = 2, 0.25
    S = [2 ** (N * i) * s for i in range(1, 6)]
    spec = treemod.TreeSpec(N, [1.0] * 5, S, [1.0] * 5)
    B, area = treemod.weights_and_area(spec)
    assert np.allclose(B, 1 / s)
    assert area == pytest.approx(sum(2**N / (2 ** (N * i) * s) for i in range(1, 6)), rel=1e-12)
    _, custom = treemod.weights_and_area(spec, np.ones(5))
    assert custom == pytest.approx(sum(2.0 ** (-N * (2 * i - 1)) * S[i - 1] for i in range(1, 6)))


def test_min_rho_length_examples():
    spec = treemod.TreeSpec(1, [1] * 4, [2, 3, 5, 8], [0.5] * 4)
    B = treemod.proof_weights(spec)
    assert np.all(np.diff(B) >= 0)
    i, M = 1, 2
    expect = B[0] / 2**i * treemod.c_finite(spec, i, M) * spec.S[0]
    assert treemod.min_rho_length(spec, i, M) == pytest.approx(expect)
    assert treemod.min_rho_length(spec, i, M, columns=[0, 1, 1]) == 0.0
    assert treemod.min_rho_length(spec, 2, 0, columns=[0]) == pytest.approx(B[1] * 2.0**-2)


@st.composite
def specs(draw):
    N = draw(st.integers(1, 3))
    n = draw(st.integers(2, 8))
    S = [1]
    for _ in range(n):
        S.append(draw(st.integers(1, S[-1] * 2**N)))
    S = S[1:]
    K = draw(st.lists(st.floats(1, 50), min_size=n, max_size=n))
    # consistent fractions: never above what the tree itself reaches
    c = [S[-1] / (2.0 ** (N * (n - i)) * S[i - 1]) * draw(st.floats(0.05, 1)) for i in range(1, n + 1)]
    return treemod.TreeSpec(N, K, S, c)


@given(specs())
@settings(max_examples=100, deadline=None)
def test_reciprocal_sum(spec):
    c = treemod.modulus_lower_bound(spec)
    assert 1 / c == pytest.approx(float(np.sum(spec.K / (spec.S * spec.c_inf))), rel=1e-12)


@given(specs())
@settings(max_examples=100, deadline=None)
def test_admissibility(spec):
    B = treemod.proof_weights(spec)
    if np.all(np.diff(B) >= 0):
        for i in range(1, spec.i_max + 1):
            assert treemod.min_rho_length(spec, i, spec.i_max - i) >= 1 - 1e-12


def test_parse_inline_and_referenced(tmp_path):
    txt = "N = 1\n# comment\ni,K,S,c\n1, 1, 2, 1\n2, 1, 4, 1\n"
    spec = treemod.parse_tree_spec(txt)
    assert spec.N == 1 and spec.i_max == 2
    (tmp_path / "t.csv").write_text("i,K_i,S_i,c_i\n1,2,2,0.5\n")
    (tmp_path / "s.txt").write_text("N = 1\ntable = t.csv\n")
    spec = treemod.load_tree_spec(str(tmp_path / "s.txt"))
    assert spec.K[0] == 2 and spec.c_inf[0] == 0.5
    with pytest.raises(ValueError):
        treemod.parse_tree_spec("i,K,S,c\n1,1,1,1\n")
    with pytest.raises(ValueError):
        treemod.parse_tree_spec("N = 1\ni,K,S,c\n2,1,1,1\n")


def test_extinction_roots():
    assert treemod.extinction_probability(treemod.GwProcess([0.1, 0, 0.9])) == pytest.approx(1 / 9)
    assert treemod.extinction_probability(treemod.GwProcess([0.5, 0, 0.5])) == 1.0
    assert treemod.extinction_probability(treemod.GwProcess([0, 0, 1])) == 0.0
    with pytest.raises(ValueError):
        treemod.GwProcess([0.2] * 5, N=1)


def test_deterministic_binary_tree():
    est = treemod.gw_estimate(treemod.GwProcess([0, 0, 1]), 10, 3, seed=0)
    assert np.array_equal(est.S_mean, 2.0 ** np.arange(11))
    assert est.c_inf == 1.0


def test_supercritical_survival():
    est = treemod.gw_estimate(treemod.GwProcess([0.1, 0, 0.9]), 25, 300, seed=2)
    assert abs(est.c_inf - 8 / 9) <= 3 * est.c_se + abs(est.c_exact - 8 / 9)
