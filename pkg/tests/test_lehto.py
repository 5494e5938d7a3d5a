import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact import gmc, inverse, lehto


@given(st.floats(-1, 2), st.floats(1e-4, 0.5), st.floats(1.01, 50), st.floats(1, 20))
def test_constant_field_closed_form(x, r, ratio, K):
    R = r * ratio
    assert lehto.lehto_integral(K, x, r, R) == pytest.approx(math.log(ratio) / (2 * math.pi * K),
                                                             rel=1e-12)


@given(st.floats(0, 1), st.floats(1e-4, 0.5), st.floats(1.01, 50))
@settings(max_examples=40, deadline=None)
def test_exact_path_reproduces_closed_form(x, r, ratio):
    f = lehto.CubeField.constant(1.0, 4)
    assert f.lehto(x, r, r * ratio) == pytest.approx(math.log(ratio) / (2 * math.pi), abs=1e-12)


def test_callable_path_and_validation():
    one = lambda x, y: np.ones_like(x)
    assert lehto.lehto_integral(one, 0.3, 0.01, 1.0) == pytest.approx(
        math.log(100) / (2 * math.pi), abs=1e-9)
    with pytest.raises(ValueError):
        lehto.lehto_integral(0.5, 0, 0.1, 1)
    with pytest.raises(ValueError):
        lehto.lehto_integral(lambda x, y: 0.5 * np.ones_like(x), 0, 0.1, 1)
    with pytest.raises(ValueError):
        lehto.lehto_integral(1.0, 0, 1.0, 0.5)


def _field(seed, gamma=0.3, L=10):
    rng = np.random.default_rng(seed)
    m = lehto.sample_tau(gamma, L, rng)
    tau = gmc.GmcMeasure(2.0**-L, 0.0, m, gamma, math.inf, "H")
    return lehto.CubeField(inverse.circle_homeomorphism(tau))


FIELD = _field(0)


def test_cube_field_exact_vs_quadrature():
    exact = FIELD.lehto(0.3, 0.05, 1.0)
    quad = lehto.lehto_integral(lambda x, y: FIELD(x, y), 0.3, 0.05, 1.0, tol=1e-7)
    assert exact == pytest.approx(quad, rel=2e-3)


def test_lehto_additive_in_radius():
    a = FIELD.lehto(0.0, 0.01, 0.2)
    b = FIELD.lehto(0.0, 0.2, 1.5)
    assert FIELD.lehto(0.0, 0.01, 1.5) == pytest.approx(a + b, rel=1e-12)
    many = FIELD.lehto(0.0, np.array([0.01, 0.2]), 1.5)
    assert many[1] == pytest.approx(b, rel=1e-12)


def test_field_is_at_least_one_and_one_off_strip():
    xs = np.linspace(0, 1, 50)
    assert np.all(FIELD(xs, 0.3) >= 1)
    assert np.all(FIELD(xs, 2.5) == 1) and np.all(FIELD(xs, -0.1) == 1)


def test_sample_tau_mean_mass():
    rng = np.random.default_rng(1)
    tot = lehto.sample_tau(0.5, 8, rng, size=4000).sum(axis=1)
    assert abs(tot.mean() - 1) < 4 * tot.std() / math.sqrt(tot.size)


def test_annulus_params_validation():
    with pytest.raises(ValueError):
        lehto.AnnulusParams(1.0, 0.1, 0.6)
    with pytest.raises(ValueError):
        lehto.AnnulusParams(1.0, 0.6, 0.1, P=1.5)
    p = lehto.AnnulusParams(1.0, 0.6, 0.1)
    assert p.rho_star == 0.5 and p.r_d == 0.6
    assert lehto.radius_RN(p, 3) == pytest.approx(2 / 8)


def test_annulus_family_report():
    p = lehto.AnnulusParams(2.0, 0.6, 0.1, P=0.01)
    fam = lehto.annulus_family(p, 5, gamma=0.5)
    assert np.all(fam.a_P < fam.b_P) and np.all(fam.b < fam.delta)
    assert fam.report["nonempty"] and not fam.report["beta/2>r_a"]
    with pytest.raises(ValueError, match="non-empty"):
        lehto.annulus_family(lehto.AnnulusParams(0.1, 0.6, 0.1, P=0.5), 3)


def test_disjointness_and_level_choice():
    p = lehto.AnnulusParams(1.0, 0.6, 0.1)
    M = {1: 1.0, 2: 1.0, 3: 1.0, 4: 1.0}
    levels = lehto.choose_disjoint_levels(M, p)
    for i, n in enumerate(levels):
        for m in levels[i + 1:]:
            assert lehto.disjointness_check(M[n], M[m], p, n, m)


def test_lower_bound_below_lehto():
    p = lehto.AnnulusParams(1.0, 0.6, 0.1)
    rng = np.random.default_rng(3)
    st_ = lehto.build_stack(p, range(1, 6), 0.5, 11, rng)
    M = {n: lehto.scaling_factor(st_.tau, st_.etas[n], p, n) for n in st_.etas}
    A = lehto.choose_disjoint_levels(M, p)
    lb = lehto.lehto_lower_bound(st_, p, A, M)
    assert 0 <= lb.total <= lb.lehto
    assert np.all((lb.sigma >= 0) & (lb.sigma <= 1))


@st.composite
def intervals(draw):
    n = draw(st.integers(1, 12))
    lo = draw(st.lists(st.floats(0, 1), min_size=n, max_size=n))
    ln = draw(st.lists(st.floats(0, 0.4), min_size=n, max_size=n))
    return lehto.GapGraph(np.array(lo), np.array(lo) + np.array(ln))


@given(intervals())
@settings(max_examples=150, deadline=None)
def test_greedy_alpha_is_optimal(g):
    assert lehto.alpha_greedy(g) == lehto.alpha_bruteforce(g)


@given(st.integers(2, 10), st.integers(0, 10**6))
@settings(max_examples=60)
def test_interval_graph_matches_literal_edges(n, seed):
    rng = np.random.default_rng(seed)
    deltas = 0.5 ** np.arange(1, n + 1)
    qa = np.cumsum(rng.uniform(0, 0.3, n))[::-1]
    qb = qa + rng.uniform(0.01, 0.2, n)
    g = lehto.gap_graph(qa, qb, deltas)
    assert np.array_equal(g.adjacency(), lehto.literal_gap_edges(qa, qb, deltas))


def test_hand_pairing_example():
    p = lehto.pair_centers([0, .3, .6, 1], [0, .25, .55, .95], 0.12, check_gaps=False)
    assert p.pairs == [(0, 0), (1, 1), (2, 2), (3, 3)]
    inv = lehto.pairing_invariants(p)
    assert inv["offset"] and inv["ends_at_one"]
    with pytest.raises(ValueError, match="index 1"):
        lehto.pair_centers([0, .3, .6, 1], [0, .25, .55, .95], 0.12)


def test_adversarial_pairing_example():
    X = np.round(np.arange(11) / 10, 10)
    Y = [0, .05, .09, .19, .29, .39, .49, .59, .69, .79, .89, .99, 1.0]
    p = lehto.pair_centers(X, Y, 0.12)
    assert p.pairs == [(0, 0)] + [(k, k + 1) for k in range(1, 10)] + [(10, 12)]
    assert all(lehto.pairing_invariants(p).values())


@st.composite
def center_sets(draw):
    R = draw(st.floats(0.02, 0.2))
    rng = np.random.default_rng(draw(st.integers(0, 10**6)))

    def walk(end_at_one):
        v = [0.0]
        while v[-1] < 1:
            v.append(v[-1] + rng.uniform(0.2, 1.0) * R)
        v[-1] = 1.0
        if v[-1] - v[-2] < 1e-9:
            v.pop(-2)
        return v

    return walk(True), walk(True), R


@given(center_sets())
@settings(max_examples=200, deadline=None)
def test_pairing_invariants_random(cfg):
    X, Y, R = cfg
    p = lehto.pair_centers(X, Y, R)
    assert all(lehto.pairing_invariants(p).values())


def test_overlap_event():
    A = lehto.RandomAnnulus(1, 0.5, 1.0, 0.05, 0.2)
    B = lehto.RandomAnnulus(1, 0.52, 1.0, 0.05, 0.2)
    C = lehto.RandomAnnulus(1, 0.95, 1.0, 0.05, 0.2)
    assert lehto.overlap_event(A, B, 0.01) and lehto.overlap_event(B, A, 0.01)
    assert not lehto.overlap_event(A, C, 0.01)
    with pytest.raises(ValueError):
        lehto.RandomAnnulus(1, 0.5, 1.0, 0.3, 0.2)


def test_branched_lehto():
    r, R = 0.1, 1.0
    iplus = math.pi * (R**3 - r**3) / 3
    assert lehto.branched_lehto(1, 1, r, R) == pytest.approx((R - r) ** 2 / (4 * iplus))
    assert lehto.branched_lehto(2, 5, r, R) == pytest.approx(lehto.branched_lehto(5, 2, r, R))
    assert lehto.branched_lehto(3, 3, r, R) < lehto.branched_lehto(1, 1, r, R)
    one = lambda x, y: np.ones_like(x)
    assert lehto.branched_lehto(one, one, r, R) == pytest.approx(
        lehto.branched_lehto(1, 1, r, R), rel=1e-10)


def test_tail_mc_small():
    p = lehto.AnnulusParams(2.0, 0.6, 0.1)
    res = lehto.lehto_tail_mc(p, [2, 3], 1.0, 8, seed=1, L=10)
    assert res.values.shape == (8, 2) and np.all(res.values[:, 1] >= res.values[:, 0])
    assert np.all(res.ci[:, 0] <= res.freq) and np.all(res.freq <= res.ci[:, 1])
