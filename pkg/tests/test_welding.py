import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from artifact import gmc, inverse, noise, welding

pytestmark = pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")


def _hom(gamma, n=1024, seed=5):
    h = 1.0 / n
    kern = noise.h_kernel(h)
    x = noise.sample_exact(kern, gmc.cell_grid(0, 1, h), seed) if gamma else np.zeros(n)
    return inverse.circle_homeomorphism(gmc.build_measure(x, h, gamma, kern.variance))


ID = _hom(0.0)
RAND = _hom(0.5)
EXT = welding.Extension(RAND)


@given(st.floats(-2, 2), st.floats(1e-3, 0.999))
@settings(max_examples=50)
def test_identity_extension(x, y):
    assert welding.ab_extension(ID, x, y) == pytest.approx(complex(x, y / 2), abs=1e-9)


def test_identity_dilatation():
    assert welding.dilatation_numeric(ID, 0.3 + 0.4j) == pytest.approx(2.0, abs=1e-3)
    assert welding.dilatation_numeric(ID, 0.3 + 3.0j) == pytest.approx(1.0, abs=1e-6)


def test_antiderivative_matches_quadrature():
    for u in (0.3, 1.7, -0.4):
        ref = integrate.quad(lambda t: inverse.homeomorphism_eval(RAND, t), 0, u, limit=2000)[0]
        assert EXT.antiderivative(u) == pytest.approx(ref, abs=1e-6)


def test_low_branch_matches_quadrature():
    x0, y0 = 0.3, 0.6
    f = lambda t: inverse.homeomorphism_eval(RAND, t)
    re = 0.5 * integrate.quad(lambda t: f(x0 + t * y0) + f(x0 - t * y0), 0, 1, limit=2000)[0]
    im = 0.5 * integrate.quad(lambda t: f(x0 + t * y0) - f(x0 - t * y0), 0, 1, limit=2000)[0]
    assert EXT(x0, y0) == pytest.approx(complex(re, im), abs=1e-6)


@given(st.floats(0, 1), st.floats(0.01, 3))
@settings(max_examples=50)
def test_extension_commutes_with_translation(x, y):
    assert EXT(x + 1, y) == pytest.approx(EXT(x, y) + 1, abs=1e-9)


def test_extension_boundary_and_domain():
    assert EXT(0.37, 0.0) == pytest.approx(inverse.homeomorphism_eval(RAND, 0.37))
    with pytest.raises(ValueError):
        EXT(0.1, -0.5)


def test_extension_branch_values():
    assert EXT(0.4, 2 - 1e-9) == pytest.approx(EXT(0.4, 2.0), abs=1e-6)
    # h is linear between the normalized mass knots, so trapezoid on them is exact
    inv = RAND.inverse_map
    t = np.union1d(inv.edges / inv.total, np.linspace(0, 1, 11))
    c0 = np.trapezoid(inverse.homeomorphism_eval(RAND, t), t) - 0.5
    assert EXT(0.2, 1.0) == pytest.approx(0.2 + 1j + c0, abs=1e-9)
    assert EXT(0.2, 3.0) == 0.2 + 3j
    # the formula jumps at y = 1: identity gives x + i/2 below, x + i on the line
    assert welding.ab_extension(ID, 0.2, 1 - 1e-12).imag == pytest.approx(0.5)


def test_j5_counts():
    assert welding.j5_count() == 96 * 95 // 2
    assert welding.j5_count("ordered") == 96 * 96
    with pytest.raises(ValueError):
        welding.j5_count("other")


def test_identity_cube_bound():
    I = welding.DyadicInterval(2, 1)
    assert welding.dilatation_bound(ID, I) == pytest.approx(96 * 95)
    assert welding.dilatation_bound(ID, I, "ordered") == pytest.approx(2 * 96 * 96)
    with pytest.raises(ValueError):
        welding.dilatation_bound(ID, welding.DyadicInterval(6, 0))


def test_level_bounds_agree_with_single_cube():
    lb = welding.level_bounds(RAND, 3)
    for k in (0, 3, 7):
        assert lb[k] == pytest.approx(welding.dilatation_bound(RAND, welding.DyadicInterval(3, k)))


def test_quasisym_delta_at_least_two():
    assert welding.quasisym_delta(RAND, (0, 0.1), (0.5, 0.6)) >= 2.0
    assert welding.quasisym_delta(ID, (0, 0.1), (0.5, 0.6)) == pytest.approx(2.0)


@given(st.floats(0, 0.999), st.floats(1e-4, 2.0))
def test_whitney_cube_contains_point(x, y):
    c = welding.whitney_cube(x, y)
    assert c.contains(x, y)


def test_integrability_scan_identity():
    assert welding.integrability_scan(ID, 2) == pytest.approx(
        9120 * sum(welding.cube_area(n) * 2**n for n in range(3)))


def test_numeric_dilatation_below_cube_bound():
    assert welding.cube_ratio_diagnostic(RAND, welding.DyadicInterval(2, 1)) <= 1.0
