import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact import constraints as C
from artifact.lehto import AnnulusParams

BASE = dict(beta=0.001, lambda0=0.01, eps_ratio=0.5, c_idb=0.5, p=2.0, r_a=0.0005, alpha=5000.0,
            c_R=0.5, p1=2.0, y=1.0001)


def test_slacks_by_hand():
    pt = C.ConstraintPoint(**BASE)
    s = C.slacks(pt)
    b = 0.001
    assert s[0] == pytest.approx(0.5 * 0.5 / (128 * b) - 1)
    assert s[1] == pytest.approx(0.5 / b - 1.5 * (1 + b * (2 * 1.5 + 1)))
    assert s[4] == pytest.approx(0.5 * 0.01 / b - 1)
    assert s[6] == pytest.approx((b + 1) ** 2 / (4 * b) * 5000 * 0.5 - 1)


def test_box_errors_name_the_variable():
    with pytest.raises(ValueError, match="r_a outside its box domain"):
        C.check_point(C.ConstraintPoint(**{**BASE, "r_a": 0.5}))
    with pytest.raises(ValueError, match="y outside"):
        C.check_point(C.ConstraintPoint(**{**BASE, "y": 2.0}))


@given(st.floats(1e-4, 0.9), st.floats(1e-3, 2.0))
@settings(max_examples=80)
def test_closed_form_p_maximum(beta, c_R):
    ps = np.linspace(1e-9, (1 - 1e-9) / beta, 20001)
    brute = np.max(-ps * c_R + ps * (1 - beta * (ps - 1)) - 1)
    assert C.c4_max(beta, c_R) >= brute - 1e-9
    assert C.c4_max(beta, c_R) <= brute + 1e-3 * max(1.0, abs(brute))


def test_forcing_profile_threshold():
    thr, wit = C.max_beta("lambda0-0.01-forcing")
    assert thr == pytest.approx(1 / 121, rel=1e-3)
    rep = C.check_point(wit)
    assert rep.holds[3] and rep.holds[4]


def test_unknown_profile():
    with pytest.raises(ValueError, match="unknown profile"):
        C.max_beta("nope")


def test_witness_is_feasible_below_threshold():
    prof = C.PROFILES["constraint-2-only-p1-2"]
    score, pt = C.inner_search(0.02, prof)
    assert score > 0 and all(C.check_point(pt).holds[i - 1] for i in prof.constraints)
    score, _ = C.inner_search(0.05, prof)
    assert score <= 0


def test_gamma_from_beta():
    assert C.gamma_from_beta(0.5) == 1.0
    with pytest.raises(ValueError):
        C.gamma_from_beta(-1)


def test_annuli_checklist():
    items = C.check_annuli_profile(AnnulusParams(1.0, 0.6, 0.1), beta=0.5)
    assert items["inverse.5 r_d > r_b"]["pass"]
    assert not items["inverse.1 beta/2 > r_a"]["pass"]
    assert all(set(v) == {"pass", "slack"} for v in items.values())


def test_report_dict_roundtrip():
    prof = C.PROFILES["lambda0-0.01-forcing"]
    _, pt = C.inner_search(0.005, prof)
    d = C.report_dict(0.005, pt, prof)
    assert d["gamma"] == pytest.approx(math.sqrt(0.01)) and len(d["slacks"]["slack"]) == 7
