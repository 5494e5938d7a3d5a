"""Feasibility of the seven-inequality parameter system and beta thresholds."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .lehto import AnnulusParams

__all__ = [
    "ConstraintPoint",
    "FeasibilityReport",
    "Profile",
    "PROFILES",
    "check_point",
    "slacks",
    "max_beta",
    "inner_search",
    "gamma_from_beta",
    "check_annuli_profile",
    "QUOTED_GAMMA_FIGURES",
]

VARS = ("lambda0", "eps_ratio", "c_idb", "p", "r_a", "alpha", "c_R", "p1", "y")
Y_MAX = 1.0005

# quoted figures for the gamma thresholds, reported next to computed values
QUOTED_GAMMA_FIGURES = {"sqrt(2/64)": 0.1818, "lehto_inverse": 0.11289, "sqrt(2(sqrt11-3))": 1.211,
                       "sqrt(sqrt11-3)": 0.77817}


@dataclass(frozen=True)
class ConstraintPoint:
    beta: float
    lambda0: float
    eps_ratio: float
    c_idb: float
    p: float
    r_a: float
    alpha: float
    c_R: float
    p1: float
    y: float

    def check_box(self):
        """Box domains; eps_ratio is only required to be positive."""
        b = self.beta
        rules = [
            ("beta", 0 < b < 1), ("lambda0", 0 < self.lambda0 < 1),
            ("eps_ratio", self.eps_ratio > 0), ("c_idb", 0 < self.c_idb < 1),
            ("p", 0 < self.p < 1 / b if b > 0 else False),
            ("r_a", 0 < self.r_a < b), ("alpha", self.alpha > 0), ("c_R", self.c_R > 0),
            ("p1", self.p1 > 1), ("y", 1 < self.y < Y_MAX),
        ]
        for name, ok in rules:
            if not ok:
                raise ValueError(f"{name} outside its box domain")


@dataclass
class FeasibilityReport:
    holds: tuple
    slack: tuple
    feasible: bool

    def as_dict(self):
        return {"holds": list(self.holds), "slack": list(self.slack), "feasible": self.feasible}


def slacks(pt: ConstraintPoint) -> np.ndarray:
    """Left minus right side of constraints 1..7 (strict '>' means slack > 0)."""
    b, er, ci = pt.beta, pt.eps_ratio, pt.c_idb
    s = np.empty(7)
    s[0] = er * (1 - ci) / (128 * b) - 1
    s[1] = (pt.p1 - 1) / (pt.p1 * b) - (1 + er) * (1 + b * (pt.p1 * (1 + er) + 1))
    s[2] = (b + 1) ** 2 / (4 * b) - (1 / b + 1) * pt.r_a / 2 - 4 / (er * (1 - ci))
    # zeta(p) - 1 written out
    s[3] = -pt.p * pt.c_R + (pt.p * (1 - b * (pt.p - 1)) - 1)
    s[4] = pt.c_R * pt.lambda0 / b - 1
    x = b * (1 + pt.alpha) * ci
    s[5] = ((1 - pt.lambda0) * pt.c_R - (1 + pt.alpha) * ci) / math.sqrt(x) - math.sqrt(x) \
        - math.sqrt(32 * pt.y)
    s[6] = (b + 1) ** 2 / (4 * b) * pt.alpha * ci - 1
    return s


def check_point(pt: ConstraintPoint) -> FeasibilityReport:
    pt.check_box()
    s = slacks(pt)
    holds = tuple(bool(v > 0) for v in s)
    return FeasibilityReport(holds, tuple(float(v) for v in s), all(holds))


def c4_max(beta: float, c_R: float) -> float:
    """max over p in (0, 1/beta) of constraint 4's left side, closed form."""
    k = 1 + beta - c_R
    p = k / (2 * beta)
    if p <= 0:
        return -1.0
    p = min(p, 1 / beta)
    return p * k - beta * p * p - 1


# ---------------------------------------------------------------------------
# profiles


@dataclass(frozen=True)
class Profile:
    """Which constraints are imposed and which variables are pinned.

    ``fixed`` values may be callables of beta, e.g. eps_ratio tied to beta.
    """

    name: str
    constraints: tuple
    fixed: dict = field(default_factory=dict)
    quoted: float = math.nan
    note: str = ""


PROFILES = {
    p.name: p for p in [
        Profile("constraint-2-only-p1-2", (1, 2, 3), {"p1": 2.0, "c_idb": 0.5}, 0.32594,
                "eps_ratio > 256 beta from (1), then (2) with p1 = 2"),
        Profile("lambda0-0.01-forcing", (4, 5), {"lambda0": 0.01}, 1 / 121,
                "(sqrt(beta)-1)**2 > beta / lambda0"),
        Profile("full-lambda0-0.01", (1, 2, 3, 4, 5, 6, 7), {"lambda0": 0.01, "c_idb": 0.5},
                0.00596838),
        Profile("full-cidb-small", (4, 6, 7), {"lambda0": 0.01}, 0.042477,
                "c_idb -> 0 reduction of (6); (5) is not part of this reduction"),
        Profile("full-joint-lambda0", (1, 2, 3, 4, 5, 6, 7), {"c_idb": 0.5}, 0.00602498),
    ]
}


def _sig(u):
    return 0.5 * (1 + np.tanh(0.5 * u))


def _decode(beta, u, free, fixed):
    vals = {}
    for name, v in fixed.items():
        vals[name] = v(beta) if callable(v) else float(v)
    for name, ui in zip(free, u):
        if name in ("lambda0", "c_idb"):
            vals[name] = _sig(ui)
        elif name in ("eps_ratio", "alpha", "c_R"):
            vals[name] = math.exp(ui)
        elif name == "p1":
            vals[name] = 1 + math.exp(ui)
        elif name == "p":
            vals[name] = _sig(ui) / beta
        elif name == "r_a":
            vals[name] = _sig(ui) * beta
        elif name == "y":
            vals[name] = 1 + (Y_MAX - 1) * _sig(ui)
    return ConstraintPoint(beta=beta, **vals)


def _scaled(beta, u, free, fixed, cons, closed_p):
    pt = _decode(beta, u, free, fixed)
    s = slacks(pt)
    if closed_p:
        # same sign as c4_max, but without its flat branch
        s[3] = (1 - math.sqrt(beta)) ** 2 - pt.c_R
    s = s[[c - 1 for c in cons]]
    return np.arcsinh(s)


def _objective(beta, u, free, fixed, cons, closed_p=True):
    try:
        with np.errstate(all="ignore"):
            v = float(np.min(_scaled(beta, u, free, fixed, cons, closed_p)))
    except (ValueError, ZeroDivisionError, OverflowError):
        return -math.inf
    return v if math.isfinite(v) else -math.inf


GRID = np.linspace(-14.0, 14.0, 64)


def _descend(f, u, rounds):
    best = f(u)
    for _ in range(rounds):
        for i in range(u.size):
            for g in GRID:
                trial = u.copy()
                trial[i] = g
                val = f(trial)
                if val > best:
                    best, u = val, trial
    return best, u


def _polish(f, u, best, scaled):
    """Epigraph SLSQP: maximize t subject to every scaled slack >= t."""
    def con(z):
        with np.errstate(all="ignore"):
            out = scaled(z[:-1]) - z[-1]
        return np.where(np.isfinite(out), out, -1e3)

    n = u.size
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = optimize.minimize(lambda z: -z[-1], np.concatenate([u, [best]]), method="SLSQP",
                                jac=lambda z: np.concatenate([np.zeros(n), [-1.0]]),
                                constraints=[{"type": "ineq", "fun": con}],
                                bounds=[(-30, 30)] * n + [(-50, 50)],
                                options={"maxiter": 500, "ftol": 1e-15})
    val = f(res.x[:-1])
    return (val, res.x[:-1]) if val > best else (best, u)


def inner_search(beta: float, profile: Profile, rounds: int = 3, closed_p: bool = True):
    """Best (largest) minimum scaled slack over the free variables at this beta.

    64-point grids per free variable with coordinate descent, then an
    epigraph SLSQP refinement (maximize t subject to every slack >= t).
    With ``closed_p`` constraint 4 is maximized over p in closed form.
    Returns (score, point).
    """
    closed_p = closed_p and "p" not in profile.fixed
    free = [v for v in VARS if v not in profile.fixed and not (closed_p and v == "p")]
    fixed = dict(profile.fixed)
    if closed_p:
        # placeholder; constraint 4 is replaced by its closed-form maximum
        fixed["p"] = lambda b: 0.5 / b
    cons = profile.constraints
    f = lambda v: _objective(beta, v, free, fixed, cons, closed_p)
    best, u = -math.inf, np.zeros(len(free))
    rng = np.random.default_rng(0)
    starts = [np.zeros(len(free))] + [np.full(len(free), v) for v in (-6.0, 6.0)]
    starts += [rng.uniform(-8, 8, len(free)) for _ in range(8)]
    for st in starts:
        val, v = _descend(f, st, rounds)
        if free and math.isfinite(val):
            val, v = _polish(f, v, val, lambda z: _scaled(beta, z, free, fixed, cons, closed_p))
        if val > best:
            best, u = val, v
        if best > 0:
            break
    pt = _decode(beta, u, free, fixed)
    if closed_p:
        k = 1 + beta - pt.c_R
        p = min(max(k / (2 * beta), 1e-12), (1 - 1e-12) / beta)
        pt = ConstraintPoint(**{**asdict(pt), "p": p})
    return best, pt


def max_beta(profile, tol: float = 1e-6, hi: float = 0.999):
    """Supremum of feasible beta for a profile, by bisection.

    Returns (threshold, witness point at the lower bracket).
    """
    if isinstance(profile, str):
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}")
        profile = PROFILES[profile]
    lo = 1e-6
    s_lo, w_lo = inner_search(lo, profile)
    if not s_lo > 0:
        raise ValueError("profile infeasible")
    s_hi, _ = inner_search(hi, profile)
    if s_hi > 0:
        return hi, w_lo
    # coarse scan keeps the bracket honest when feasibility is not monotone in beta
    grid = np.geomspace(lo, hi, 13)
    ok = [inner_search(b, profile)[0] > 0 for b in grid]
    k = max(i for i, v in enumerate(ok) if v)
    lo, hi = grid[k], grid[k + 1]
    w_lo = inner_search(lo, profile)[1]
    while hi - lo > tol * max(lo, 1e-3):
        mid = 0.5 * (lo + hi)
        s, w = inner_search(mid, profile)
        if s > 0:
            lo, w_lo = mid, w
        else:
            hi = mid
    return 0.5 * (lo + hi), w_lo


def gamma_from_beta(beta: float) -> float:
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return math.sqrt(2 * beta)


# ---------------------------------------------------------------------------
# annulus-parameter checklist


def check_annuli_profile(params: AnnulusParams, beta: float, gamma: float = None,
                         c: float = 1.0, c_ov: float = 0.49, r_b2: float = None) -> dict:
    """Itemized pass/fail with slacks for the annulus-parameter checklists.

    Unspecified proof constants are taken as ``c``.  The independent-copies
    items use the same exponents for both copies unless ``r_b2`` is given.
    """
    gamma = math.sqrt(2 * beta) if gamma is None else gamma
    rs = params.rho_star
    ln = math.log(1 / rs)
    P1 = float(np.min(params.P_k(np.arange(1, 2)))) if np.ndim(params.P) == 0 \
        else float(np.min(params.P))
    items = {}

    def put(name, slack):
        items[name] = {"pass": bool(slack > 0), "slack": float(slack)}

    put("inverse.1 disjoint annuli", min(params.r_a - params.r_b, 1 - (params.r_a - params.r_b)))
    put("inverse.1 beta/2 > r_a", beta / 2 - params.r_a)
    put("inverse.2 non-empty", (params.r_a - params.r_b) * ln - 2 * P1)
    u = (c * gamma * math.sqrt(rs) / (1 - math.sqrt(rs)) * (params.b(1) + params.d(1)) ** (1 / 6)
         + c * gamma * (params.rho_b + params.rho_d))
    put("inverse.3 containment", P1 - float(u))
    put("inverse.4 r_a - r_b < 1", 1 - (params.r_a - params.r_b))
    put("inverse.5 r_d > r_b", params.r_d - params.r_b)
    rb2 = params.r_b if r_b2 is None else r_b2
    put("copies.2 r_b + min(1, beta)/2 > r_a > r_b",
        min(params.r_b + 0.5 * min(1.0, beta) - params.r_a, params.r_a - params.r_b))
    q = c_ov * params.rho_a / params.rho_b
    rho_p = rs**params.r_p
    put("copies.overlap", (1 - q) / (1 + q) - (params.rho_a + rho_p) / rs**rb2)
    return items


def report_dict(threshold, witness, profile: Profile) -> dict:
    return {
        "profile": profile.name,
        "threshold": threshold,
        "gamma": gamma_from_beta(threshold),
        "quoted": profile.quoted,
        "witness": asdict(witness),
        "slacks": check_point(witness).as_dict(),
    }
