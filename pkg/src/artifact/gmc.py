"""Grid-level Gaussian multiplicative chaos and Monte Carlo moment estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from . import noise
from .harness import jackknife

__all__ = [
    "GmcMeasure",
    "MultifractalLaw",
    "LognormalScaler",
    "build_measure",
    "measure_of",
    "zeta",
    "cell_grid",
    "sample_masses",
    "moment_mc",
    "MomentEstimate",
    "scaling_law_pair",
    "laplace_mc",
    "laplace_corollary_exponent",
    "l2_bound",
    "l2_check",
]


@dataclass
class GmcMeasure:
    """Masses of a GMC measure on consecutive cells of width h from ``origin``."""

    h: float
    origin: float
    masses: np.ndarray
    gamma: float
    delta: float = 1.0
    field_tag: str = "U"

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=float)
        self.edges = np.concatenate([[0.0], np.cumsum(self.masses)])

    @property
    def cumulative(self) -> np.ndarray:
        return self.edges[1:]

    @property
    def total(self) -> float:
        return float(self.edges[-1])

    @property
    def extent(self) -> tuple:
        return self.origin, self.origin + self.h * self.masses.size

    def cdf(self, x):
        """eta(origin, x), linear inside cells."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.extent
        tol = 1e-12 * max(1.0, abs(hi))
        if np.any(x < lo - tol) or np.any(x > hi + tol):
            raise ValueError("point outside the measure's extent")
        pos = np.clip((x - self.origin) / self.h, 0.0, self.masses.size)
        i = np.minimum(np.floor(pos).astype(np.int64), self.masses.size - 1)
        return self.edges[i] + (pos - i) * self.masses[i]


def build_measure(field, h: float, gamma: float, variance, origin: float = 0.0,
                  delta: float = 1.0, field_tag: str = "U") -> GmcMeasure:
    """Cell masses h * exp(gamma X - gamma**2 / 2 Var X)."""
    x = np.asarray(field, dtype=float)
    var = np.broadcast_to(np.asarray(variance, dtype=float), x.shape)
    if not np.all(np.isfinite(x)):
        raise ValueError("field has non-finite entries")
    if h <= 0:
        raise ValueError("cell width must be positive")
    m = h * np.exp(gamma * x - 0.5 * gamma**2 * var)
    return GmcMeasure(h, origin, m, gamma, delta, field_tag)


def measure_of(measure: GmcMeasure, a: float, b: float) -> float:
    if a > b:
        raise ValueError("need a <= b")
    return float(measure.cdf(b) - measure.cdf(a))


@dataclass(frozen=True)
class MultifractalLaw:
    gamma: float

    @property
    def beta(self) -> float:
        return 0.5 * self.gamma**2

    def zeta(self, q):
        return q - self.beta * (q * q - q)


def zeta(law, q):
    """Multifractal exponent q - (gamma**2 / 2)(q**2 - q)."""
    if not isinstance(law, MultifractalLaw):
        law = MultifractalLaw(float(law))
    return law.zeta(q)


@dataclass(frozen=True)
class LognormalScaler:
    """The lognormal factors attached to a rescaling by lam in (0, 1)."""

    lam: float
    gamma: float

    @property
    def beta(self) -> float:
        return 0.5 * self.gamma**2

    @property
    def r(self) -> float:
        return noise.r_lambda(self.lam)

    def omega_bar(self, rng, size=None):
        v = -math.log(self.lam)
        return self.gamma * rng.normal(0.0, math.sqrt(v), size) - self.beta * v

    def z_bar(self, rng, size=None):
        v = self.r
        return self.gamma * rng.normal(0.0, math.sqrt(v), size) - self.beta * v

    def g_factor(self, rng, size=None):
        return np.exp(-self.omega_bar(rng, size)) / self.lam

    def c_factor(self, rng, size=None):
        return np.exp(-self.z_bar(rng, size)) / self.lam

    def z_moment(self, p: float) -> float:
        """E[exp(p Zbar)] in closed form."""
        return math.exp(p * self.beta * self.r * (p - 1.0))


def cell_grid(a: float, b: float, h: float) -> np.ndarray:
    """Midpoints of the cells of width h tiling [a, b]."""
    n = int(round((b - a) / h))
    if n < 1 or abs(n * h - (b - a)) > 1e-9 * max(1.0, abs(b - a)):
        raise ValueError("interval is not a whole number of cells")
    return a + (np.arange(n) + 0.5) * h


def sample_masses(kernel, grid, h, gamma, rng, reps, chunk=2000):
    """reps x len(grid) cell masses from the exact sampler, yielded in chunks."""
    var = kernel.variance
    done = 0
    while done < reps:
        k = min(chunk, reps - done)
        x = noise.sample_exact(kernel, grid, rng, size=k)
        yield h * np.exp(gamma * x - 0.5 * gamma**2 * var)
        done += k


@dataclass
class MomentEstimate:
    t: float
    estimate: float
    stderr: float
    unreliable: bool = False


def _moment_summary(t, samples, q):
    vals = samples**q
    est, se = jackknife(vals)
    kurt = float(stats.kurtosis(vals, fisher=False)) if vals.std() > 0 else 0.0
    return MomentEstimate(t, est, se, kurt > 100.0)


def moment_mc(gamma, delta, q, t_list, reps, seed, h=None):
    """E[eta^delta(0, t)**q] for each t, plus the fitted log-log slope.

    The field is U_h^delta sampled at cell midpoints of [0, max t].
    Returns (estimates, slope).
    """
    beta = 0.5 * gamma**2
    if q == 0:
        raise ValueError("q must be nonzero")
    if beta > 0 and q >= 1.0 / beta:
        raise ValueError("moment may be infinite")
    t_list = np.asarray(sorted(t_list), dtype=float)
    if h is None:
        h = delta / 1024
    grid = cell_grid(0.0, t_list[-1], h)
    idx = np.round(t_list / h).astype(int) - 1
    rng = np.random.default_rng(seed)
    kern = noise.u_kernel(delta, h)
    rows = []
    for m in sample_masses(kern, grid, h, gamma, rng, reps):
        rows.append(np.cumsum(m, axis=1)[:, idx])
    eta = np.vstack(rows)
    ests = [_moment_summary(t, eta[:, j], q) for j, t in enumerate(t_list)]
    slope = float(np.polyfit(np.log(t_list), np.log([e.estimate for e in ests]), 1)[0])
    return ests, slope


def scaling_law_pair(gamma, delta, lam, interval, reps, seed, h=None):
    """Samples of eta^delta(lam A) and lam e^{Zbar} eta^{delta,lam}(A).

    Both sides use the same effective resolution: the left field lives on
    cells of width lam*h with eps = lam*h, the right one on cells of width h
    with eps = h, so the two are equal in law exactly.
    """
    a, b = interval
    if b - a > delta:
        raise ValueError("interval longer than delta: U-lambda kernel not positive definite")
    if not 0 < lam <= 1:
        raise ValueError("need 0 < lam <= 1")
    if h is None:
        h = (b - a) / 256
    rng = np.random.default_rng(seed)
    left_grid = cell_grid(lam * a, lam * b, lam * h)
    left = np.concatenate([m.sum(axis=1) for m in sample_masses(
        noise.u_kernel(delta, lam * h), left_grid, lam * h, gamma, rng, reps)])
    right_grid = cell_grid(a, b, h)
    if lam == 1:
        kern = noise.u_kernel(delta, h)
    else:
        kern = noise.u_lambda_kernel(delta, h, lam)
    right = np.concatenate([m.sum(axis=1) for m in sample_masses(
        kern, right_grid, h, gamma, rng, reps)])
    if lam < 1:
        right = lam * np.exp(LognormalScaler(lam, gamma).z_bar(rng, reps)) * right
    else:
        right = lam * right
    return left, right


def laplace_mc(gamma, delta, r, t, reps, seed, h=None):
    """E[exp(-r eta^delta(0, t))] with its standard error."""
    if r == 0:
        return 1.0, 0.0
    if h is None:
        h = t / 256
    grid = cell_grid(0.0, t, h)
    rng = np.random.default_rng(seed)
    vals = np.concatenate([np.exp(-r * m.sum(axis=1)) for m in sample_masses(
        noise.u_kernel(delta, min(h, delta)), grid, h, gamma, rng, reps)])
    return jackknife(vals)


def laplace_corollary_exponent(gamma, a1, a2, ell):
    """Exponent c1 in the small-ball bound c * rho**(c1 * ell).

    With r = rho**(-a1 ell), t = rho**(a2 ell) and delta = rho.  Returns
    nan when the exponent conditions (a1 > a2 > 1/ell) fail.
    """
    beta = 0.5 * gamma**2
    s = beta * (a2 - 1.0 / ell)
    if not (a1 > a2 and s > 0):
        return math.nan
    root = math.sqrt(s)
    return ((a1 - a2) / root - root) ** 2 / 32.0


def l2_bound(gamma, delta_n, x):
    if gamma >= 1:
        raise ValueError("bound requires gamma<1")
    g2 = gamma**2
    if x > delta_n:
        return 2.0 * x * delta_n * g2 / (1.0 - g2)
    return 2.0 / ((1.0 - g2) * (2.0 - g2)) * x ** (2.0 - g2) * delta_n**g2 - x * x


def l2_check(gamma, delta_n, x, reps, seed, h=None):
    """MC estimate of E[(eta^n(0, x) - x)**2] against the bound.

    Returns (estimate, stderr, bound, passed).
    """
    bound = l2_bound(gamma, delta_n, x)
    if h is None:
        h = min(delta_n, x) / 128
    grid = cell_grid(0.0, x, h)
    rng = np.random.default_rng(seed)
    sq = np.concatenate([(m.sum(axis=1) - x) ** 2 for m in sample_masses(
        noise.u_kernel(delta_n, h), grid, h, gamma, rng, reps)])
    est, se = jackknife(sq)
    return est, se, bound, bool(est - 3 * se <= bound)
