"""Inverse (quantile) maps of GMC measures and Monte Carlo checks of their laws."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from . import noise
from .gmc import GmcMeasure, build_measure, cell_grid, sample_masses
from .harness import jackknife

__all__ = [
    "InverseMap",
    "Homeomorphism",
    "q_of",
    "q_increment",
    "q_bullet",
    "dyadic_upper",
    "homeomorphism_eval",
    "circle_homeomorphism",
    "distance_correlation",
    "smp_test",
    "mean_shift_mc",
    "ratio_moment_mc",
    "ratio_slope_mc",
    "multipoint_product_mc",
    "multiscale_measures",
    "xi_increment_variance",
    "xi_modulus_slope",
    "xi_field",
    "xi_sup_moments",
]


class InverseMap:
    """Q(x) = inf{t : eta(origin, t) >= x}, linear inside cells."""

    def __init__(self, source: GmcMeasure):
        self.source = source
        self.edges = source.edges
        self.points = source.origin + source.h * np.arange(self.edges.size)

    @property
    def total(self) -> float:
        return float(self.edges[-1])

    def __call__(self, x):
        return q_of(self, x)


def q_of(inv: InverseMap, x):
    x = np.asarray(x, dtype=float)
    tol = 1e-12 * max(1.0, inv.total)
    if np.any(x < -tol) or np.any(x > inv.total + tol):
        raise ValueError("argument outside the mass domain")
    out = np.interp(x, inv.edges, inv.points)
    return float(out) if out.ndim == 0 else out


def q_increment(inv: InverseMap, y, x):
    if np.any(np.asarray(y) > np.asarray(x)):
        raise ValueError("need y <= x")
    return q_of(inv, x) - q_of(inv, y)


def q_bullet(measure: GmcMeasure, x, t0):
    """inf{t >= 0 : eta[t0, t0 + t] >= x}."""
    inv = measure if isinstance(measure, InverseMap) else InverseMap(measure)
    base = inv.source.cdf(t0)
    if base + x > inv.total * (1 + 1e-12):
        raise ValueError("insufficient mass beyond the starting point")
    return q_of(inv, min(base + x, inv.total)) - t0


def dyadic_upper(inv: InverseMap, a, n: int):
    """Smallest dyadic (m + 1) / 2**n strictly above Q(a)."""
    q = np.asarray(q_of(inv, a))
    out = (np.floor(q * 2.0**n) + 1.0) / 2.0**n
    return float(out) if out.ndim == 0 else out


@dataclass
class Homeomorphism:
    """x -> Q_tau(x * tau[0, 1]) on [0, 1], extended by x + 1 -> h(x) + 1."""

    inverse_map: InverseMap

    @property
    def normalization(self) -> float:
        return self.inverse_map.total


def circle_homeomorphism(measure: GmcMeasure) -> Homeomorphism:
    lo, hi = measure.extent
    if abs(lo) > 1e-12 or abs(hi - 1.0) > 1e-9:
        raise ValueError("measure must live on [0, 1]")
    return Homeomorphism(InverseMap(measure))


def homeomorphism_eval(h: Homeomorphism, x):
    x = np.asarray(x, dtype=float)
    k = np.floor(x)
    f = x - k
    inv = h.inverse_map
    out = k + np.interp(f * inv.total, inv.edges, inv.points)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# statistical checks


def distance_correlation(x, y, max_n: int = 2000, seed=0) -> float:
    """Sample distance correlation (on a random subsample of at most max_n)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size > max_n:
        idx = np.random.default_rng(seed).choice(x.size, max_n, replace=False)
        x, y = x[idx], y[idx]

    def centred(v):
        d = np.abs(v[:, None] - v[None, :])
        return d - d.mean(0) - d.mean(1)[:, None] + d.mean()

    a, b = centred(x), centred(y)
    dcov = (a * b).mean()
    den = math.sqrt((a * a).mean() * (b * b).mean())
    return float(math.sqrt(max(dcov, 0.0) / den)) if den > 0 else 0.0


def _batch_q(edges, h, targets):
    """Row-wise Q for a batch: edges (reps, n+1), targets (reps, k)."""
    reps, n1 = edges.shape
    out = np.empty(targets.shape)
    for r in range(reps):
        out[r] = np.interp(targets[r], edges[r], h * np.arange(n1))
    return out


def _batch_cdf(edges, h, points):
    pos = points / h
    n = edges.shape[1] - 1
    i = np.clip(np.floor(pos).astype(np.int64), 0, n - 1)
    rows = np.arange(edges.shape[0])[:, None]
    frac = pos - i
    return edges[rows, i] + frac * (edges[rows, i + 1] - edges[rows, i])


def _edges_batches(gamma, delta, length, h, reps, rng):
    grid = cell_grid(0.0, length, h)
    kern = noise.u_kernel(delta, h)
    for m in sample_masses(kern, grid, h, gamma, rng, reps):
        yield np.concatenate([np.zeros((m.shape[0], 1)), np.cumsum(m, axis=1)], axis=1)


@dataclass
class SmpResult:
    pearson: float
    pearson_pvalue: float
    dcor: float
    n: int
    dropped: int
    degenerate: bool


def smp_test(gamma, delta, a, r, t, reps, seed, h=None, length=None):
    """Correlation between Q(a) and eta(Q(a) + r, Q(a) + r + t)."""
    if h is None:
        h = delta / 64
    if length is None:
        length = math.ceil((3 * a + r + t) / h) * h
    rng = np.random.default_rng(seed)
    qa, mass = [], []
    dropped = 0
    for edges in _edges_batches(gamma, delta, length, h, reps, rng):
        ok = edges[:, -1] >= a
        q = np.full(edges.shape[0], np.inf)
        q[ok] = _batch_q(edges[ok], h, np.full((ok.sum(), 1), a))[:, 0]
        ok &= q + r + t <= length
        dropped += int((~ok).sum())
        e, q = edges[ok], q[ok]
        lo = _batch_cdf(e, h, (q + r)[:, None])[:, 0]
        hi = _batch_cdf(e, h, (q + r + t)[:, None])[:, 0]
        qa.append(q)
        mass.append(hi - lo)
    qa = np.concatenate(qa)
    mass = np.concatenate(mass)
    if qa.std() == 0 or mass.std() == 0:
        return SmpResult(math.nan, math.nan, math.nan, qa.size, dropped, True)
    pr, pv = stats.pearsonr(qa, mass)
    return SmpResult(float(pr), float(pv), distance_correlation(qa, mass), qa.size, dropped, False)


def mean_shift_mc(gamma, delta, a, reps, seed, h=None, length=None):
    """E[Q^delta(a)] - a with its standard error and one-sided 99% lower bound."""
    if h is None:
        h = delta / 64
    if length is None:
        length = math.ceil(4 * a / h) * h
    rng = np.random.default_rng(seed)
    vals = []
    for edges in _edges_batches(gamma, delta, length, h, reps, rng):
        if np.any(edges[:, -1] < a):
            raise RuntimeError("grid too short for the requested mass")
        vals.append(_batch_q(edges, h, np.full((edges.shape[0], 1), a))[:, 0] - a)
    est, se = jackknife(np.concatenate(vals))
    return est, se, float(est - stats.norm.ppf(0.99) * se)


def _check_disjoint(J, I):
    if not (J[1] <= I[0] or I[1] <= J[0]):
        if tuple(J) != tuple(I):
            raise ValueError("intervals overlap")


def ratio_moment_mc(gamma, delta, J, I, p, reps, seed, h=None):
    """E[(Q(J) / Q(I))**p] for mass intervals J and I."""
    _check_disjoint(J, I)
    if tuple(J) == tuple(I):
        return 1.0, 0.0
    if h is None:
        h = delta / 64
    top = max(J[1], I[1])
    length = math.ceil((2 * top + 0.5 * delta) / h) * h
    rng = np.random.default_rng(seed)
    pts = np.array([J[0], J[1], I[0], I[1]], dtype=float)
    vals = []
    for edges in _edges_batches(gamma, delta, length, h, reps, rng):
        ok = edges[:, -1] >= top
        q = _batch_q(edges[ok], h, np.broadcast_to(pts, (ok.sum(), 4)))
        vals.append(((q[:, 1] - q[:, 0]) / (q[:, 3] - q[:, 2])) ** p)
    return jackknife(np.concatenate(vals))


def ratio_slope_mc(gamma, delta, p, xs, sep_factor, reps, seed, start=0.0, h=None):
    """Equal-length ratio family with common random numbers across x.

    For each x, J = [start, start + x] and I = J + (1 + sep_factor) x.
    Returns (estimates, stderrs, slope of log E vs log(x / delta)).
    """
    xs = np.asarray(sorted(xs), dtype=float)
    if h is None:
        h = xs[0] / 16
    top = start + xs[-1] * (2 + sep_factor)
    length = math.ceil((2 * top + 0.5 * delta) / h) * h
    rng = np.random.default_rng(seed)
    pts = np.concatenate([[start + 0 * x, start + x, start + (1 + sep_factor) * x,
                           start + (2 + sep_factor) * x] for x in xs])
    acc = [[] for _ in xs]
    for edges in _edges_batches(gamma, delta, length, h, reps, rng):
        ok = edges[:, -1] >= top
        q = _batch_q(edges[ok], h, np.broadcast_to(pts, (ok.sum(), pts.size)))
        for j in range(xs.size):
            b = 4 * j
            acc[j].append(((q[:, b + 1] - q[:, b]) / (q[:, b + 3] - q[:, b + 2])) ** p)
    est = np.array([jackknife(np.concatenate(v))[0] for v in acc])
    se = np.array([jackknife(np.concatenate(v))[1] for v in acc])
    slope = float(np.polyfit(np.log(xs / delta), np.log(est), 1)[0])
    return est, se, slope


def multiscale_measures(noise_real, eps, scales, length, gamma):
    """GMC measures on [0, length] for each truncation scale, one realization.

    Fields are evaluated at cell midpoints of width eps from the shared mesh
    and normalized with the exact mesh variance.
    """
    mesh = noise_real.mesh
    centers = cell_grid(0.0, length, eps)
    fields = noise.nested_fields(noise_real, eps, scales, centers)
    phase = ((centers[0] - mesh.x_lo) / mesh.dx) % 1.0
    out = []
    for k, d in enumerate(scales):
        var = noise.mesh_variance(mesh, noise.RegionSpec("triangle-U", eps, d), phase)
        out.append(build_measure(fields[k], eps, gamma, var, 0.0, d))
    return out


@dataclass
class MultipointResult:
    joint: float
    joint_se: float
    marginals: list
    gap_probability: float
    ratio: float
    n: int


def multipoint_product_mc(gamma, scales, pairs, p_list, gap, reps, seed, eps=None,
                          rows_per_octave=8):
    """E[prod_k (Q^k(J_k) / Q^k(I_k))**p_k * 1{gap events}] on one mesh.

    ``pairs`` is a list of (J, I) mass intervals; pair k + 1 must lie left
    of pair k and scales must decrease.  The gap event between consecutive
    pairs is Q^k(a_k) - Q^{k+1}(b_{k+1}) >= gap * delta_{k+1}, where a_k is
    the left end of pair k and b_{k+1} the right end of pair k + 1.
    """
    scales = [float(s) for s in scales]
    if any(s2 >= s1 for s1, s2 in zip(scales, scales[1:])):
        raise ValueError("scales must be strictly decreasing")
    if len(pairs) != len(scales) or len(p_list) != len(scales):
        raise ValueError("need one pair and one exponent per scale")
    ends = []
    for J, I in pairs:
        _check_disjoint(J, I)
        ends.append((min(J[0], I[0]), max(J[1], I[1])))
    for k in range(len(ends) - 1):
        if not ends[k + 1][1] <= ends[k][0]:
            raise ValueError("pairs must be ordered right to left")
    if eps is None:
        eps = min(scales) / 16
    top_mass = max(e[1] for e in ends)
    length = math.ceil((3 * top_mass + 4 * scales[0]) / eps) * eps
    pad = math.ceil(scales[0] / eps) * eps
    mesh = noise.make_mesh(-pad, length + pad, eps, scales[0], eps, rows_per_octave)
    rng = np.random.default_rng(seed)
    joint, indiv, gaps = [], [[] for _ in scales], []
    for _ in range(reps):
        real = noise.sample_white_noise(mesh, rng)
        meas = multiscale_measures(real, eps, scales, length, gamma)
        if any(m.total < top_mass for m in meas):
            continue
        invs = [InverseMap(m) for m in meas]
        prod = 1.0
        for k, ((J, I), p) in enumerate(zip(pairs, p_list)):
            rk = (q_increment(invs[k], *J) / q_increment(invs[k], *I)) ** p
            indiv[k].append(rk)
            prod *= rk
        ok = True
        for k in range(len(scales) - 1):
            if q_of(invs[k], ends[k][0]) - q_of(invs[k + 1], ends[k + 1][1]) < gap * scales[k + 1]:
                ok = False
        gaps.append(ok)
        joint.append(prod * ok)
    joint = np.asarray(joint)
    est, se = jackknife(joint)
    marg = [float(np.mean(v)) for v in indiv]
    prodm = float(np.prod(marg))
    return MultipointResult(est, se, marg, float(np.mean(gaps)), est / prodm, joint.size)


# ---------------------------------------------------------------------------
# comparison field xi = H - U on the circle


def _xi_section(y, z):
    """|S_y symmetric-difference (S_y + z)| for the periodized signed region."""
    w = 2.0 / math.pi * math.atan(math.pi * y / 2.0)
    z = abs(z) % 1.0
    z = min(z, 1.0 - z)

    def overlap(intervals, shift):
        tot = 0.0
        for a0, a1 in intervals:
            for b0, b1 in intervals:
                for k in (-1, 0, 1):
                    tot += max(0.0, min(a1, b1 + shift + k) - max(a0, b0 + shift + k))
        return tot

    if y <= 1.0:
        # U minus H: two side pieces of the triangle outside the wedge
        ivs = [(-y / 2, -w / 2), (w / 2, y / 2)]
    else:
        ivs = [(-w / 2, w / 2)]
    size = sum(b - a for a, b in ivs)
    return 2.0 * (size - overlap(ivs, z))


def xi_increment_variance(z: float, eps: float = 0.0) -> float:
    """E[(xi(z) - xi(0))**2] = lambda of T symmetric-difference (T + z)."""
    f = lambda y: _xi_section(y, z) / y**2
    lo = max(eps, 1e-300)
    knots = [k for k in (abs(z), (abs(z) * 24 / math.pi**2) ** (1 / 3), 1.0) if lo < k < 50.0]
    a = integrate.quad(f, lo, 1.0, points=[k for k in knots if k < 1.0] or None,
                       limit=500, epsabs=1e-15, epsrel=1e-10)[0]
    b = integrate.quad(f, 1.0, 50.0, limit=500, epsabs=1e-15, epsrel=1e-10)[0]
    # far tail: the section difference is 2 min(z, gap) with gap ~ 4/(pi^2 y)
    c = integrate.quad(f, 50.0, np.inf, limit=200)[0]
    return a + b + c


def xi_modulus_slope(zs, eps: float = 0.0) -> float:
    """Log-log regression slope of the xi increment variance in z."""
    zs = np.asarray(zs, dtype=float)
    v = [xi_increment_variance(z, eps) for z in zs]
    return float(np.polyfit(np.log(zs), np.log(v), 1)[0])


def xi_field(noise_real, eps, shifts):
    """xi = H_eps - U_eps^1 on a periodic mesh of period 1."""
    mesh = noise_real.mesh
    if not mesh.periodic:
        raise ValueError("xi lives on the circle; use a periodic mesh")
    hreg = noise.RegionSpec("wedge-H", eps, top=mesh.y_hi)
    ureg = noise.RegionSpec("triangle-U", eps, 1.0)
    return noise.field_from_noise(noise_real, hreg, shifts) - noise.field_from_noise(
        noise_real, ureg, shifts)


def xi_sup_moments(alphas, reps, seed, eps=1 / 64, y_hi=4.0, dx=1 / 512, rows_per_octave=6):
    """MC estimates of E[exp(alpha sup_[0,1] |xi|)] with standard errors."""
    mesh = noise.make_mesh(0.0, 1.0, eps, y_hi, dx, rows_per_octave, periodic=True)
    shifts = mesh.x_lo + np.arange(mesh.nx) * mesh.dx
    rng = np.random.default_rng(seed)
    sups = np.empty(reps)
    for i in range(reps):
        real = noise.sample_white_noise(mesh, rng)
        sups[i] = np.max(np.abs(xi_field(real, eps, shifts)))
    return {a: jackknife(np.exp(a * sups)) for a in alphas}
