"""Annulus families, Lehto integrals and the independent-copies machinery.

The dilatation field used throughout is the Whitney-cube bound K_Q, constant
on each cube C_I of the strip 0 < y <= 2 and equal to 1 elsewhere.  Below the
finest resolvable level the last level's values are continued down to y = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, stats

from . import noise
from .gmc import GmcMeasure, build_measure, cell_grid
from .inverse import Homeomorphism, InverseMap, circle_homeomorphism, homeomorphism_eval, q_of
from .welding import J0_SPAN, J5_DEPTH, _resolution, level_bounds

__all__ = [
    "AnnulusParams",
    "AnnulusFamily",
    "RandomAnnulus",
    "CubeField",
    "MeasureStack",
    "LowerBound",
    "GapGraph",
    "CenterPairing",
    "annulus_family",
    "radius_RN",
    "center_count",
    "center_points",
    "build_stack",
    "sample_tau",
    "scaling_factor",
    "disjointness_check",
    "choose_disjoint_levels",
    "lehto_integral",
    "lehto_lower_bound",
    "lehto_tail_mc",
    "gap_graph",
    "alpha_greedy",
    "alpha_bruteforce",
    "gap_alpha_mc",
    "pair_centers",
    "pairing_invariants",
    "overlap_event",
    "branched_lehto",
]

N_THETA = 512


# ---------------------------------------------------------------------------
# deterministic annuli


@dataclass(frozen=True)
class AnnulusParams:
    """rho_* = 2**-p_star and the exponents of the annulus ladder.

    ``P`` is either one value for every level or a sequence indexed from
    level 1.  ``r_d`` defaults to ``r_a``.
    """

    p_star: float
    r_a: float
    r_b: float
    r_d: Optional[float] = None
    r_p: float = 1.0
    P: object = 0.01

    def __post_init__(self):
        if self.p_star <= 0:
            raise ValueError("p_star must be positive")
        for name in ("r_a", "r_b", "r_p"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.r_d is None:
            object.__setattr__(self, "r_d", self.r_a)
        if self.r_a <= self.r_b:
            raise ValueError("constraint r_a > r_b violated (annuli would be empty)")
        if self.r_d <= self.r_b:
            raise ValueError("constraint r_d > r_b violated")
        ps = np.atleast_1d(np.asarray(self.P, dtype=float))
        if np.any(ps <= 0) or np.any(ps >= 1):
            raise ValueError("constraint P_k in (0, 1) violated")

    @property
    def rho_star(self) -> float:
        return 2.0**-self.p_star

    @property
    def rho_a(self) -> float:
        return self.rho_star**self.r_a

    @property
    def rho_b(self) -> float:
        return self.rho_star**self.r_b

    @property
    def rho_d(self) -> float:
        return self.rho_star**self.r_d

    def P_k(self, k):
        if np.ndim(self.P) == 0:
            return float(self.P) + 0.0 * np.asarray(k, dtype=float)
        ps = np.asarray(self.P, dtype=float)
        k = np.asarray(k)
        if np.any(k < 1) or np.any(k > ps.size):
            raise ValueError("no P_k given for this level")
        return ps[k - 1]

    def a(self, k):
        return self.rho_a * self.rho_star ** np.asarray(k, dtype=float)

    def b(self, k):
        return self.rho_b * self.rho_star ** np.asarray(k, dtype=float)

    def delta(self, k):
        return self.rho_star ** np.asarray(k, dtype=float)

    def d(self, k):
        return self.rho_d * self.rho_star ** np.asarray(k, dtype=float)

    def a_P(self, k):
        return self.a(k) * np.exp(self.P_k(k))

    def b_P(self, k):
        return self.b(k) * np.exp(-self.P_k(k))


@dataclass
class AnnulusFamily:
    params: AnnulusParams
    levels: np.ndarray
    a: np.ndarray
    b: np.ndarray
    delta: np.ndarray
    d: np.ndarray
    a_P: np.ndarray
    b_P: np.ndarray
    report: dict


def annulus_family(params: AnnulusParams, N: int, gamma: Optional[float] = None,
                   c: float = 1.0) -> AnnulusFamily:
    """Levels 1..N of the ladder plus a checklist report.

    The report covers disjointness (r_a - r_b < 1, and beta/2 > r_a when
    gamma is given), non-emptiness per level, containment of the perturbed
    pre-annuli with the unspecified constant taken as ``c``, and r_d > r_b.
    Only non-emptiness and the ordering constraints raise.
    """
    if N < 1:
        raise ValueError("need N >= 1")
    k = np.arange(1, N + 1)
    P = params.P_k(k)
    ln = math.log(1.0 / params.rho_star)
    gap = (params.r_a - params.r_b) * ln
    bad = np.nonzero(gap <= 2 * P)[0]
    if bad.size:
        raise ValueError(
            f"non-empty annuli constraint (r_a-r_b)ln(1/rho_*) > 2P_k violated at k={int(k[bad[0]])}")
    report = {
        "disjoint_rho_b>rho_a>rho_b*rho_star": params.r_a - params.r_b < 1,
        "nonempty": True,
        "r_d>r_b": params.r_d > params.r_b,
    }
    if gamma is not None:
        report["beta/2>r_a"] = 0.25 * gamma**2 > params.r_a
        rs = math.sqrt(params.rho_star)
        u = (c * gamma * rs / (1 - rs) * (params.b(k) + params.d(k)) ** (1 / 6)
             + c * gamma * (params.rho_b + params.rho_d))
        report["containment"] = bool(np.all(u < P))
    fam = AnnulusFamily(params, k, params.a(k), params.b(k), params.delta(k), params.d(k),
                        params.a_P(k), params.b_P(k), report)
    if not np.all(fam.a_P < fam.b_P):
        raise ValueError("non-empty annuli constraint a_k^P < b_k^P violated")
    return fam


def radius_RN(params: AnnulusParams, N: int) -> float:
    """Inner Lehto radius R_N = 2 rho_*^N."""
    return 2.0 * params.rho_star**N


def center_count(params: AnnulusParams, N: int, eps_ss: float, lam: float) -> int:
    """D_N = ceil(rho_*^{-(1 + eps_ss (1 - lam)) N})."""
    return int(math.ceil(params.rho_star ** (-(1 + eps_ss * (1 - lam)) * N) - 1e-9))


def center_points(h: Homeomorphism, D: int, max_centers: int = 256):
    """Image centers y_k = tau[0, k/D]/tau[0, 1], subsampled to at most max_centers.

    Returns (k indices, centers, subsampled flag).
    """
    ks = np.arange(D + 1)
    sub = ks.size > max_centers
    if sub:
        ks = np.unique(np.round(np.linspace(0, D, max_centers)).astype(int))
    return ks, forward_map(h, ks / D), sub


def forward_map(h: Homeomorphism, x):
    """tau[0, x] / tau[0, 1], extended periodically (x + 1 -> value + 1)."""
    x = np.asarray(x, dtype=float)
    k = np.floor(x)
    src = h.inverse_map.source
    out = k + src.cdf(x - k) / src.total
    return float(out) if out.ndim == 0 else out


@dataclass
class RandomAnnulus:
    """Square annulus with base [center + a0 M, center + b0 M] (and its mirror)."""

    level: int
    center: float
    scale: float
    a0: float
    b0: float
    p_over: float = 0.0

    def __post_init__(self):
        if not self.a_M < self.b_M:
            raise ValueError("random annulus must satisfy a_M < b_M")
        if not -1e-12 <= self.center <= 1 + 1e-12:
            raise ValueError("center must lie in [0, 1]")

    @property
    def a_M(self) -> float:
        return self.a0 * self.scale

    @property
    def b_M(self) -> float:
        return self.b0 * self.scale


# ---------------------------------------------------------------------------
# measure stack and scaling factors


def sample_tau(gamma: float, L: int, rng, size: Optional[int] = None, top: float = math.inf):
    """Cell masses of the circle GMC on 2**L cells, exact via circulant FFT.

    The wedge covariance is stationary on the circle, so the grid covariance
    is circulant and its eigenvalues are the FFT of one row.
    """
    n = 2**L
    h = 1.0 / n
    kern = noise.h_kernel(h, top)
    lam = _circulant_eigs(kern, n)
    shape = (n,) if size is None else (size, n)
    z = rng.standard_normal(shape)
    x = np.fft.irfft(np.sqrt(lam)[..., :] * np.fft.rfft(z, axis=-1), n=n, axis=-1)
    return h * np.exp(gamma * x - 0.5 * gamma**2 * kern.variance)


_EIGS: dict = {}


def _circulant_eigs(kern, n):
    key = (kern, n)
    lam = _EIGS.get(key)
    if lam is None:
        s = np.arange(n) / n
        row = noise.eval_kernel(kern, np.minimum(s, 1 - s))
        lam = np.fft.rfft(row).real
        if lam.min() < -1e-9 * lam.max():
            raise ValueError("circulant covariance is not positive semidefinite")
        lam = np.maximum(lam, 0.0)
        _EIGS[key] = lam
    return lam


@dataclass
class MeasureStack:
    """tau and the eta^n of one noise realization, shared read-only."""

    tau: GmcMeasure
    etas: dict
    params: AnnulusParams

    @property
    def h(self) -> Homeomorphism:
        return circle_homeomorphism(self.tau)


def build_stack(params: AnnulusParams, levels: Sequence[int], gamma: float, L: int, rng,
                y_hi: float = 2.0, rows_per_octave: int = 4) -> MeasureStack:
    """tau (wedge field, truncated at y_hi) and eta^n (triangle fields, height delta_n).

    All fields come from one periodic white-noise mesh on [0, 1) with cell
    width and lower cutoff 2**-L, so the measures are coupled exactly as the
    underlying fields are.  The eta^n live on [0, 2) by periodicity.
    """
    eps = 2.0**-L
    mesh = noise.make_mesh(0.0, 1.0, eps, y_hi, eps, rows_per_octave, periodic=True)
    real = noise.sample_white_noise(mesh, rng)
    centers = cell_grid(0.0, 1.0, eps)
    hreg = noise.RegionSpec("wedge-H", eps, top=y_hi)
    xh = noise.field_from_noise(real, hreg, centers)
    tau = build_measure(xh, eps, gamma, noise.mesh_variance(mesh, hreg, 0.5), 0.0, math.inf, "H")
    deltas = [float(params.delta(n)) for n in levels]
    if max(deltas) > y_hi:
        raise ValueError("delta_n exceeds the mesh height")
    fields = noise.nested_fields(real, eps, deltas, centers)
    etas = {}
    for n, d, f in zip(levels, deltas, fields):
        var = noise.mesh_variance(mesh, noise.RegionSpec("triangle-U", eps, d), 0.5)
        etas[int(n)] = build_measure(np.tile(f, 2), eps, gamma, np.tile(np.full(f.size, var), 2),
                                     0.0, d, "U")
    return MeasureStack(tau, etas, params)


def _tau_between(tau: GmcMeasure, x, t):
    def T(u):
        k = math.floor(u)
        return k * tau.total + float(tau.cdf(u - k))
    return T(t) - T(x)


def scaling_factor(tau: GmcMeasure, eta_n: GmcMeasure, params: AnnulusParams, n: int,
                   k: int = 0, D: int = 1) -> float:
    """M_{n,k} = tau[x, x + Q^n(eta^n(x), eta^n(x) + b_n)] / (b_n tau[0, 1]), x = k/D."""
    x = k / D
    lo, hi = eta_n.extent
    if not lo <= x <= hi:
        raise ValueError("center outside the eta^n extent")
    bn = float(params.b(n))
    e0 = float(eta_n.cdf(x))
    if e0 + bn > eta_n.total:
        raise ValueError("extent overflow: Q^n leaves the eta^n grid")
    t = float(q_of(InverseMap(eta_n), e0 + bn))
    return _tau_between(tau, x, t) / (bn * tau.total)


def disjointness_check(M_n: float, M_m: float, params: AnnulusParams, n: int,
                       m: Optional[int] = None) -> bool:
    """M_m / M_n < a_n^0 / b_m^0 (strict); m defaults to n + 1."""
    m = n + 1 if m is None else m
    return bool(M_m / M_n < float(params.a(n)) / float(params.b(m)))


def choose_disjoint_levels(M: dict, params: AnnulusParams) -> list:
    """Greedy chain of levels, each disjoint from the previously kept one."""
    out = []
    for n in sorted(M):
        if not out or disjointness_check(M[out[-1]], M[n], params, out[-1], n):
            out.append(n)
    return out


# ---------------------------------------------------------------------------
# the cube field and Lehto integrals


def _cube_y(level):
    if level == 0:
        return 0.5, 2.0
    return 2.0 ** (-level - 1), 2.0**-level


class CubeField:
    """K_Q(I) on every Whitney cube of levels 0..n_max, 1 outside the strip.

    Level n_max is continued down to the real line.
    """

    def __init__(self, h: Homeomorphism, n_max: Optional[int] = None, pairs: str = "distinct"):
        top = _resolution(h) - J5_DEPTH
        self.n_max = top if n_max is None else n_max
        if self.n_max > top or self.n_max < 0:
            raise ValueError("grid resolution insufficient for n_max")
        self.h = h
        self.pairs = pairs
        self.tables = [np.asarray(level_bounds(h, n, pairs)) for n in range(self.n_max + 1)]
        if min(t.min() for t in self.tables) < 1:
            raise ValueError("dilatation below 1 encountered")

    @classmethod
    def constant(cls, value: float, n_max: int = 0):
        """Field equal to ``value`` on the strip, for tests."""
        obj = cls.__new__(cls)
        obj.n_max = n_max
        obj.h = None
        obj.pairs = None
        obj.tables = [np.full(2**n, float(value)) for n in range(n_max + 1)]
        return obj

    def level_of(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore"):
            n = np.floor(-np.log2(np.where(y > 0, y, 1.0))).astype(int)
        n = np.where(y > 0.5, 0, n)
        n = np.where((n > 0) & (y > 2.0**-n), n - 1, n)
        return np.minimum(n, self.n_max)

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        out = np.ones(x.shape)
        inside = (y > 0) & (y <= 2)
        if np.any(inside):
            n = self.level_of(y[inside])
            idx = np.floor(x[inside] * 2.0**n).astype(np.int64)
            vals = np.empty(n.size)
            for lev in np.unique(n):
                sel = n == lev
                vals[sel] = self.tables[lev][np.mod(idx[sel], 2**lev)]
            out[inside] = vals
        return out

    def _bands(self):
        """(level, y_lo, y_hi) for each horizontal band of the strip."""
        out = []
        for n in range(self.n_max + 1):
            lo, hi = _cube_y(n)
            if n == self.n_max:
                lo = 0.0
            out.append((n, lo, hi))
        return out

    def ray_pieces(self, z0, c, s, r, R):
        """Breakpoints and K values along z0 + rho (c, s) for rho in [r, R], s > 0."""
        pts = [r, R]
        for n, lo, hi in self._bands():
            rlo, rhi = max(lo / s, r), min(hi / s, R)
            if rhi <= rlo:
                continue
            pts += [rlo, rhi]
            if abs(c) > 1e-15:
                x1, x2 = sorted((z0 + rlo * c, z0 + rhi * c))
                js = np.arange(math.floor(x1 * 2**n) + 1, math.ceil(x2 * 2**n))
                if js.size:
                    pts.extend(((js / 2.0**n - z0) / c).tolist())
        pts = np.unique(np.clip(pts, r, R))
        mid = 0.5 * (pts[1:] + pts[:-1])
        k = self(z0 + mid * c, mid * s)
        return pts, k

    def angular_profile(self, z0, r, R, n_theta: int = N_THETA):
        """Piecewise-constant Theta(rho) = sum_i K(z0 + rho e^{i theta_i}) dtheta.

        Returns (breakpoints, Theta on each piece).  Nodes sit at the
        midpoints theta_i = 2 pi (i + 1/2) / n_theta.
        """
        if n_theta % 2:
            raise ValueError("n_theta must be even")
        dth = 2 * math.pi / n_theta
        th = dth * (np.arange(n_theta // 2) + 0.5)
        c = np.array([math.cos(t) for t in th])
        s = np.array([math.sin(t) for t in th])
        m = th.size
        ray = [np.arange(m), np.arange(m)]
        rho = [np.full(m, float(r)), np.full(m, float(R))]
        for n, lo, hi in self._bands():
            rlo, rhi = np.maximum(lo / s, r), np.minimum(hi / s, R)
            ok = rhi > rlo
            ray += [np.flatnonzero(ok)] * 2
            rho += [rlo[ok], rhi[ok]]
            # vertical grid lines x = j 2^-n crossed inside the band
            ok &= np.abs(c) > 1e-15
            a, b = z0 + rlo * c, z0 + rhi * c
            x1, x2 = np.minimum(a, b), np.maximum(a, b)
            j0 = np.floor(x1 * 2**n) + 1
            cnt = np.where(ok, np.maximum(np.ceil(x2 * 2**n) - j0, 0), 0).astype(np.int64)
            if cnt.sum():
                rid = np.repeat(np.arange(m), cnt)
                off = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
                js = j0[rid] + off
                ray.append(rid)
                rho.append((js / 2.0**n - z0) / c[rid])
        ray = np.concatenate(ray)
        rho = np.clip(np.concatenate(rho), r, R)
        order = np.lexsort((rho, ray))
        ray, rho = ray[order], rho[order]
        keep = np.ones(ray.size, bool)
        keep[1:] = (ray[1:] != ray[:-1]) | (rho[1:] != rho[:-1])
        ray, rho = ray[keep], rho[keep]
        # consecutive points on one ray bound a piece
        inner = ray[1:] == ray[:-1]
        pr, start = ray[:-1][inner], rho[:-1][inner]
        mid = 0.5 * (start + rho[1:][inner])
        k = self(z0 + mid * c[pr], mid * s[pr])
        first = np.ones(pr.size, bool)
        first[1:] = pr[1:] != pr[:-1]
        d = np.diff(np.concatenate([[0.0], k]))
        d[first] = k[first]
        ev_r, ev_d = [start], [d]
        rr = np.concatenate(ev_r)
        dd = np.concatenate(ev_d)
        order = np.argsort(rr, kind="stable")
        rr, dd = rr[order], dd[order]
        brk, first = np.unique(rr, return_index=True)
        level = np.cumsum(dd)
        last = np.concatenate([first[1:], [rr.size]]) - 1
        upper = level[last]
        theta = dth * (upper + n_theta // 2)
        return np.concatenate([brk, [R]]), theta

    def lehto(self, z0, r, R, n_theta: int = N_THETA):
        """Lehto integral from each r (scalar or array) up to R."""
        rs = np.atleast_1d(np.asarray(r, dtype=float))
        lo = float(rs.min())
        brk, theta = self.angular_profile(z0, lo, R, n_theta)
        piece = np.log(brk[1:] / brk[:-1]) / theta
        cum = np.concatenate([[0.0], np.cumsum(piece)])
        total = cum[-1]
        out = np.empty(rs.size)
        for i, rv in enumerate(rs):
            j = np.searchsorted(brk, rv, side="right") - 1
            j = min(max(j, 0), piece.size - 1)
            part = math.log(brk[j + 1] / rv) / theta[j]
            out[i] = total - cum[j + 1] + part
        return float(out[0]) if np.ndim(r) == 0 else out


def lehto_integral(K, z, r: float, R: float, n_theta: int = N_THETA,
                   tol: float = 1e-10) -> float:
    """int_r^R [int_0^{2pi} K(z + rho e^{i theta}) dtheta]^{-1} drho / rho.

    ``K`` is a number, a CubeField (integrated exactly in rho) or a
    vectorized callable K(x, y) (adaptive quadrature in log rho).
    """
    if not 0 < r < R:
        raise ValueError("need 0 < r < R")
    z = complex(z)
    if np.isscalar(K):
        if K < 1:
            raise ValueError("K < 1 encountered")
        return math.log(R / r) / (2 * math.pi * K)
    if isinstance(K, CubeField):
        if abs(z.imag) > 0:
            raise ValueError("cube-field Lehto integrals are centered on the real line")
        return K.lehto(z.real, r, R, n_theta)
    dth = 2 * math.pi / n_theta
    th = dth * (np.arange(n_theta) + 0.5)
    c, s = np.cos(th), np.sin(th)

    def g(u):
        rho = math.exp(u)
        k = np.asarray(K(z.real + rho * c, z.imag + rho * s), dtype=float)
        if np.any(k < 1):
            raise ValueError("K < 1 encountered")
        return 1.0 / (dth * k.sum())

    val, _ = integrate.quad(g, math.log(r), math.log(R), epsabs=tol, epsrel=tol, limit=500)
    return float(val)


# ---------------------------------------------------------------------------
# decoupled lower bound


@dataclass
class LowerBound:
    total: float
    levels: list
    sigma: np.ndarray
    m: np.ndarray
    L_nm: list
    L_nn: np.ndarray
    L_n: list
    radii: np.ndarray
    coupled_levels: np.ndarray
    cardinality_ok: np.ndarray
    center: float
    lehto: Optional[float] = None


def _cube_rect(n, i, n_max):
    w = 2.0**-n
    lo, hi = _cube_y(n)
    if n == n_max:
        lo = 0.0
    return i * w, (i + 1) * w, lo, hi


def _cubes_near(field: CubeField, z0, alpha, beta):
    """All cubes meeting some circle of radius in [alpha, beta] around z0."""
    out = []
    for n in range(field.n_max + 1):
        w = 2.0**-n
        lo, hi = _cube_y(n)
        if n == field.n_max:
            lo = 0.0
        if lo > beta:
            continue
        i = np.arange(math.floor((z0 - beta) / w), math.floor((z0 + beta) / w) + 1)
        x0, x1 = i * w, (i + 1) * w
        dxmin = np.maximum(np.maximum(x0 - z0, z0 - x1), 0.0)
        dmin = np.hypot(dxmin, lo)
        dmax = np.hypot(np.maximum(abs(x0 - z0), abs(x1 - z0)), hi)
        keep = (dmin <= beta) & (dmax >= alpha)
        for ii, a, b in zip(i[keep], dmin[keep], dmax[keep]):
            per = 2.0 * (w + hi - lo)
            out.append((n, int(ii), float(a), float(b), per))
    return out


def _masses(hinv, lefts, rights, u, v):
    """h^{-1}-mass of [lefts, rights] cap [u, v], elementwise."""
    a = np.maximum(lefts, u)
    b = np.minimum(rights, v)
    ok = b > a
    out = np.zeros(lefts.shape)
    if np.any(ok):
        out[ok] = homeomorphism_eval(hinv, b[ok]) - homeomorphism_eval(hinv, a[ok])
    return out


def _coupled_split(hinv, n, i, z0, inner, band_edges):
    """Split K_Q(I) exactly into a self term and per-band coupling terms.

    A subinterval J of j0(I) counts as inner when it meets the inner base.
    Pairs of outer intervals form the self term; every pair involving an
    inner interval is charged to the bands in proportion to the pair's
    inner mass.
    """
    m = J0_SPAN * 2**J5_DEPTH
    width = 2.0 ** -(n + J5_DEPTH)
    lefts = (i - 1) * 2.0**-n + width * np.arange(m)
    rights = lefts + width
    q = homeomorphism_eval(hinv, rights) - homeomorphism_eval(hinv, lefts)
    nb = len(band_edges) - 1
    qb = np.zeros((m, nb))
    for b in range(nb):
        s, t = band_edges[b], band_edges[b + 1]
        qb[:, b] = _masses(hinv, lefts, rights, z0 + s, z0 + t) + _masses(
            hinv, lefts, rights, z0 - t, z0 - s)
    is_in = (rights > z0 - inner) & (lefts < z0 + inner)
    iu, ju = np.triu_indices(m, 1)
    dl = q[iu] / q[ju] + q[ju] / q[iu]
    outer = ~is_in[iu] & ~is_in[ju]
    self_term = float(dl[outer].sum())
    a, b, d = iu[~outer], ju[~outer], dl[~outer]
    band = np.zeros(nb)
    if a.size:
        mass = qb[a] + qb[b]
        tot = mass.sum(axis=1)
        frac = np.where(tot[:, None] > 0, mass / np.where(tot > 0, tot, 1.0)[:, None], 1.0 / nb)
        band = (d[:, None] * frac).sum(axis=0)
    return self_term, band


def lehto_lower_bound(stack_or_h, params: AnnulusParams, levels: Sequence[int], M: dict,
                      center: float = 0.0, field: Optional[CubeField] = None,
                      with_lehto: bool = True) -> LowerBound:
    """Sum over the chosen levels of sigma_n m_n, with all components.

    Annulus j has radii [a_n M_n, b_n M_n] around ``center``.  On it the
    circle integral of K is bounded by pi rho (lower half-plane) plus
    perimeter times K_Q over the cubes meeting the upper semicircle.  Cubes
    whose j0(I) misses the next chosen annulus' base are decoupled and
    enter L_n(rho); the others are split into L_{n,n} and L_{n,m}.
    All L's are normalized by the annulus width W.
    """
    h = stack_or_h.h if isinstance(stack_or_h, MeasureStack) else stack_or_h
    if field is None:
        field = CubeField(h)
    levels = sorted(int(n) for n in levels)
    if not levels:
        raise ValueError("need at least one level")
    for n1, n2 in zip(levels, levels[1:]):
        if not disjointness_check(M[n1], M[n2], params, n1, n2):
            raise ValueError(f"levels {n1} and {n2} are not disjoint")
    alpha = np.array([float(params.a(n)) * M[n] for n in levels])
    beta = np.array([float(params.b(n)) * M[n] for n in levels])
    if beta[0] > 2.0:
        raise ValueError("outermost annulus leaves the strip")
    J = len(levels)
    sig, mm, lnn, lnm, lnr, coup, card = [], [], [], [], [], [], []
    for j in range(J):
        W = beta[j] - alpha[j]
        inner = beta[j + 1] if j + 1 < J else 0.0
        edges = [0.0]
        for t in range(J - 1, j, -1):
            edges += [alpha[t], beta[t]]
        edges = np.array(edges)
        cubes = _cubes_near(field, center, alpha[j], beta[j])
        dec_lo, dec_hi, dec_w = [], [], []
        self_sum = 0.0
        band = np.zeros(max(edges.size - 1, 1))
        levels_coupled = set()
        for n, i, dmin, dmax, per in cubes:
            left, right = (i - 1) * 2.0**-n, (i + 2) * 2.0**-n
            coupled = inner > 0 and right > center - inner and left < center + inner
            kq = float(field.tables[n][i % 2**n])
            if not coupled:
                dec_lo.append(dmin)
                dec_hi.append(dmax)
                dec_w.append(per * kq)
                continue
            levels_coupled.add(n)
            st, bd = _coupled_split(h, n, i, center, inner, edges)
            self_sum += per * st
            band += per * bd
        self_n = self_sum / W
        band_n = band / W if inner > 0 else np.zeros(0)
        # piecewise-constant decoupled load on [alpha, beta]
        pts = np.unique(np.clip(np.concatenate([[alpha[j], beta[j]], dec_lo, dec_hi]),
                                alpha[j], beta[j]))
        mid = 0.5 * (pts[1:] + pts[:-1])
        load = np.zeros(mid.size)
        if dec_w:
            lo, hi, w = np.array(dec_lo), np.array(dec_hi), np.array(dec_w)
            load = ((lo[None, :] <= mid[:, None]) & (hi[None, :] >= mid[:, None])) @ w
        Ln = load / W
        cst = W * (Ln + self_n)
        m_n = float(np.sum(np.log((math.pi * pts[1:] + cst) / (math.pi * pts[:-1] + cst))) / math.pi)
        xmin = float(np.min(math.pi * pts[:-1] / W + Ln + self_n))
        y = float(band_n.sum())
        s_n = 1.0 / (1.0 + y / min(1.0, xmin))
        sig.append(s_n)
        mm.append(m_n)
        lnn.append(self_n)
        lnm.append(band_n)
        lnr.append((pts, Ln))
        coup.append(len(levels_coupled))
        card.append(len(levels_coupled) <= (params.r_a - params.r_b) * params.p_star + 2)
    sig, mm = np.array(sig), np.array(mm)
    out = LowerBound(float(np.sum(sig * mm)), levels, sig, mm, lnm, np.array(lnn), lnr,
                     np.column_stack([alpha, beta]), np.array(coup), np.array(card), center)
    if with_lehto:
        out.lehto = field.lehto(center, float(alpha[-1]), float(beta[0]))
    return out


# ---------------------------------------------------------------------------
# tail experiment


@dataclass
class TailResult:
    Ns: list
    delta: float
    freq: np.ndarray
    ci: np.ndarray
    values: np.ndarray


def lehto_tail_mc(params: AnnulusParams, N, delta: float, reps: int, seed, gamma: float = 0.1,
                  L: int = 12, center: float = 0.0, chunk: int = 64) -> TailResult:
    """Frequency of {L(0, R_N, 2) < delta N} for each N, common random numbers.

    Each replicate samples tau, builds the K_Q field from its inverse and
    evaluates the Lehto integral once down to the smallest R_N.
    """
    Ns = [int(n) for n in np.atleast_1d(N)]
    radii = np.array([radius_RN(params, n) for n in Ns])
    if radii.max() >= 2:
        raise ValueError("R_N must be below 2")
    rng = np.random.default_rng(seed)
    vals = np.empty((reps, len(Ns)))
    done = 0
    while done < reps:
        k = min(chunk, reps - done)
        masses = sample_tau(gamma, L, rng, size=k)
        for row in masses:
            tau = GmcMeasure(2.0**-L, 0.0, row, gamma, math.inf, "H")
            fld = CubeField(circle_homeomorphism(tau))
            vals[done] = fld.lehto(center, radii, 2.0)
            done += 1
    hits = vals < delta * np.array(Ns)[None, :]
    freq = hits.mean(axis=0)
    ci = np.array([_wilson(int(hh.sum()), reps) for hh in hits.T])
    return TailResult(Ns, delta, freq, ci, vals)


def _wilson(k, n, z=2.5758293035489004):
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


# ---------------------------------------------------------------------------
# gap graph and independence number


@dataclass
class GapGraph:
    """Vertex k carries [Q^k(a_k), Q^k(b_k) + delta_k]; edges are closed overlaps.

    For k < m the overlap's binding side is exactly the event
    Q^k(a_k) - Q^m(b_m) <= delta_m.
    """

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if np.any(self.hi < self.lo):
            raise ValueError("interval with hi < lo")

    @property
    def n(self) -> int:
        return self.lo.size

    def adjacency(self) -> np.ndarray:
        a = (self.lo[:, None] <= self.hi[None, :]) & (self.lo[None, :] <= self.hi[:, None])
        np.fill_diagonal(a, False)
        return a


def gap_graph(q_a, q_b, deltas) -> GapGraph:
    q_a, q_b, deltas = (np.asarray(v, dtype=float) for v in (q_a, q_b, deltas))
    return GapGraph(q_a, q_b + deltas)


def literal_gap_edges(q_a, q_b, deltas) -> np.ndarray:
    """O_{k,m} = {Q^{min}(a_min) - Q^{max}(b_max) <= delta_max} for every pair."""
    n = len(q_a)
    out = np.zeros((n, n), dtype=bool)
    for k, m in combinations(range(n), 2):
        out[k, m] = out[m, k] = q_a[k] - q_b[m] <= deltas[m]
    return out


def alpha_greedy(g: GapGraph) -> int:
    """Exact independence number of an interval graph (earliest right end first)."""
    last = -math.inf
    count = 0
    for k in np.argsort(g.hi, kind="stable"):
        if g.lo[k] > last:
            count += 1
            last = g.hi[k]
    return count


def alpha_bruteforce(g: GapGraph) -> int:
    """Maximum independent set by exhaustive search over subsets."""
    n = g.n
    if n > 20:
        raise ValueError("exhaustive search limited to 20 vertices")
    adj = g.adjacency()
    nbr = [int(sum(1 << j for j in np.nonzero(adj[i])[0])) for i in range(n)]
    best = 0
    for mask in range(1 << n):
        c = bin(mask).count("1")
        if c <= best:
            continue
        ok = True
        m = mask
        while m:
            i = (m & -m).bit_length() - 1
            if nbr[i] & mask:
                ok = False
                break
            m &= m - 1
        if ok:
            best = c
    return best


@dataclass
class GapAlphaResult:
    N: int
    alphas: np.ndarray
    mean_ratio: float
    ci: tuple
    below: dict
    literal_agrees: float
    graphs: list = field(default_factory=list)


def gap_alpha_mc(params: AnnulusParams, N: int, reps: int, seed, gamma: float = 0.1,
                 L: int = 14, c_gaps=(0.5,), rows_per_octave: int = 4,
                 keep_graphs: bool = False) -> GapAlphaResult:
    """Distribution of alpha(G) over jointly sampled eta^1..eta^N on one mesh."""
    eps = 2.0**-L
    levels = np.arange(1, N + 1)
    deltas = params.delta(levels)
    bs = params.b(levels)
    a_s = params.a(levels)
    length = math.ceil((4 * bs.max() + 2 * deltas.max()) / eps) * eps
    pad = math.ceil(deltas.max() / eps) * eps
    mesh = noise.make_mesh(-pad, length + pad, eps, float(deltas.max()), eps, rows_per_octave)
    centers = cell_grid(0.0, length, eps)
    phase = ((centers[0] - mesh.x_lo) / mesh.dx) % 1.0
    var = [noise.mesh_variance(mesh, noise.RegionSpec("triangle-U", eps, float(d)), phase)
           for d in deltas]
    rng = np.random.default_rng(seed)
    alphas = np.empty(reps, dtype=int)
    agree = 0
    graphs = []
    for r in range(reps):
        real = noise.sample_white_noise(mesh, rng)
        fields = noise.nested_fields(real, eps, deltas, centers)
        qa, qb = np.empty(N), np.empty(N)
        for k in range(N):
            inv = InverseMap(build_measure(fields[k], eps, gamma, var[k], 0.0, float(deltas[k])))
            if inv.total < bs[k]:
                raise RuntimeError("grid too short for Q^k(b_k)")
            qa[k], qb[k] = q_of(inv, a_s[k]), q_of(inv, bs[k])
        g = gap_graph(qa, qb, deltas)
        if keep_graphs:
            graphs.append(g)
        alphas[r] = alpha_greedy(g)
        agree += bool(np.array_equal(g.adjacency(), literal_gap_edges(qa, qb, deltas)))
    ratio = alphas / N
    se = ratio.std(ddof=1) / math.sqrt(reps) if reps > 1 else 0.0
    z = stats.norm.ppf(0.995)
    below = {float(c): float(np.mean(alphas < c * N)) for c in c_gaps}
    return GapAlphaResult(N, alphas, float(ratio.mean()),
                          (float(ratio.mean() - z * se), float(ratio.mean() + z * se)),
                          below, agree / reps, graphs)


# ---------------------------------------------------------------------------
# independent copies: centers, overlaps, branched Lehto


@dataclass
class CenterPairing:
    X: np.ndarray
    Y: np.ndarray
    R_N: float
    pairs: list


def _check_centers(v, name, R_N, check_gaps):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise ValueError(f"{name} needs at least two centers")
    if v[0] != 0 or (name == "X" and v[-1] != 1):
        raise ValueError(f"{name} must start at 0" + (" and end at 1" if name == "X" else ""))
    gaps = np.diff(v)
    if np.any(gaps <= 0):
        i = int(np.nonzero(gaps <= 0)[0][0])
        raise ValueError(f"{name} not strictly increasing at index {i + 1}")
    if check_gaps and np.any(gaps > R_N):
        i = int(np.nonzero(gaps > R_N)[0][0])
        raise ValueError(f"{name} gap {gaps[i]:.6g} > R_N at index {i + 1}")
    return v


def pair_centers(X, Y, R_N: float, check_gaps: bool = True) -> CenterPairing:
    """Select (k_s, m_s) by the alternating min/max recursion until X_k = 1."""
    X = _check_centers(X, "X", R_N, check_gaps)
    Y = _check_centers(Y, "Y", R_N, check_gaps)
    k, m = 0, 0
    pairs = [(0, 0)]
    while X[k] < 1:
        if m + 1 >= Y.size:
            raise ValueError(f"Y exhausted before X reached 1 (at X index {k})")
        target = Y[m + 1]
        cand = np.nonzero(X[k + 1:] >= target)[0]
        k = k + 1 + int(cand[0])
        later = np.nonzero(Y[m + 1:] <= X[k])[0]
        m = m + 1 + int(later[-1])
        pairs.append((k, m))
    return CenterPairing(X, Y, R_N, pairs)


def pairing_invariants(p: CenterPairing) -> dict:
    """The three inequalities plus coverage of [0, 1] by 2R_N-disks."""
    xs = p.X[[k for k, _ in p.pairs]]
    ys = p.Y[[m for _, m in p.pairs]]
    dx, dy = np.diff(xs), np.diff(ys)
    off = xs - ys
    cover = xs[0] <= 2 * p.R_N and xs[-1] >= 1 - 2 * p.R_N and bool(np.all(dx <= 4 * p.R_N))
    return {
        "offset": bool(np.all((off >= 0) & (off <= p.R_N))),
        "x_gaps": bool(np.all((dx > 0) & (dx <= 2 * p.R_N))),
        "y_gaps": bool(np.all((dy > 0) & (dy <= 2 * p.R_N))),
        "covers": bool(cover),
        "ends_at_one": bool(xs[-1] == 1.0),
    }


def overlap_event(A1: RandomAnnulus, A2: RandomAnnulus, P: Optional[float] = None) -> bool:
    """Both bases overlap by more than P = max of the two overlap sizes."""
    if P is None:
        P = max(A1.p_over, A2.p_over)
    x, y = A1.center, A2.center
    right = min(y + A2.b_M, x + A1.b_M) - max(y + A2.a_M, x + A1.a_M)
    left = min(y - A2.a_M, x - A1.a_M) - max(y - A2.b_M, x - A1.b_M)
    return bool(right > P and left > P)


def _half_integral(K, r, R, upper, n_theta, n_rho):
    """int over the half annulus of rho K dA = int int rho**2 K drho dtheta."""
    if np.isscalar(K):
        return math.pi * float(K) * (R**3 - r**3) / 3.0
    u, w = np.polynomial.legendre.leggauss(n_rho)
    rho = 0.5 * (R - r) * u + 0.5 * (R + r)
    w = 0.5 * (R - r) * w
    dth = math.pi / n_theta
    th = dth * (np.arange(n_theta) + 0.5) + (0.0 if upper else math.pi)
    vals = np.asarray(K(rho[:, None] * np.cos(th)[None, :], rho[:, None] * np.sin(th)[None, :]),
                      dtype=float)
    if np.any(vals < 1):
        raise ValueError("K < 1 encountered")
    return float(np.sum(w * rho**2 * vals.sum(axis=1)) * dth)


def branched_lehto(K1, K2, r: float, R: float, n_theta: int = 256, n_rho: int = 64) -> float:
    """L_{K1,2}(r, R) = (R - r)**2 (sqrt(I+) + sqrt(I-))**-2.

    I+ and I- are the integrals of rho K over the upper and lower half
    annuli; K1 and K2 are numbers or vectorized callables K(x, y).
    """
    if not 0 < r <= R:
        raise ValueError("need 0 < r <= R")
    if R == r:
        return 0.0
    ip = _half_integral(K1, r, R, True, n_theta, n_rho)
    im = _half_integral(K2, r, R, False, n_theta, n_rho)
    return (2 * math.pi * (R - r)) ** 2 / (math.sqrt(ip) + math.sqrt(im)) ** 2 / (2 * math.pi) ** 2
