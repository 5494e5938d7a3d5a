"""Ahlfors-Beurling extension of a circle homeomorphism and Whitney-cube bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .inverse import Homeomorphism, homeomorphism_eval

__all__ = [
    "DyadicInterval",
    "WhitneyCube",
    "Extension",
    "ab_extension",
    "dilatation_numeric",
    "quasisym_delta",
    "j0_intervals",
    "j5_count",
    "dilatation_bound",
    "integrability_scan",
    "whitney_cube",
    "cube_area",
    "cube_ratio_diagnostic",
]

J0_SPAN = 3
J5_DEPTH = 5


@dataclass(frozen=True)
class DyadicInterval:
    level: int
    index: int

    @property
    def left(self) -> float:
        return self.index / 2.0**self.level

    @property
    def right(self) -> float:
        return (self.index + 1) / 2.0**self.level

    @property
    def length(self) -> float:
        return 2.0**-self.level

    def children(self):
        return DyadicInterval(self.level + 1, 2 * self.index), DyadicInterval(
            self.level + 1, 2 * self.index + 1)


@dataclass(frozen=True)
class WhitneyCube:
    base: DyadicInterval

    @property
    def y_range(self) -> tuple:
        n = self.base.level
        if n == 0:
            return 0.5, 2.0
        return 2.0 ** (-n - 1), 2.0**-n

    @property
    def area(self) -> float:
        lo, hi = self.y_range
        return self.base.length * (hi - lo)

    def contains(self, x, y) -> bool:
        lo, hi = self.y_range
        return self.base.left <= x < self.base.right and lo < y <= hi


def whitney_cube(x: float, y: float) -> WhitneyCube:
    """The cube of the strip R x (0, 2] containing x + iy."""
    if not 0 < y <= 2:
        raise ValueError("point outside the strip")
    n = 0 if y > 0.5 else int(math.floor(-math.log2(y)))
    if n > 0 and y > 2.0**-n:
        n -= 1
    if n > 0 and y <= 2.0 ** (-n - 1):
        n += 1
    return WhitneyCube(DyadicInterval(n, int(math.floor(x * 2.0**n))))


def cube_area(level: int) -> float:
    return WhitneyCube(DyadicInterval(level, 0)).area


class Extension:
    """Exact antiderivative of a periodic piecewise-linear h^{-1}.

    ``H(u) = int_0^u h(s) ds`` is closed-form between the knots of h, which
    makes the extension integrals exact.
    """

    def __init__(self, h: Homeomorphism):
        self.h = h
        inv = h.inverse_map
        self.knots = np.asarray(inv.edges) / inv.total
        self.knots[-1] = 1.0
        self.vals = np.asarray(inv.points, dtype=float)
        seg = 0.5 * (self.vals[1:] + self.vals[:-1]) * np.diff(self.knots)
        self.cum = np.concatenate([[0.0], np.cumsum(seg)])
        self.h1 = float(self.cum[-1])

    @cached_property
    def c0(self) -> float:
        return self.h1 - 0.5

    def _anti_unit(self, f):
        i = np.clip(np.searchsorted(self.knots, f, side="right") - 1, 0, self.knots.size - 2)
        x0 = self.knots[i]
        v0 = self.vals[i]
        w = self.knots[i + 1] - x0
        slope = np.where(w > 0, (self.vals[i + 1] - v0) / np.where(w > 0, w, 1.0), 0.0)
        d = f - x0
        return self.cum[i] + v0 * d + 0.5 * slope * d * d

    def antiderivative(self, u):
        u = np.asarray(u, dtype=float)
        k = np.floor(u)
        f = u - k
        return k * self.h1 + 0.5 * k * (k - 1) + self._anti_unit(f) + k * f

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            raise ValueError("extension defined for y >= 0")
        out = np.empty(np.broadcast(x, y).shape, dtype=complex)
        x, y = np.broadcast_arrays(x, y)
        low = (y > 0) & (y < 1)
        if np.any(low):
            xl, yl = x[low], y[low]
            hp = self.antiderivative(xl + yl)
            h0 = self.antiderivative(xl)
            hm = self.antiderivative(xl - yl)
            out[low] = (hp - hm) / (2 * yl) + 1j * (hp - 2 * h0 + hm) / (2 * yl)
        zero = y == 0
        if np.any(zero):
            out[zero] = homeomorphism_eval(self.h, x[zero])
        mid = (y >= 1) & (y < 2)
        out[mid] = x[mid] + 1j * y[mid] + (2.0 - y[mid]) * self.c0
        high = y >= 2
        out[high] = x[high] + 1j * y[high]
        return out


def ab_extension(h, x, y):
    """F(x + iy) for the Ahlfors-Beurling extension of h^{-1}."""
    ext = h if isinstance(h, Extension) else Extension(h)
    out = ext(x, y)
    return complex(out) if out.ndim == 0 else out


def dilatation_numeric(h, z: complex, step: float = 1e-6) -> float:
    """K = (1 + |mu|) / (1 - |mu|) from central-difference Wirtinger derivatives."""
    ext = h if isinstance(h, Extension) else Extension(h)
    x, y = z.real, z.imag
    fx = (ext(x + step, y) - ext(x - step, y)) / (2 * step)
    fy = (ext(x, y + step) - ext(x, y - step)) / (2 * step)
    dz = 0.5 * (fx - 1j * fy)
    dzb = 0.5 * (fx + 1j * fy)
    mu = abs(complex(dzb)) / abs(complex(dz)) if abs(complex(dz)) > 0 else math.inf
    if mu >= 1:
        raise ValueError(f"degenerate at z={z}: |mu|={mu}")
    return (1 + mu) / (1 - mu)


def _increments(h, lefts, width):
    a = homeomorphism_eval(h, lefts)
    b = homeomorphism_eval(h, lefts + width)
    return np.asarray(b - a)


def quasisym_delta(h: Homeomorphism, J1, J2) -> float:
    """r + 1/r with r the ratio of the h^{-1}-increments of J1 and J2."""
    q1 = float(homeomorphism_eval(h, J1[1]) - homeomorphism_eval(h, J1[0]))
    q2 = float(homeomorphism_eval(h, J2[1]) - homeomorphism_eval(h, J2[0]))
    if q1 <= 0 or q2 <= 0:
        raise ValueError("zero inverse increment")
    r = q1 / q2
    return r + 1.0 / r


def j0_intervals(I: DyadicInterval):
    return [DyadicInterval(I.level, I.index + d) for d in (-1, 0, 1)]


def j5_count(pairs: str = "distinct") -> int:
    m = J0_SPAN * 2**J5_DEPTH
    if pairs == "distinct":
        return m * (m - 1) // 2
    if pairs == "ordered":
        return m * m
    raise ValueError("pairs must be 'distinct' or 'ordered'")


def _resolution(h: Homeomorphism) -> int:
    n = h.inverse_map.edges.size - 1
    return int(round(math.log2(n)))


def dilatation_bound(h: Homeomorphism, I: DyadicInterval, pairs: str = "distinct") -> float:
    """K_Q(I): the sum of delta over the level-(n+5) pairs inside j0(I).

    ``pairs="distinct"`` sums over unordered pairs of distinct subintervals;
    ``pairs="ordered"`` takes every ordered pair including the diagonal.
    """
    if I.level + J5_DEPTH > _resolution(h):
        raise ValueError("grid resolution insufficient for this level")
    m = J0_SPAN * 2**J5_DEPTH
    width = 2.0 ** -(I.level + J5_DEPTH)
    lefts = (I.index - 1) * 2.0**-I.level + width * np.arange(m)
    q = _increments(h, lefts, width)
    if np.any(q <= 0):
        raise ValueError("zero inverse increment")
    s = float(q.sum() * (1.0 / q).sum())
    if pairs == "distinct":
        return s - m
    if pairs == "ordered":
        return 2.0 * s
    raise ValueError("pairs must be 'distinct' or 'ordered'")


def level_bounds(h: Homeomorphism, level: int, pairs: str = "distinct") -> np.ndarray:
    """K_Q for every dyadic interval of the given level in [0, 1)."""
    if level + J5_DEPTH > _resolution(h):
        raise ValueError("grid resolution insufficient for this level")
    m = J0_SPAN * 2**J5_DEPTH
    width = 2.0 ** -(level + J5_DEPTH)
    k = np.arange(2**level)
    lefts = ((k - 1) * 2.0**-level)[:, None] + width * np.arange(m)[None, :]
    q = _increments(h, lefts, width)
    s = q.sum(axis=1) * (1.0 / q).sum(axis=1)
    return s - m if pairs == "distinct" else 2.0 * s


def integrability_scan(h: Homeomorphism, n_max: int, pairs: str = "distinct") -> float:
    """Sum over Whitney cubes above [0, 1] of area times K_Q, levels 0..n_max."""
    total = 0.0
    for n in range(n_max + 1):
        total += cube_area(n) * float(level_bounds(h, n, pairs).sum())
    return total


def cube_ratio_diagnostic(h: Homeomorphism, I: DyadicInterval, n_points: int = 16,
                          step: float = 1e-7, seed=0) -> float:
    """max sampled numeric dilatation inside C_I divided by K_Q(I)."""
    ext = Extension(h)
    rng = np.random.default_rng(seed)
    cube = WhitneyCube(I)
    lo, hi = cube.y_range
    hi = min(hi, 1.0 - 4 * step)
    best = 1.0
    for _ in range(n_points):
        x = rng.uniform(I.left + 4 * step, I.right - 4 * step)
        y = rng.uniform(lo + 4 * step, hi)
        best = max(best, dilatation_numeric(ext, complex(x, y), step))
    return best / dilatation_bound(h, I)
