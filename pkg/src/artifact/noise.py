"""Log-correlated Gaussian fields from hyperbolic white noise.

Two backends live here.  ``sample_exact`` draws a stationary Gaussian vector
from an analytic covariance kernel by Cholesky factorization.  The mesh
backend discretizes white noise on the upper half-plane (measure
dx dy / y**2) and builds every field from the same realization, so fields
such as H - U or scale increments come out with their joint law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.fft as sfft
import scipy.linalg
import scipy.sparse

__all__ = [
    "RegionSpec",
    "CovKernel",
    "HyperbolicMesh",
    "NoiseRealization",
    "ExactSampler",
    "u_kernel",
    "h_kernel",
    "omega_kernel",
    "u_lambda_kernel",
    "g_kernel",
    "increment_kernel",
    "r_lambda",
    "lambda_area",
    "eval_kernel",
    "kernel_support",
    "sample_exact",
    "make_mesh",
    "sample_white_noise",
    "field_from_noise",
    "nested_fields",
    "field_stencils",
    "mesh_covariance",
    "mesh_variance",
    "region_width",
]

REGION_KINDS = ("triangle-U", "infinite-cone-A", "wedge-H", "strip-increment")
_HALF_PI = 0.5 * math.pi


# ---------------------------------------------------------------------------
# regions


@dataclass(frozen=True)
class RegionSpec:
    """A region of the upper half-plane translated horizontally by ``shift``.

    ``lower`` and ``upper`` are the height cutoffs.  For ``triangle-U`` the
    upper cutoff is the scale delta.  For ``infinite-cone-A`` the width is
    min(y, delta) with ``upper`` = delta, and ``top`` truncates the cone (it
    may be inf analytically, never on a mesh).  For ``wedge-H`` the shape is
    fixed, ``upper`` is ignored and ``top`` is the height cutoff.  For
    ``strip-increment`` the region is the triangle band between heights
    ``lower`` and ``upper``.
    """

    kind: str
    lower: float
    upper: float = math.inf
    shift: float = 0.0
    top: float = math.inf

    def __post_init__(self):
        if self.kind not in REGION_KINDS:
            raise ValueError(f"unknown region kind {self.kind!r}")
        if self.lower < 0:
            raise ValueError("lower cutoff must be nonnegative")
        if self.kind in ("triangle-U", "strip-increment", "infinite-cone-A"):
            if not self.upper > 0 or self.lower > self.upper:
                raise ValueError("need lower <= upper")

    @property
    def y_min(self) -> float:
        return self.lower

    @property
    def y_max(self) -> float:
        """Largest height reached by the region."""
        if self.kind in ("triangle-U", "strip-increment"):
            return self.upper
        return self.top

    def shifted(self, shift: float) -> "RegionSpec":
        return RegionSpec(self.kind, self.lower, self.upper, shift, self.top)


def region_width(region: RegionSpec, y):
    """Horizontal width of the (unshifted) region section at height y.

    Heights outside the region's height range are not masked here.
    """
    y = np.asarray(y, dtype=float)
    if region.kind in ("triangle-U", "strip-increment"):
        return y.copy()
    if region.kind == "infinite-cone-A":
        return np.minimum(y, region.upper)
    return np.arctan(_HALF_PI * y) / _HALF_PI


def _width_inverse(region: RegionSpec, v):
    """Height at which the width first reaches v (inf if never)."""
    v = np.asarray(v, dtype=float)
    if region.kind in ("triangle-U", "strip-increment"):
        return v.copy()
    if region.kind == "infinite-cone-A":
        return np.where(v < region.upper, v, np.inf)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.tan(_HALF_PI * np.minimum(v, 1.0)) / _HALF_PI
    return np.where(v < 1.0, out, np.inf)


def _width_antiderivative(region: RegionSpec, y):
    """An antiderivative of width(y) / y**2."""
    y = np.asarray(y, dtype=float)
    if region.kind in ("triangle-U", "strip-increment"):
        return np.log(y)
    if region.kind == "infinite-cone-A":
        d = region.upper
        with np.errstate(divide="ignore"):
            return np.where(y <= d, np.log(y), math.log(d) + 1.0 - d / y)
    return _phi_h(y)


def _phi_h(t):
    """Antiderivative of (2/pi) arctan(pi t / 2) / t**2, finite at inf."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        at = _HALF_PI * t
        val = -np.arctan(at) / (_HALF_PI * t) + np.log(t) - 0.5 * np.log1p(at * at)
    return np.where(np.isinf(t), math.log(2.0 / math.pi), val)


def lambda_area(region: RegionSpec) -> float:
    """Hyperbolic area of the region, integrated in closed form."""
    lo, hi = region.lower, region.y_max
    if hi <= lo:
        return 0.0
    if lo == 0.0:
        raise ValueError("infinite hyperbolic area")
    if math.isinf(hi) and region.kind not in ("wedge-H", "infinite-cone-A"):
        raise ValueError("infinite hyperbolic area")
    val = _width_antiderivative(region, hi) - _width_antiderivative(region, lo)
    return float(val)


# ---------------------------------------------------------------------------
# analytic kernels


@dataclass(frozen=True)
class CovKernel:
    """Stationary covariance kernel of one of the fields.

    family is one of "U", "H", "omega", "U-lambda", "increment", "g-kernel".
    Use the helper constructors rather than building this by hand.
    """

    family: str
    delta: float = 1.0
    eps: float = 0.0
    lam: float = 1.0
    delta2: float = 0.0
    top: float = math.inf
    g: Optional[Callable] = field(default=None, compare=True)

    @property
    def variance(self) -> float:
        return float(eval_kernel(self, 0.0))


def u_kernel(delta: float, eps: float) -> CovKernel:
    if not (0 <= eps <= delta):
        raise ValueError("need 0 <= eps <= delta")
    return CovKernel("U", delta=delta, eps=eps)


def h_kernel(eps: float, top: float = math.inf) -> CovKernel:
    if not (0 < eps < top):
        raise ValueError("need 0 < eps < top")
    return CovKernel("H", eps=eps, top=top)


def omega_kernel(delta: float, eps: float) -> CovKernel:
    if not (0 < eps <= delta):
        raise ValueError("need 0 < eps <= delta")
    return CovKernel("omega", delta=delta, eps=eps)


def u_lambda_kernel(delta: float, eps: float, lam: float) -> CovKernel:
    if not (0 < eps <= delta) or not (0 < lam < 1):
        raise ValueError("need 0 < eps <= delta and 0 < lam < 1")
    return CovKernel("U-lambda", delta=delta, eps=eps, lam=lam)


def g_kernel(delta: float, eps: float, g: Callable) -> CovKernel:
    if not (0 < eps <= delta):
        raise ValueError("need 0 < eps <= delta")
    return CovKernel("g-kernel", delta=delta, eps=eps, g=g)


def increment_kernel(delta1: float, delta2: float) -> CovKernel:
    """Covariance of the scale increment between delta2 and delta1."""
    if not (delta1 > delta2 > 0):
        raise ValueError("increment kernel needs delta1 > delta2 > 0")
    return CovKernel("increment", delta=delta1, delta2=delta2)


def r_lambda(lam: float) -> float:
    """Variance defect ln(1/lam) - 1 + lam of the rescaled truncated field."""
    return -math.log(lam) - 1.0 + lam


def kernel_support(kernel: CovKernel) -> float:
    if kernel.family == "H":
        return math.inf
    if kernel.family == "U-lambda":
        return kernel.delta / kernel.lam
    return kernel.delta


def _r_triangle(s, delta, eps):
    """Covariance of the triangle field U_eps^delta."""
    out = np.zeros_like(s)
    if eps >= delta:
        return out
    mid = (s >= eps) & (s < delta)
    with np.errstate(divide="ignore"):
        out[mid] = np.log(delta / s[mid]) + s[mid] / delta - 1.0
        if eps > 0:
            near = s < eps
            out[near] = math.log(delta / eps) - (1.0 / eps - 1.0 / delta) * s[near]
        else:
            out[s == 0] = np.inf
    return out


def _h_side(d, eps, top):
    """Overlap contribution of one side for the periodic wedge."""
    t_d = _width_inverse(RegionSpec("wedge-H", eps), d)
    lo = np.maximum(eps, t_d)
    with np.errstate(invalid="ignore"):
        val = (_phi_h(top) - _phi_h(lo)) - d * (1.0 / lo - 1.0 / top)
    return np.where(lo < top, val, 0.0)


def _h_cov(s, eps, top):
    s = np.mod(s, 1.0)
    s = np.minimum(s, 1.0 - s)
    if math.isinf(top) and eps < 2.0 / math.pi:
        w_eps = np.arctan(_HALF_PI * eps) / _HALF_PI
        var = (
            math.log(1.0 / eps)
            + 0.5 * math.log(math.pi**2 * eps**2 + 4.0)
            + math.atan(_HALF_PI * eps) / (_HALF_PI * eps)
            - math.log(math.pi)
        )
        out = np.empty_like(s)
        near = s <= w_eps
        out[near] = var - s[near] / eps - np.log(np.cos(_HALF_PI * s[near]))
        far = ~near
        with np.errstate(divide="ignore"):
            out[far] = math.log(2.0) - np.log(np.sin(math.pi * s[far]))
        return out
    return _h_side(s, eps, top) + _h_side(1.0 - s, eps, top)


def eval_kernel(kernel: CovKernel, separation):
    """Evaluate the kernel at the given separation(s).

    Returns a float for scalar input, an array otherwise.
    """
    scalar = np.ndim(separation) == 0
    s = np.abs(np.atleast_1d(np.asarray(separation, dtype=float)))
    fam = kernel.family
    if fam == "U":
        out = _r_triangle(s, kernel.delta, kernel.eps)
    elif fam == "increment":
        out = _r_triangle(s, kernel.delta, kernel.delta2)
    elif fam == "g-kernel":
        out = _r_triangle(s, kernel.delta, kernel.eps)
        inside = s < kernel.delta
        gv = np.array([kernel.g(v) for v in s[inside]], dtype=float)
        out[inside] += gv
    elif fam == "omega":
        d, e = kernel.delta, kernel.eps
        out = np.zeros_like(s)
        near = s < e
        mid = (s >= e) & (s < d)
        out[near] = math.log(d / e) + 1.0 - s[near] / e
        out[mid] = np.log(d / s[mid])
    elif fam == "U-lambda":
        d, e, lam = kernel.delta, kernel.eps, kernel.lam
        out = np.zeros_like(s)
        extra = (1.0 - lam) * (1.0 - s / d)
        near = s < e
        mid = (s >= e) & (s < d / lam)
        out[near] = math.log(d / e) - (1.0 / e - 1.0 / d) * s[near] + extra[near]
        out[mid] = np.log(d / s[mid]) - 1.0 + s[mid] / d + extra[mid]
    elif fam == "H":
        out = _h_cov(s, kernel.eps, kernel.top)
    else:
        raise ValueError(f"unknown kernel family {fam!r}")
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# exact sampler


class ExactSampler:
    """Cholesky sampler for a stationary Gaussian vector on a 1-D grid.

    The factor of a banded covariance is banded with the same bandwidth,
    so compactly supported kernels on large grids are stored sparse.
    """

    def __init__(self, kernel: CovKernel, grid):
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be a strictly increasing vector")
        if kernel.family == "U-lambda" and grid[-1] - grid[0] > kernel.delta:
            raise ValueError("kernel not positive definite on this extent")
        self.kernel = kernel
        self.grid = grid
        sep = np.abs(grid[:, None] - grid[None, :])
        cov = eval_kernel(kernel, sep.ravel()).reshape(sep.shape)
        self.cov = cov
        self.factor = self._factorize(cov)

    @staticmethod
    def _factorize(cov):
        n = cov.shape[0]
        top = float(np.max(np.diag(cov))) if n else 0.0
        if top <= 0.0:
            if np.any(cov != 0):
                raise ValueError("covariance has no positive variance")
            return None
        for jitter in (0.0, 1e-12, 1e-9):
            try:
                c = scipy.linalg.cholesky(
                    cov + jitter * top * np.eye(n), lower=True, check_finite=False
                )
                break
            except np.linalg.LinAlgError:
                continue
        else:
            lam_min = float(np.linalg.eigvalsh(cov)[0])
            raise np.linalg.LinAlgError(
                f"covariance factorization failed; smallest eigenvalue {lam_min:.3e}"
            )
        c[np.abs(c) < 1e-300] = 0.0
        if n > 64 and np.count_nonzero(c) < 0.25 * n * n:
            return scipy.sparse.csr_matrix(c)
        return c

    def draw(self, rng, size: Optional[int] = None):
        """One draw (shape (n,)) or ``size`` draws (shape (size, n))."""
        rng = np.random.default_rng(rng)
        n = self.grid.size
        k = 1 if size is None else int(size)
        if self.factor is None:
            out = np.zeros((k, n))
        else:
            z = rng.standard_normal((n, k))
            out = np.asarray(self.factor @ z).T
        return out[0] if size is None else out


_SAMPLER_CACHE: dict = {}


def _sampler(kernel, grid) -> ExactSampler:
    grid = np.asarray(grid, dtype=float)
    key = (kernel, grid.tobytes())
    s = _SAMPLER_CACHE.get(key)
    if s is None:
        if len(_SAMPLER_CACHE) > 32:
            _SAMPLER_CACHE.clear()
        s = ExactSampler(kernel, grid)
        _SAMPLER_CACHE[key] = s
    return s


def sample_exact(kernel: CovKernel, grid, seed, size: Optional[int] = None):
    """Gaussian vector(s) on ``grid`` with covariance given by ``kernel``."""
    return _sampler(kernel, grid).draw(seed, size)


# ---------------------------------------------------------------------------
# white-noise mesh


@dataclass(frozen=True)
class HyperbolicMesh:
    """Cells uniform in x and geometric in y.

    With ``periodic`` set the x direction wraps with period x_hi - x_lo,
    which must then be 1 for the periodic wedge field.
    """

    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    nx: int
    ny: int
    periodic: bool = False

    def __post_init__(self):
        if not (0 < self.y_lo < self.y_hi):
            raise ValueError("need 0 < y_lo < y_hi")
        if not self.x_lo < self.x_hi or self.nx < 1 or self.ny < 1:
            raise ValueError("bad mesh extent")

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / self.nx

    @property
    def y_edges(self) -> np.ndarray:
        return self.y_lo * (self.y_hi / self.y_lo) ** (np.arange(self.ny + 1) / self.ny)

    @property
    def row_area(self) -> np.ndarray:
        """lambda-area of one cell in each row."""
        e = self.y_edges
        return self.dx * (1.0 / e[:-1] - 1.0 / e[1:])

    @property
    def cell_area(self) -> np.ndarray:
        return np.broadcast_to(self.row_area[:, None], (self.ny, self.nx))

    @property
    def x_centers(self) -> np.ndarray:
        return self.x_lo + (np.arange(self.nx) + 0.5) * self.dx


def make_mesh(x_lo, x_hi, y_lo, y_hi, dx, rows_per_octave=16, periodic=False):
    """Mesh with horizontal step close to ``dx`` and the given row density.

    The row count is rounded so that y_hi / y_lo spans a whole number of
    rows; heights y_lo * 2**(k / rows_per_octave) then fall on row edges.
    """
    nx = max(1, int(round((x_hi - x_lo) / dx)))
    ny = max(1, int(round(rows_per_octave * math.log2(y_hi / y_lo))))
    return HyperbolicMesh(x_lo, x_hi, y_lo, y_hi, nx, ny, periodic)


@dataclass
class NoiseRealization:
    mesh: HyperbolicMesh
    values: np.ndarray
    seed: object = None
    _spectra: dict = field(default_factory=dict, repr=False)

    def spectrum(self, nfft: int) -> np.ndarray:
        sp = self._spectra.get(nfft)
        if sp is None:
            sp = sfft.rfft(self.values, n=nfft, axis=1)
            self._spectra[nfft] = sp
        return sp


def sample_white_noise(mesh: HyperbolicMesh, seed) -> NoiseRealization:
    """Independent N(0, cell_area) values on every mesh cell."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((mesh.ny, mesh.nx))
    return NoiseRealization(mesh, z * np.sqrt(mesh.row_area)[:, None], seed)


def _piece_integral(region, d0, d1, lo, hi):
    """Integral over heights [lo, hi] of |[d0, d1] cap section| / y**2.

    On each piece the overlap length is const + beta * width / 2.
    """
    ok = hi > lo
    mid = np.where(ok, 0.5 * (lo + hi), 1.0)
    h = 0.5 * region_width(region, mid)
    right = d1 < h
    left = -d0 < h
    length = np.minimum(d1, h) + np.minimum(-d0, h)
    const = np.where(right, d1, 0.0) + np.where(left, -d0, 0.0)
    beta = (~right).astype(float) + (~left).astype(float)
    safe_lo = np.where(ok, lo, 1.0)
    safe_hi = np.where(ok, hi, 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        anti = _width_antiderivative(region, safe_hi) - _width_antiderivative(region, safe_lo)
        val = const * (1.0 / safe_lo - 1.0 / safe_hi) + 0.5 * beta * anti
    return np.where(ok & (length > 0), val, 0.0)


def _cell_overlap(region, d0, d1, ya, yb):
    """Exact lambda-area of ([d0, d1] x [ya, yb]) cap region (unshifted)."""
    d0 = np.asarray(d0, dtype=float)
    d1 = np.asarray(d1, dtype=float)
    lo = max(ya, region.y_min)
    hi = min(yb, region.y_max)
    if hi <= lo:
        return np.zeros_like(d0)
    br = _width_inverse(region, 2.0 * np.stack([np.abs(d0), np.abs(d1)]))
    br = np.clip(br, lo, hi)
    pts = np.sort(
        np.concatenate([np.full((1,) + d0.shape, lo), br, np.full((1,) + d0.shape, hi)]),
        axis=0,
    )
    total = np.zeros_like(d0)
    for p in range(3):
        total += _piece_integral(region, d0, d1, pts[p], pts[p + 1])
    return total


def _max_half_width(region, mesh):
    top = min(region.y_max, mesh.y_hi)
    return 0.5 * float(region_width(region, top))


def _stencil(mesh: HyperbolicMesh, region: RegionSpec, phase: float):
    """Per-row weights for a region centred at x_lo + (i + phase) * dx.

    Returns (offsets, weights) with weights of shape (ny, len(offsets)):
    the field at lattice index i is sum_j sum_m v[j, i + m] * w[j, m].
    On a periodic mesh each residue class appears once and the weight
    collects the overlap with every integer-translated copy of the region.
    """
    dx = mesh.dx
    k = int(math.ceil(_max_half_width(region, mesh) / dx)) + 2
    copies = (0,)
    if mesh.periodic:
        copies = (-2, -1, 0, 1, 2)
        if 2 * k + 1 > mesh.nx:
            offsets = np.arange(-(mesh.nx // 2), mesh.nx - mesh.nx // 2)
        else:
            offsets = np.arange(-k, k + 1)
    else:
        offsets = np.arange(-k, k + 1)
    d0 = (offsets - phase) * dx
    d1 = d0 + dx
    edges = mesh.y_edges
    w = np.zeros((mesh.ny, offsets.size))
    rows = np.nonzero((edges[1:] > region.y_min) & (edges[:-1] < region.y_max))[0]
    period = mesh.x_hi - mesh.x_lo
    for j in rows:
        ov = np.zeros(offsets.size)
        for c in copies:
            ov += _cell_overlap(region, d0 - c * period, d1 - c * period, edges[j], edges[j + 1])
        w[j] = ov / mesh.row_area[j]
    return offsets, w


_STENCIL_CACHE: dict = {}


def field_stencils(mesh: HyperbolicMesh, region: RegionSpec, phase: float):
    key = (mesh, region.shifted(0.0), round(phase, 12))
    st = _STENCIL_CACHE.get(key)
    if st is None:
        if len(_STENCIL_CACHE) > 256:
            _STENCIL_CACHE.clear()
        st = _stencil(mesh, region.shifted(0.0), phase)
        _STENCIL_CACHE[key] = st
    return st


def _check_heights(mesh, region):
    if region.y_min < mesh.y_lo * (1 - 1e-12):
        raise ValueError("region extends below the mesh")
    if region.y_max > mesh.y_hi * (1 + 1e-12):
        raise ValueError("region extends above the mesh")


def _lattice(mesh, shifts):
    """Split shifts into integer lattice index and common phase if possible."""
    pos = (np.asarray(shifts, dtype=float) - mesh.x_lo) / mesh.dx
    base = np.floor(pos + 1e-9)
    frac = pos - base
    frac = np.where(frac < 1e-9, 0.0, frac)
    if frac.size and np.ptp(frac) < 1e-9:
        return base.astype(np.int64), float(frac[0])
    return None, None


def _check_extent(mesh, region, shifts, offsets, idx):
    if mesh.periodic:
        return
    half = _max_half_width(region, mesh)
    s = np.asarray(shifts, dtype=float)
    tol = 1e-9 * (mesh.x_hi - mesh.x_lo)
    if s.size and (s.min() - half < mesh.x_lo - tol or s.max() + half > mesh.x_hi + tol):
        raise ValueError("shifted region escapes the mesh")


def _row_products(noise, region, idx, phase):
    """Per-row correlation spectra (ny, nfreq) and fft length."""
    mesh = noise.mesh
    offsets, w = field_stencils(mesh, region, phase)
    if mesh.periodic:
        nfft = mesh.nx
    else:
        nfft = sfft.next_fast_len(mesh.nx + offsets[-1] + 1, real=True)
    key = ("kfft", mesh, region.shifted(0.0), round(phase, 12), nfft)
    kf = _STENCIL_CACHE.get(key)
    if kf is None:
        circ = np.zeros((mesh.ny, nfft))
        np.add.at(circ.T, np.mod(-offsets, nfft), w.T)
        kf = sfft.rfft(circ, axis=1)
        _STENCIL_CACHE[key] = kf
    return noise.spectrum(nfft) * kf, nfft


def _direct(noise, region, shifts):
    mesh = noise.mesh
    out = np.empty(len(shifts))
    for n, s in enumerate(shifts):
        pos = (s - mesh.x_lo) / mesh.dx
        i0 = int(math.floor(pos))
        offsets, w = field_stencils(mesh, region, pos - i0)
        cols = i0 + offsets
        if mesh.periodic:
            cols = np.mod(cols, mesh.nx)
        else:
            keep = (cols >= 0) & (cols < mesh.nx)
            cols, w = cols[keep], w[:, keep]
        out[n] = np.sum(noise.values[:, cols] * w)
    return out


def field_from_noise(noise: NoiseRealization, region: RegionSpec, shifts):
    """W(region + shift) for each shift, using cell area fractions."""
    mesh = noise.mesh
    shifts = np.atleast_1d(np.asarray(shifts, dtype=float))
    if region.y_max <= region.y_min:
        return np.zeros(shifts.size)
    _check_heights(mesh, region)
    _check_extent(mesh, region, shifts, None, None)
    idx, phase = _lattice(mesh, shifts)
    if idx is None or shifts.size < 8:
        return _direct(noise, region, shifts)
    prod, nfft = _row_products(noise, region, idx, phase)
    full = sfft.irfft(prod.sum(axis=0), n=nfft)
    return full[np.mod(idx, nfft)]


def nested_fields(noise: NoiseRealization, lower: float, uppers, shifts):
    """Triangle fields U_lower^upper for several uppers on one realization.

    All uppers must lie on row edges; the row correlations are then computed
    once and accumulated.  Returns shape (len(uppers), len(shifts)).
    """
    mesh = noise.mesh
    uppers = np.asarray(uppers, dtype=float)
    shifts = np.atleast_1d(np.asarray(shifts, dtype=float))
    big = RegionSpec("triangle-U", lower, float(uppers.max()))
    _check_heights(mesh, big)
    _check_extent(mesh, big, shifts, None, None)
    edges = mesh.y_edges
    rows_below = np.searchsorted(edges, uppers * (1 + 1e-12), side="right") - 1
    aligned = np.all(np.abs(edges[rows_below] - uppers) <= 1e-10 * uppers)
    idx, phase = _lattice(mesh, shifts)
    if not aligned or idx is None:
        return np.stack(
            [field_from_noise(noise, RegionSpec("triangle-U", lower, u), shifts) for u in uppers]
        )
    prod, nfft = _row_products(noise, big, idx, phase)
    csum = np.cumsum(prod, axis=0)
    out = np.empty((uppers.size, shifts.size))
    cols = np.mod(idx, nfft)
    for n, r in enumerate(rows_below):
        if r <= 0 or uppers[n] <= lower:
            out[n] = 0.0
            continue
        out[n] = sfft.irfft(csum[r - 1], n=nfft)[cols]
    return out


def mesh_covariance(mesh: HyperbolicMesh, region_a: RegionSpec, region_b: RegionSpec,
                    shift_a: float, shift_b: float) -> float:
    """Exact covariance of two mesh fields, sum of area * weight * weight."""
    def weights(region, s):
        pos = (s - mesh.x_lo) / mesh.dx
        i0 = int(math.floor(pos + 1e-9))
        offsets, w = field_stencils(mesh, region.shifted(0.0), max(pos - i0, 0.0))
        return i0 + offsets, w

    ca, wa = weights(region_a, shift_a)
    cb, wb = weights(region_b, shift_b)
    if mesh.periodic:
        ca, cb = np.mod(ca, mesh.nx), np.mod(cb, mesh.nx)
        fa = np.zeros((mesh.ny, mesh.nx))
        fb = np.zeros((mesh.ny, mesh.nx))
        np.add.at(fa.T, ca, wa.T)
        np.add.at(fb.T, cb, wb.T)
        return float(np.sum(mesh.row_area[:, None] * fa * fb))
    lo = min(ca[0], cb[0])
    hi = max(ca[-1], cb[-1])
    fa = np.zeros((mesh.ny, hi - lo + 1))
    fb = np.zeros_like(fa)
    fa[:, ca - lo] = wa
    fb[:, cb - lo] = wb
    return float(np.sum(mesh.row_area[:, None] * fa * fb))


def mesh_variance(mesh: HyperbolicMesh, region: RegionSpec, phase: float = 0.0) -> float:
    """Variance of a mesh field at an interior point of the given phase."""
    _, w = field_stencils(mesh, region.shifted(0.0), phase)
    if mesh.periodic:
        return mesh_covariance(mesh, region, region, mesh.x_lo + phase * mesh.dx,
                               mesh.x_lo + phase * mesh.dx)
    return float(np.sum(mesh.row_area[:, None] * w * w))
