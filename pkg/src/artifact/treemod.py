"""Dyadic-tree modulus bound and a Galton-Watson simulator for its inputs."""

from __future__ import annotations

import csv
import os
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "TreeSpec",
    "GwProcess",
    "GwEstimate",
    "modulus_lower_bound",
    "proof_weights",
    "weights_and_area",
    "min_rho_length",
    "c_finite",
    "extinction_probability",
    "survival_to_depth",
    "gw_estimate",
    "parse_tree_spec",
    "load_tree_spec",
]


@dataclass
class TreeSpec:
    """Per-scale caps K_i, survivor counts S_i and full-descent fractions c_i.

    Index 0 of each array is scale i = 1.
    """

    N: int
    K: np.ndarray
    S: np.ndarray
    c_inf: np.ndarray
    tail_truncated: bool = True

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=float)
        self.S = np.asarray(self.S, dtype=float)
        self.c_inf = np.asarray(self.c_inf, dtype=float)
        if self.N < 1:
            raise ValueError("N must be a positive integer")
        if not self.K.size == self.S.size == self.c_inf.size:
            raise ValueError("K, S and c_inf must have one entry per scale")
        if np.any(self.K <= 0):
            raise ValueError("K_i must be positive")
        if np.any(self.S < 1) or np.any(self.S != np.round(self.S)):
            raise ValueError("S_i must be positive integers")
        i = np.arange(1, self.S.size + 1)
        if np.any(self.S > 2.0 ** (self.N * i)):
            raise ValueError("S_i 2^{-Ni} <= 1 violated")
        prev = np.concatenate([[1.0], self.S[:-1]])
        if np.any(self.S > 2**self.N * prev):
            raise ValueError("S_i <= 2^N S_{i-1} violated")
        if np.any(self.c_inf <= 0) or np.any(self.c_inf > 1):
            raise ValueError("c_inf must lie in (0, 1]")

    @property
    def i_max(self) -> int:
        return self.S.size


def modulus_lower_bound(spec: TreeSpec) -> float:
    """c with c^{-1} = sum_i K_i / (S_i c_i), over the scales given."""
    with np.errstate(over="raise"):
        try:
            terms = spec.K / (spec.S * spec.c_inf)
            total = math.fsum(terms.tolist())
        except FloatingPointError:
            raise ValueError("partial sum overflow") from None
    if not math.isfinite(total):
        raise ValueError("partial sum overflow")
    return 1.0 / total


def proof_weights(spec: TreeSpec) -> np.ndarray:
    """B_i = 2^{Ni} / (S_i c_i)."""
    i = np.arange(1, spec.i_max + 1)
    return 2.0 ** (spec.N * i) / (spec.S * spec.c_inf)


def weights_and_area(spec: TreeSpec, B: Optional[Sequence[float]] = None):
    """(B, sum_i 2^{-N(2i-1)} B_i^2 K_i S_i) for the proof's or a custom B."""
    B = proof_weights(spec) if B is None else np.asarray(B, dtype=float)
    if B.size != spec.i_max:
        raise ValueError("one weight per scale required")
    i = np.arange(1, spec.i_max + 1)
    area = math.fsum((2.0 ** (-spec.N * (2 * i - 1)) * B**2 * spec.K * spec.S).tolist())
    return B, area


def c_finite(spec: TreeSpec, i: int, M: int) -> float:
    """c_{i,M} = S_{i+M} / (2^{NM} S_i), the fraction of columns reaching depth M."""
    if i < 1 or i + M > spec.i_max:
        raise ValueError("scale range outside the tree")
    return spec.S[i + M - 1] / (2.0 ** (spec.N * M) * spec.S[i - 1])


def min_rho_length(spec: TreeSpec, i: int, M: int, B: Optional[Sequence[float]] = None,
                   columns: Optional[Sequence[int]] = None) -> float:
    """Cheapest rho-length of a curve crossing the columns below scale i.

    Each column is a chain of width 2^{-N(i+M)}; a full-depth column may be
    crossed at any scale i + m with m in [0, M] at cost 2^{-N(i+M)} B_{i+m},
    a truncated column is bypassed for free.  ``columns`` gives each
    column's reached depth; by default the S_{i+M} surviving columns are
    all full depth.  The objective is separable, so each column is
    minimized on its own.
    """
    B = proof_weights(spec) if B is None else np.asarray(B, dtype=float)
    if i < 1 or i + M > spec.i_max:
        raise ValueError("scale range outside the tree")
    if columns is None:
        columns = np.full(int(spec.S[i + M - 1]), M)
    columns = np.asarray(columns, dtype=int)
    best = float(np.min(B[i - 1:i + M]))
    full = int(np.sum(columns >= M))
    return 2.0 ** (-spec.N * (i + M)) * full * best


def parse_tree_spec(text: str, base_dir: str = ".") -> TreeSpec:
    """Build a TreeSpec from ``key = value`` lines and a per-scale CSV table.

    The table (columns i, K_i, S_i, c_i) is either inline, one row per
    line after a header starting with ``i,``, or referenced by
    ``table = <path>`` relative to ``base_dir``.
    """


    keys = {}
    rows = []
    in_table = False
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line and not in_table:
            k, v = (t.strip() for t in line.split("=", 1))
            keys[k] = v
            continue
        if line.replace(" ", "").lower().startswith("i,"):
            in_table = True
            continue
        rows.append(line)
    if "table" in keys:
        with open(os.path.join(base_dir, keys["table"]), newline="") as fh:
            lines = [r for r in fh.read().splitlines() if r.strip() and not r.startswith("#")]
        if lines and lines[0].replace(" ", "").lower().startswith("i,"):
            lines = lines[1:]
        rows.extend(lines)
    if "N" not in keys:
        raise ValueError("tree spec needs N = <int>")
    table = sorted((int(r[0]), float(r[1]), float(r[2]), float(r[3]))
                   for r in csv.reader(io.StringIO("\n".join(rows))) if r)
    if not table:
        raise ValueError("tree spec has no per-scale rows")
    idx = [t[0] for t in table]
    if idx != list(range(1, len(idx) + 1)):
        raise ValueError("per-scale rows must cover i = 1..i_max")
    if "i_max" in keys and int(keys["i_max"]) != len(idx):
        raise ValueError("i_max disagrees with the table length")
    tail = keys.get("tail_truncated", "true").lower() in ("1", "true", "yes")
    return TreeSpec(int(keys["N"]), [t[1] for t in table], [t[2] for t in table],
                    [t[3] for t in table], tail)


def load_tree_spec(path: str) -> TreeSpec:


    with open(path) as fh:
        return parse_tree_spec(fh.read(), os.path.dirname(os.path.abspath(path)))


# ---------------------------------------------------------------------------
# Galton-Watson


@dataclass
class GwProcess:
    """Offspring law on {0, ..., 2^N}."""

    probs: np.ndarray
    N: int = 1
    roots: int = 1

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.size > 2**self.N + 1:
            raise ValueError("offspring support exceeds 2^N")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1) > 1e-12:
            raise ValueError("offspring law must be a probability vector")
        self.probs = self.probs / self.probs.sum()

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(self.probs.size), self.probs))

    def pgf(self, s):
        return np.polynomial.polynomial.polyval(s, self.probs)


def extinction_probability(proc: GwProcess) -> float:
    """Smallest root of q = G(q) in [0, 1]."""
    if proc.probs[0] == 0:
        return 0.0
    if proc.mean <= 1:
        return 1.0
    coef = proc.probs.copy()
    coef[1] -= 1.0
    roots = np.roots(coef[::-1])
    real = [r.real for r in roots if abs(r.imag) < 1e-12 and -1e-12 <= r.real < 1 - 1e-9]
    return float(min(max(r, 0.0) for r in real))


def survival_to_depth(proc: GwProcess, depth: int) -> float:
    """P(a single-root tree has descendants at generation ``depth``) = 1 - G^depth(0)."""
    s = 0.0
    for _ in range(depth):
        s = float(proc.pgf(s))
    return 1.0 - s


@dataclass
class GwEstimate:
    S_mean: np.ndarray
    S_se: np.ndarray
    c_inf: float
    c_se: float
    c_exact: float
    extinction: float
    depth: int
    level: int
    n_tracked: int


def _children(proc, z, rng):
    if z == 0:
        return 0
    counts = rng.multinomial(z, proc.probs)
    return int(np.dot(np.arange(proc.probs.size), counts))


def gw_estimate(proc: GwProcess, depth: int, reps: int, seed=0, level: int = 1,
                cap: int = 10**5) -> GwEstimate:
    """Mean generation sizes and the fraction of generation-``level`` nodes
    whose own subtree reaches ``depth``.

    A subtree whose population exceeds ``cap`` is counted as surviving; the
    probability of a later extinction is below q**cap.  The exact
    finite-depth survival 1 - G^{depth-level}(0) is returned alongside.
    """
    if not 0 <= level < depth:
        raise ValueError("need 0 <= level < depth")
    rng = np.random.default_rng(seed)
    sizes = np.zeros((reps, depth + 1))
    hits = tracked = 0
    for r in range(reps):
        z = proc.roots
        sizes[r, 0] = z
        for g in range(1, depth + 1):
            z = _children(proc, z, rng) if z < cap else int(z * proc.mean)
            sizes[r, g] = z
        n_level = int(sizes[r, level])
        for _ in range(min(n_level, 64)):
            tracked += 1
            w = 1
            for _g in range(depth - level):
                w = _children(proc, w, rng)
                if w == 0 or w >= cap:
                    break
            hits += w > 0
    c = hits / tracked if tracked else math.nan
    c_se = math.sqrt(max(c * (1 - c), 0.0) / tracked) if tracked else math.nan
    return GwEstimate(sizes.mean(axis=0), sizes.std(axis=0, ddof=1) / math.sqrt(reps), c, c_se,
                      survival_to_depth(proc, depth - level), extinction_probability(proc),
                      depth, level, tracked)
