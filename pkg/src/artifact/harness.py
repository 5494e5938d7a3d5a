"""Monte Carlo plumbing: seeds, replicate runner, summaries and two-sample tests."""

from __future__ import annotations

import csv
import io
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import stats

__all__ = [
    "ExperimentConfig",
    "McSummary",
    "Aggregate",
    "derive_seed",
    "derive_rng",
    "seed_fingerprint",
    "summarize",
    "jackknife",
    "run",
    "ks_two_sample",
    "energy_test",
    "correlation_test",
]

Z99 = stats.norm.ppf(0.995)


def derive_seed(master: int, exp_id: str, index: int) -> np.random.SeedSequence:
    """Counter-based stream for replicate ``index`` of experiment ``exp_id``.

    The stream depends only on the triple, never on execution order.
    """
    tag = zlib.crc32(str(exp_id).encode())
    return np.random.SeedSequence(entropy=int(master), spawn_key=(tag, int(index)))


def derive_rng(master: int, exp_id: str, index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, exp_id, index))


def seed_fingerprint(master: int, exp_id: str, index: int) -> int:
    """64-bit digest of the derived stream state (used for collision checks)."""
    w = derive_seed(master, exp_id, index).generate_state(2, dtype=np.uint32)
    return (int(w[0]) << 32) | int(w[1])


@dataclass
class ExperimentConfig:
    seed: int
    reps: int
    resolution: int = 1024
    gamma: float = 0.5
    delta: float = 1.0
    params: dict = field(default_factory=dict)
    csv_path: Optional[str] = None
    summary_path: Optional[str] = None

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        r = self.resolution
        if r < 64 or r > 4096 or r & (r - 1):
            raise ValueError("resolution must be a power of two in [2**6, 2**12]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class McSummary:
    n: int
    mean: float
    stderr: float
    ci: tuple
    min: float
    max: float
    statistic: Optional[float] = None
    pvalue: Optional[float] = None
    failed: int = 0

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["ci"] = list(self.ci)
        return d


@dataclass
class Aggregate:
    """Mergeable running moments (count, mean, centred sum of squares)."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    lo: float = math.inf
    hi: float = -math.inf

    @classmethod
    def of(cls, values) -> "Aggregate":
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            return cls()
        mu = float(v.mean())
        return cls(v.size, mu, float(np.sum((v - mu) ** 2)), float(v.min()), float(v.max()))

    def merge(self, other: "Aggregate") -> "Aggregate":
        if self.n == 0:
            return other
        if other.n == 0:
            return self
        n = self.n + other.n
        d = other.mean - self.mean
        mean = self.mean + d * other.n / n
        m2 = self.m2 + other.m2 + d * d * self.n * other.n / n
        return Aggregate(n, mean, m2, min(self.lo, other.lo), max(self.hi, other.hi))

    def summary(self) -> McSummary:
        if self.n == 0:
            raise ValueError("empty aggregate")
        var = self.m2 / (self.n - 1) if self.n > 1 else 0.0
        se = math.sqrt(max(var, 0.0) / self.n)
        return McSummary(self.n, self.mean, se, (self.mean - Z99 * se, self.mean + Z99 * se),
                         self.lo, self.hi)


def summarize(values) -> McSummary:
    return Aggregate.of(values).summary()


def jackknife(values, stat: Callable = np.mean):
    """Leave-one-out jackknife estimate and standard error of ``stat``.

    For the sample mean the closed form is used (it equals std / sqrt(n)).
    """
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 2:
        raise ValueError("jackknife needs at least two values")
    if stat is np.mean:
        return float(v.mean()), float(v.std(ddof=1) / math.sqrt(n))
    full = stat(v)
    loo = np.array([stat(np.delete(v, i)) for i in range(n)])
    se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return float(full), float(se)


def run(config: ExperimentConfig, kernel: Callable, exp_id: str = "exp",
        workers: int = 1):
    """Run ``config.reps`` replicates of ``kernel(rng, config)``.

    Returns (summary, values).  Failed replicates are recorded as NaN; more
    than 1% failures aborts the run.  With ``csv_path`` set, a per-replicate
    CSV is written whose bytes depend only on the config.
    """
    def one(i):
        rng = derive_rng(config.seed, exp_id, i)
        try:
            return float(kernel(rng, config))
        except Exception:  # a failing replicate is recorded, not fatal
            return math.nan

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            values = np.array(list(ex.map(one, range(config.reps))))
    else:
        values = np.array([one(i) for i in range(config.reps)])
    bad = int(np.isnan(values).sum())
    if bad > 0.01 * config.reps:
        raise RuntimeError(f"{bad} of {config.reps} replicates failed")
    summ = summarize(values[~np.isnan(values)])
    summ.failed = bad
    if config.csv_path:
        with open(config.csv_path, "w", newline="") as fh:
            fh.write(replicate_csv(values))
    if config.summary_path:
        import json
        with open(config.summary_path, "w") as fh:
            json.dump(summ.as_dict(), fh, indent=2, sort_keys=True)
    return summ, values


def replicate_csv(values) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replicate", "value"])
    for i, v in enumerate(values):
        w.writerow([i, repr(float(v))])
    return buf.getvalue()


def ks_two_sample(a, b):
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size < 50 or b.size < 50:
        raise ValueError("ks_two_sample needs at least 50 values per sample")
    res = stats.ks_2samp(a, b, method="asymp")
    return float(res.statistic), float(res.pvalue)


def _pair_dist_chunks(z, chunk=1024):
    sq = np.einsum("ij,ij->i", z, z)
    for s in range(0, z.shape[0], chunk):
        blk = z[s:s + chunk]
        d2 = sq[s:s + chunk, None] + sq[None, :] - 2.0 * blk @ z.T
        yield s, np.sqrt(np.maximum(d2, 0.0))


def energy_test(a, b, n_perm: int = 199, seed=0):
    """Energy-distance two-sample test with a permutation p-value.

    Works on the full pooled sample: distances are streamed in row blocks
    and all permutations are evaluated in one pass as quadratic forms.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    z = np.vstack([a, b])
    na, nb = a.shape[0], b.shape[0]
    n = na + nb
    rng = np.random.default_rng(seed)
    labels = np.zeros((n, n_perm + 1))
    labels[:na, 0] = 1.0
    for p in range(1, n_perm + 1):
        labels[rng.permutation(n)[:na], p] = 1.0
    # for each labelling: S_aa = l' D l, S_bb = (1-l)' D (1-l), S_ab = l' D (1-l)
    dl = np.zeros((n, n_perm + 1))
    d1 = np.zeros(n)
    for s, dist in _pair_dist_chunks(z):
        dl[s:s + dist.shape[0]] = dist @ labels
        d1[s:s + dist.shape[0]] = dist.sum(axis=1)
    total = d1.sum()
    s_aa = np.einsum("ip,ip->p", labels, dl)
    s_ab = labels.T @ d1 - s_aa
    s_bb = total - 2.0 * s_ab - s_aa
    e = 2.0 * s_ab / (na * nb) - s_aa / na**2 - s_bb / nb**2
    stat = float(e[0])
    p = float((1 + np.sum(e[1:] >= stat)) / (n_perm + 1))
    return stat, p


def correlation_test(x, y, n_perm: int = 0, seed=0):
    """Pearson correlation with normal-approximation or permutation p-value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = float(np.corrcoef(x, y)[0, 1])
    if n_perm <= 0:
        z = r * math.sqrt(x.size)
        return r, float(2 * stats.norm.sf(abs(z)))
    rng = np.random.default_rng(seed)
    hits = sum(abs(np.corrcoef(x, rng.permutation(y))[0, 1]) >= abs(r) for _ in range(n_perm))
    return r, (1 + hits) / (n_perm + 1)
