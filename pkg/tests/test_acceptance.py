"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are collected and repeated in the terminal summary.  Running this
file directly (``python3 tests/test_acceptance.py``) prints them as well.
"""

import math
import sys
import time
import warnings

import numpy as np
import pytest

import oracles
from artifact import constraints, gmc, harness, inverse, lehto, noise, treemod, welding

RESULTS = []


def report(n, ok, detail, elapsed, budget):
    ok = bool(ok) and elapsed < budget
    line = (f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail} "
            f"[{elapsed:.1f}s / budget {budget:.0f}s]")
    RESULTS.append(line)
    print(line)
    return ok


class timed:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


# ---------------------------------------------------------------------------
# 1. kernels


def _kernel_cases():
    lam, d, e = 0.5, 1.0, 0.05
    g = lambda s: 0.3 * (1 - s / d) ** 2
    rl = noise.r_lambda(lam)
    RS = noise.RegionSpec
    return [
        ("U", noise.u_kernel(d, e), lambda s: oracles.triangle_cov(d, e, s),
         noise.lambda_area(RS("triangle-U", e, d)), d),
        ("H", noise.h_kernel(e, 2.0), lambda s: oracles.wedge_cov(e, s, 2.0),
         noise.lambda_area(RS("wedge-H", e, top=2.0)), 0.5),
        ("H-inf", noise.h_kernel(e), lambda s: oracles.wedge_cov(e, s),
         noise.lambda_area(RS("wedge-H", e)), 0.5),
        ("omega", noise.omega_kernel(d, e), lambda s: oracles.cone_cov(d, e, s),
         noise.lambda_area(RS("infinite-cone-A", e, d)), d),
        ("U-lambda", noise.u_lambda_kernel(d, e, lam),
         lambda s: oracles.triangle_cov(d, lam * e, lam * s) - rl,
         noise.lambda_area(RS("triangle-U", lam * e, d)) - rl, d / lam),
        ("increment", noise.increment_kernel(d, 0.25), lambda s: oracles.triangle_cov(d, 0.25, s),
         noise.lambda_area(RS("strip-increment", 0.25, d)), d),
        ("g-kernel", noise.g_kernel(d, e, g), lambda s: oracles.triangle_cov(d, e, s) + g(s),
         noise.lambda_area(RS("triangle-U", e, d)) + g(0.0), d),
    ]


def criterion_1():
    with timed() as t:
        worst = 0.0
        for name, kern, oracle, area, support in _kernel_cases():
            worst = max(worst, abs(noise.eval_kernel(kern, 0.0) - area))
            seps = np.linspace(0.0, support, 21)[1:] * (1 - 1e-9)
            for s in seps:
                worst = max(worst, abs(noise.eval_kernel(kern, s) - oracle(s)))
    return report(1, worst < 1e-6, f"max kernel error {worst:.2e} over 7 families (tol 1e-6)",
                  t.elapsed, 1)


# ---------------------------------------------------------------------------
# 2. exact sampler vs white-noise mesh


def criterion_2():
    with timed() as t:
        eps, delta = 1 / 16, 0.5
        pts = (np.arange(16) + 0.5) / 32
        exact = noise.sample_exact(noise.u_kernel(delta, eps), pts, 1, size=10000)
        mesh = noise.make_mesh(-0.5, 1.0, eps, delta, 1 / 256, rows_per_octave=16)
        region = noise.RegionSpec("triangle-U", eps, delta)
        rng = np.random.default_rng(2)
        meshed = np.array([noise.field_from_noise(noise.sample_white_noise(mesh, rng), region, pts)
                           for _ in range(10000)])
        _, p = harness.energy_test(exact, meshed, 199, seed=3)
    return report(2, p > 0.01, f"energy test p = {p:.3f} (reject if <= 0.01)", t.elapsed, 120)


# ---------------------------------------------------------------------------
# 3-5. chaos measure


def criterion_3():
    ts = [2.0**-j for j in range(6, -1, -1)]
    with timed() as t:
        _, s2 = gmc.moment_mc(0.5, 1.0, 2, ts, 10000, 1)
        _, sm = gmc.moment_mc(0.5, 1.0, -1, ts, 10000, 1)
    z2, zm = gmc.zeta(0.5, 2), gmc.zeta(0.5, -1)
    ok = abs(s2 - z2) <= 0.1 and abs(sm - zm) <= 0.15
    return report(3, ok, f"slope q=2 {s2:.3f} vs {z2:.3f}, q=-1 {sm:.3f} vs {zm:.3f}",
                  t.elapsed, 300)


def criterion_4():
    with timed() as t:
        left, right = gmc.scaling_law_pair(0.4, 1.0, 0.5, (0, 0.5), 10000, 3)
        _, p = harness.ks_two_sample(left, right)
    return report(4, p > 0.01, f"KS p = {p:.3f}", t.elapsed, 180)


def criterion_5():
    rows, ok = [], True
    with timed() as t:
        for g in (0.3, 0.5):
            for x in (1.0, 0.05):
                est, se, bound, _ = gmc.l2_check(g, 0.1, x, 10000, 5)
                ok &= est <= bound + 3 * se
                rows.append(f"({g},{x}) {est:.3g}<={bound:.3g}")
    return report(5, ok, "L2 estimate vs bound " + ", ".join(rows), t.elapsed, 120)


# ---------------------------------------------------------------------------
# 6-8. inverse


def criterion_6():
    with timed() as t:
        h = 1 / 1024
        kern = noise.u_kernel(0.1, h)
        x = noise.sample_exact(kern, gmc.cell_grid(0, 1, h), 6)
        m = gmc.build_measure(x, h, 0.5, kern.variance)
        inv = inverse.InverseMap(m)
        hom = inverse.circle_homeomorphism(m)
        rng = np.random.default_rng(60)
        worst = 0.0
        for _ in range(1000):
            tt, u, v, y = rng.uniform(0, 1, 4)
            worst = max(worst, abs(inverse.q_of(inv, m.cdf(tt)) - tt))
            xv = u * m.total
            worst = max(worst, abs(m.cdf(inverse.q_of(inv, xv)) - xv))
            lo, hi = sorted((u * m.total, v * m.total))
            worst = max(worst, abs(inverse.q_increment(inv, lo, hi)
                                   - inverse.q_bullet(m, hi - lo, inverse.q_of(inv, lo))))
            z = 10 * y - 5
            worst = max(worst, abs(inverse.homeomorphism_eval(hom, z + 1)
                                   - inverse.homeomorphism_eval(hom, z) - 1))
    return report(6, worst < 1e-12, f"max identity defect {worst:.1e} on 1000 points",
                  t.elapsed, 10)


def criterion_7():
    rows, ok = [], True
    with timed() as t:
        for g in (0.3, 0.6):
            for d in (0.05, 0.1):
                r = inverse.smp_test(g, d, 0.3, 2 * d, 0.2, 10000, 1)
                lim = 3 / math.sqrt(r.n)
                ok &= (not r.degenerate) and abs(r.pearson) < lim
                rows.append(f"({g},{d}) {r.pearson:+.4f}")
    return report(7, ok, f"|corr| < 3/sqrt(n): " + ", ".join(rows), t.elapsed, 240)


def criterion_8():
    with timed() as t:
        est, se, lo = inverse.mean_shift_mc(0.4, 0.1, 0.5, 100000, 2)
    return report(8, lo > 0, f"E[Q(a)]-a = {est:.4g}, 99% lower bound {lo:.4g}", t.elapsed, 300)


# ---------------------------------------------------------------------------
# 9-11. extension and Lehto integrals


def criterion_9():
    with timed() as t:
        n = 1024
        ident = inverse.circle_homeomorphism(gmc.build_measure(np.zeros(n), 1 / n, 0.0, 0.0))
        rng = np.random.default_rng(9)
        xs, ys = rng.uniform(-2, 2, 200), rng.uniform(1e-3, 0.999, 200)
        f = welding.ab_extension(ident, xs, ys)
        err_f = float(np.max(np.abs(f - (xs + 0.5j * ys))))
        k_low = max(abs(welding.dilatation_numeric(ident, complex(x, y)) - 2)
                    for x, y in zip(xs[:20], ys[:20] * 0.9 + 0.05))
        step = 1e-6
        k_high = max(abs(welding.dilatation_numeric(ident, complex(x, 2 + y), step) - 1)
                     for x, y in zip(xs[:20], ys[:20]))
    ok = err_f < 1e-9 and k_low < 1e-3 and k_high < 10 * step
    return report(9, ok, f"|F - (x+iy/2)| {err_f:.1e}, |K-2| {k_low:.1e}, |K-1| above y=2 "
                  f"{k_high:.1e}", t.elapsed, 5)


def criterion_10():
    with timed() as t:
        rng = np.random.default_rng(10)
        worst = 0.0
        for _ in range(100):
            x = rng.uniform(-1, 2)
            r = 10 ** rng.uniform(-4, -0.5)
            R = r * 10 ** rng.uniform(0.01, 2)
            ref = math.log(R / r) / (2 * math.pi)
            depth = int(rng.integers(0, 8))
            worst = max(worst, abs(lehto.CubeField.constant(1.0, depth).lehto(x, r, R) - ref),
                        abs(lehto.lehto_integral(1.0, x, r, R) - ref))
    return report(10, worst < 1e-9, f"max error {worst:.1e} on 100 annuli", t.elapsed, 5)


def criterion_11():
    p = lehto.AnnulusParams(1.0, 0.6, 0.1)
    bad = 0
    with timed() as t:
        for k in range(100):
            rng = np.random.default_rng(11000 + k)
            st = lehto.build_stack(p, range(1, 7), 0.5, 12, rng)
            M = {n: lehto.scaling_factor(st.tau, st.etas[n], p, n) for n in st.etas}
            A = lehto.choose_disjoint_levels(M, p)
            lb = lehto.lehto_lower_bound(st, p, A, M)
            bad += not (lb.total <= lb.lehto)
    return report(11, bad == 0, f"sum sigma_n m_n <= Lehto integral in {100 - bad}/100",
                  t.elapsed, 600)


# ---------------------------------------------------------------------------
# 12. gap graph


def criterion_12():
    p = lehto.AnnulusParams(1.0, 0.6, 0.1)
    graphs = []
    with timed() as t:
        for i, N in enumerate(range(2, 13)):
            graphs += lehto.gap_alpha_mc(p, N, 5, 1200 + i, keep_graphs=True).graphs
        rng = np.random.default_rng(12)
        while len(graphs) < 100:
            n = int(rng.integers(1, 13))
            lo = rng.uniform(0, 1, n)
            graphs.append(lehto.GapGraph(lo, lo + rng.uniform(0, 0.4, n)))
        agree = sum(lehto.alpha_greedy(g) == lehto.alpha_bruteforce(g) for g in graphs)
    return report(12, agree == len(graphs),
                  f"greedy = exhaustive on {agree}/{len(graphs)} graphs (55 sampled, N <= 12)",
                  t.elapsed, 60)


# ---------------------------------------------------------------------------
# 13. constraint thresholds


QUOTED = {
    "constraint-2-only-p1-2": 0.32594,
    "lambda0-0.01-forcing": 0.00826446,
    "full-lambda0-0.01": 0.00596838,
    "full-cidb-small": 0.042477,
}


def criterion_13():
    rows, ok = [], True
    with timed() as t:
        for name, quoted in QUOTED.items():
            beta, _ = constraints.max_beta(name)
            rel = abs(beta - quoted) / quoted
            ok &= rel <= 1e-3
            rows.append(f"{name} {beta:.6g} (rel {rel:.1e})")
    return report(13, ok, "; ".join(rows), t.elapsed, 120)


# ---------------------------------------------------------------------------
# 14. center pairing


def _walk(rng, R):
    v = [0.0]
    while v[-1] < 1:
        v.append(v[-1] + rng.uniform(0.2, 1.0) * R)
    v[-1] = 1.0
    if v[-1] - v[-2] < 1e-9:
        v.pop(-2)
    return v


def criterion_14():
    rng = np.random.default_rng(14)
    good = 0
    notes = []
    with timed() as t:
        for _ in range(1000):
            R = rng.uniform(0.02, 0.2)
            pr = lehto.pair_centers(_walk(rng, R), _walk(rng, R), R)
            good += all(lehto.pairing_invariants(pr).values())
        X = np.round(np.arange(11) / 10, 10)
        Y = [0, .05, .09, .19, .29, .39, .49, .59, .69, .79, .89, .99, 1.0]
        adv = lehto.pairing_invariants(lehto.pair_centers(X, Y, 0.12))
        hand = lehto.pairing_invariants(
            lehto.pair_centers([0, .3, .6, 1], [0, .25, .55, .95], 0.12, check_gaps=False))
        for label, inv in (("hand", hand), ("adversarial", adv)):
            broken = [k for k, v in inv.items() if not v]
            notes.append(f"{label} {'ok' if not broken else 'violates ' + ','.join(broken)}")
    ok = good == 1000 and all(hand.values()) and all(adv.values())
    return report(14, ok, f"random {good}/1000; " + "; ".join(notes), t.elapsed, 5)


# ---------------------------------------------------------------------------
# 15. tree modulus


LAWS = [
    (treemod.GwProcess([0, 0, 1]), 12),
    (treemod.GwProcess([0.5, 0, 0.5]), 12),
    (treemod.GwProcess([0.1, 0, 0.9]), 20),
    (treemod.GwProcess([0.2] * 5, N=2), 12),
    (treemod.GwProcess([0.25] * 4, N=2), 12),
]


def _random_spec(rng):
    N = int(rng.integers(1, 4))
    n = int(rng.integers(1, 13))
    S = [1]
    for _ in range(n):
        S.append(int(rng.integers(1, S[-1] * 2**N + 1)) if S[-1] * 2**N < 2**62 else S[-1])
    S = S[1:]
    K = rng.uniform(1, 50, n)
    c = [S[-1] / (2.0 ** (N * (n - i)) * S[i - 1]) * rng.uniform(0.05, 1) for i in range(1, n + 1)]
    return treemod.TreeSpec(N, K, S, c)


def criterion_15():
    rng = np.random.default_rng(15)
    worst_sum, admissible, rows, ok_gw = 0.0, 0, [], True
    with timed() as t:
        for _ in range(1000):
            spec = _random_spec(rng)
            c = treemod.modulus_lower_bound(spec)
            ref = math.fsum((spec.K / (spec.S * spec.c_inf)).tolist())
            worst_sum = max(worst_sum, abs(1 / c - ref) / ref)
            admissible += all(treemod.min_rho_length(spec, i, spec.i_max - i) >= 1 - 1e-12
                              for i in range(1, spec.i_max + 1))
        for k, (proc, depth) in enumerate(LAWS):
            est = treemod.gw_estimate(proc, depth, 1500, seed=150 + k)
            se = max(est.c_se, 1e-12)
            z = abs(est.c_inf - est.c_exact) / se
            ok_gw &= z <= 3 or est.c_inf == est.c_exact
            rows.append(f"{est.c_inf:.3f}~{est.c_exact:.3f} (1-q={1 - est.extinction:.3f})")
    ok = worst_sum < 1e-12 and admissible == 1000 and ok_gw
    return report(15, ok, f"sum rel err {worst_sum:.1e}, admissible {admissible}/1000, "
                  "GW " + ", ".join(rows), t.elapsed, 120)


# ---------------------------------------------------------------------------
# 16. tail decay


def criterion_16():
    p = lehto.AnnulusParams(2.0, 0.6, 0.1)
    Ns = [2, 3, 4]
    with timed() as t:
        # the threshold sits two standard deviations into the lower tail of
        # L(0, R_2, 2)/2, read off an independent pilot run
        pilot = lehto.lehto_tail_mc(p, [2], 1.0, 2000, seed=16000, gamma=0.1).values[:, 0] / 2
        delta = float(pilot.mean() - 2.0 * pilot.std())
        mono, freqs = 0, []
        for k in range(20):
            res = lehto.lehto_tail_mc(p, Ns, delta, 5000, seed=16001 + k, gamma=0.1)
            freqs.append(res.freq)
            mono += bool(np.all(np.diff(res.freq) <= 0))
    f = np.mean(freqs, axis=0)
    return report(16, mono >= 19, f"non-increasing in {mono}/20 sweeps at delta={delta:.4g}, "
                  f"mean freq {f[0]:.4f}/{f[1]:.4f}/{f[2]:.4f}", t.elapsed, 1800)


# ---------------------------------------------------------------------------

CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11, criterion_12,
            criterion_13, criterion_14, criterion_15, criterion_16]


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("crit", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 17)])
def test_acceptance(crit):
    assert crit()


if __name__ == "__main__":
    warnings.simplefilter("ignore")
    picked = [int(a) for a in sys.argv[1:]] or range(1, 17)
    fails = sum(not CRITERIA[i - 1]() for i in picked)
    sys.exit(1 if fails else 0)
