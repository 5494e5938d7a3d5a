"""Command-line entry point: one subcommand per experiment or evaluator."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__

FAMILIES = ("U", "H", "omega", "U-lambda", "increment")

# subcommand -> module operations it exposes (each operation appears once)
REGISTRY = {
    "kernel-eval": ("noise.eval_kernel", "noise.lambda_area"),
    "sample-field": ("noise.sample_exact", "noise.sample_white_noise", "noise.field_from_noise",
                     "noise.nested_fields", "noise.mesh_variance"),
    "gmc-moments": ("gmc.moment_mc", "gmc.zeta"),
    "scaling-law": ("gmc.scaling_law_pair", "harness.ks_two_sample"),
    "laplace": ("gmc.laplace_mc", "gmc.laplace_corollary_exponent"),
    "l2-check": ("gmc.l2_check", "gmc.l2_bound"),
    "inverse-tests": ("inverse.q_of", "inverse.q_increment", "inverse.q_bullet",
                      "inverse.homeomorphism_eval", "inverse.smp_test",
                      "inverse.mean_shift_mc", "inverse.multipoint_product_mc",
                      "inverse.xi_modulus_slope"),
    "ratio-moments": ("inverse.ratio_moment_mc", "inverse.ratio_slope_mc"),
    "welding-stats": ("welding.ab_extension", "welding.dilatation_numeric",
                      "welding.dilatation_bound", "welding.integrability_scan",
                      "welding.cube_ratio_diagnostic"),
    "lehto": ("lehto.annulus_family", "lehto.lehto_integral", "lehto.lehto_lower_bound",
              "lehto.lehto_tail_mc", "lehto.branched_lehto"),
    "gap-alpha": ("lehto.gap_alpha_mc", "lehto.alpha_greedy"),
    "pair-centers": ("lehto.pair_centers", "lehto.pairing_invariants"),
    "overlap": ("lehto.overlap_event",),
    "solve-constraints": ("constraints.max_beta", "constraints.check_point"),
    "dyadic-modulus": ("treemod.modulus_lower_bound", "treemod.weights_and_area",
                       "treemod.min_rho_length", "treemod.gw_estimate"),
}


SUMMARY = {
    "kernel-eval": "covariance kernel at given separations",
    "sample-field": "draw fields from the exact or white-noise backend",
    "gmc-moments": "moment scaling slopes of chaos masses",
    "scaling-law": "two-sample KS check of the scaling transformation",
    "laplace": "Laplace transform of small-interval masses",
    "l2-check": "Monte Carlo L2 estimate against its bound",
    "inverse-tests": "inverse identities, Markov and mean-shift checks",
    "ratio-moments": "moments of mass ratios over disjoint intervals",
    "welding-stats": "extension, dilatation and cube-bound statistics",
    "lehto": "Lehto integrals, lower bounds and tail frequencies",
    "gap-alpha": "independence number of the gap graph",
    "pair-centers": "alternating center pairing and its invariants",
    "overlap": "overlap event for two random annuli",
    "solve-constraints": "largest feasible beta for a constraint profile",
    "dyadic-modulus": "tree modulus bound and Galton-Watson inputs",
}


class CliError(Exception):
    """A bad flag or config value; reported on one line."""


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _prob(x):
    return 0 < x < 1


def _floats(s):
    if isinstance(s, (list, tuple)):
        return [float(v) for v in s]
    return [float(v) for v in str(s).split(",") if v.strip()]


def _ints(s):
    if isinstance(s, (list, tuple)):
        return [int(v) for v in s]
    out = []
    for part in str(s).split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


# name -> (type, default, help, check, domain text); check may be None
COMMON = {
    "seed": (int, 0, "master seed, unsigned 64-bit", lambda v: 0 <= v < 2**64, "in [0, 2^64)"),
    "reps": (int, None, "Monte Carlo replicates (count)", lambda v: v >= 1, ">= 1"),
    "grid": (int, None, "grid size (points or cells, power of two where noted)",
             lambda v: v >= 1, ">= 1"),
    "gamma": (float, None, "GMC coupling gamma (dimensionless)",
              lambda v: 0 <= v < math.sqrt(2), "in [0, sqrt 2)"),
    "delta": (float, None, "correlation scale delta (length)", _pos, "> 0"),
}

COMMANDS = {
    "kernel-eval": {
        "family": (str, "U", "kernel family", lambda v: v in FAMILIES, f"one of {FAMILIES}"),
        "eps": (float, 0.1, "lower cutoff eps (length)", _pos, "> 0"),
        "lam": (float, 0.5, "scaling lambda for U-lambda", _prob, "in (0, 1)"),
        "delta2": (float, 0.5, "inner scale for the increment kernel (length)", _pos, "> 0"),
        "top": (float, math.inf, "height cutoff for H (length)", _pos, "> 0"),
        "sep": (_floats, [0.0], "separation(s), comma list (length)", None, "numbers"),
        "_defaults": {"delta": 1.0},
    },
    "sample-field": {
        "family": (str, "U", "kernel family (mesh backend: U or H)", lambda v: v in FAMILIES,
                   f"one of {FAMILIES}"),
        "eps": (float, 1 / 64, "lower cutoff eps (length)", _pos, "> 0"),
        "length": (float, 1.0, "sampled interval length", _pos, "> 0"),
        "backend": (str, "exact", "exact covariance or white-noise mesh",
                    lambda v: v in ("exact", "mesh"), "exact or mesh"),
        "dx": (float, None, "mesh step (length, default eps/16)", _pos, "> 0"),
        "lam": (float, 0.5, "scaling lambda for U-lambda", _prob, "in (0, 1)"),
        "_defaults": {"delta": 0.25, "grid": 16, "reps": 1},
    },
    "gmc-moments": {
        "q": (_floats, [2.0, -1.0], "moment orders, comma list", None, "numbers"),
        "octaves": (int, 6, "t runs over delta/2^j, j = 0..octaves", lambda v: v >= 1, ">= 1"),
        "tol": (float, 0.15, "allowed |slope - zeta(q)|", _pos, "> 0"),
        "_defaults": {"gamma": 0.5, "delta": 1.0, "reps": 2000, "grid": 1024},
    },
    "scaling-law": {
        "lam": (float, 0.5, "scaling factor lambda", lambda v: 0 < v <= 1, "in (0, 1]"),
        "length": (float, 0.5, "interval length (at most delta)", _pos, "> 0"),
        "level": (float, 0.01, "test level", _prob, "in (0, 1)"),
        "_defaults": {"gamma": 0.4, "delta": 1.0, "reps": 2000, "grid": 256},
    },
    "laplace": {
        "r": (float, 8.0, "Laplace argument r", _nonneg, ">= 0"),
        "t": (float, 0.125, "interval length t", _pos, "> 0"),
        "_defaults": {"gamma": 0.5, "delta": 0.5, "reps": 2000, "grid": 256},
    },
    "l2-check": {
        "x": (float, 0.05, "interval length x", _pos, "> 0"),
        "_defaults": {"gamma": 0.5, "delta": 0.1, "reps": 2000},
    },
    "inverse-tests": {
        "mode": (str, "identities", "identities, smp, mean-shift, multipoint or xi",
                 lambda v: v in ("identities", "smp", "mean-shift", "multipoint", "xi"),
                 "one of identities, smp, mean-shift, multipoint, xi"),
        "points": (int, 1000, "random test points", lambda v: v >= 1, ">= 1"),
        "a": (float, 0.5, "mass level a", _pos, "> 0"),
        "r": (float, None, "gap r (length, default 2 delta)", _pos, "> 0"),
        "t": (float, 0.2, "window length t", _pos, "> 0"),
        "p": (float, 1.1, "ratio exponent p", None, "a number"),
        "_defaults": {"gamma": 0.4, "delta": 0.1, "reps": 2000, "grid": 256},
    },
    "ratio-moments": {
        "p": (float, 1.1, "ratio exponent p", None, "a number"),
        "xs": (_floats, None, "interval lengths, comma list (default delta/64..delta/4)",
               None, "numbers"),
        "sep-factor": (float, 4.0, "separation in units of x", _nonneg, ">= 0"),
        "_defaults": {"gamma": 0.3, "delta": 1.0, "reps": 2000},
    },
    "welding-stats": {
        "levels": (int, 4, "largest Whitney level scanned", _nonneg, ">= 0"),
        "pairs": (str, "distinct", "pair convention for K_Q",
                  lambda v: v in ("distinct", "ordered"), "distinct or ordered"),
        "_defaults": {"gamma": 0.5, "grid": 1024},
    },
    "lehto": {
        "mode": (str, "lower-bound", "lower-bound, tail, trivial, branched or family",
                 lambda v: v in ("lower-bound", "tail", "trivial", "branched", "family"),
                 "one of lower-bound, tail, trivial, branched, family"),
        "p-star": (float, 1.0, "rho_* = 2^-p_star", _pos, "> 0"),
        "r-a": (float, 0.6, "inner exponent r_a", _pos, "> 0"),
        "r-b": (float, 0.1, "outer exponent r_b", _pos, "> 0"),
        "levels": (_ints, [1, 2, 3, 4, 5, 6], "levels, comma list or a..b", None, "integers"),
        "N": (_ints, [2, 3, 4], "N values for the tail mode", None, "integers"),
        "K": (_floats, [1.0, 1.0], "constant dilatations (trivial: first, branched: both)",
              lambda v: all(k >= 1 for k in v), "all >= 1"),
        "r": (float, 0.01, "inner radius", _pos, "> 0"),
        "R": (float, 1.0, "outer radius", _pos, "> 0"),
        "_defaults": {"gamma": 0.5, "reps": 4, "grid": 4096, "delta": 1.0},
    },
    "gap-alpha": {
        "p-star": (float, 1.0, "rho_* = 2^-p_star", _pos, "> 0"),
        "r-a": (float, 0.6, "inner exponent r_a", _pos, "> 0"),
        "r-b": (float, 0.1, "outer exponent r_b", _pos, "> 0"),
        "N": (int, 6, "number of levels", lambda v: 1 <= v <= 20, "in [1, 20]"),
        "_defaults": {"gamma": 0.1, "reps": 20, "grid": 16384},
    },
    "pair-centers": {
        "x": (_floats, [0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
              "centers X, comma list", None, "numbers"),
        "y": (_floats, [0, 0.05, 0.09, 0.19, 0.29, 0.39, 0.49, 0.59, 0.69, 0.79, 0.89, 0.99, 1.0],
              "centers Y, comma list", None, "numbers"),
        "radius": (float, 0.12, "R_N", _pos, "> 0"),
        "check-gaps": (int, 1, "reject gaps above R_N (1) or not (0)",
                       lambda v: v in (0, 1), "0 or 1"),
    },
    "overlap": {
        "centers": (_floats, [0.5, 0.52], "the two centers", lambda v: len(v) == 2, "two numbers"),
        "scales": (_floats, [1.0, 1.0], "the two scaling factors M", lambda v: len(v) == 2,
                   "two numbers"),
        "a0": (float, 0.05, "inner base radius before scaling", _pos, "> 0"),
        "b0": (float, 0.2, "outer base radius before scaling", _pos, "> 0"),
        "P": (float, 0.01, "required overlap", _pos, "> 0"),
    },
    "solve-constraints": {
        "profile": (str, "full-lambda0-0.01", "constraint profile", None, "a profile name"),
        "tol": (float, 1e-6, "relative bisection tolerance", _pos, "> 0"),
    },
    "dyadic-modulus": {
        "spec": (str, None, "tree description file (key = value plus per-scale CSV)", None,
                 "a path"),
        "gw-probs": (_floats, None, "offspring law p(0), p(1), ... for a GW run", None,
                     "numbers"),
        "gw-N": (int, 1, "branching exponent for the GW law", lambda v: v >= 1, ">= 1"),
        "depth": (int, 25, "simulated GW depth", lambda v: v >= 2, ">= 2"),
        "_defaults": {"reps": 200},
    },
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message.replace("\n", " "))


def _dest(name):
    return name.replace("-", "_")


def build_parser():
    p = _Parser(prog="artifact", description="GMC, Lehto and welding experiments")
    p.add_argument("--version", action="version", version=f"artifact {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command")
    for cmd, opts in COMMANDS.items():
        sp = sub.add_parser(cmd, help=SUMMARY[cmd], description=SUMMARY[cmd])
        defaults = opts.get("_defaults", {})
        for name, (typ, default, hlp, _c, _d) in list(COMMON.items()) + [
                (k, v) for k, v in opts.items() if not k.startswith("_")]:
            default = defaults.get(name, default)
            sp.add_argument(f"--{name}", dest=_dest(name), type=str, default=None,
                            help=f"{hlp} (default: {default})")
        sp.add_argument("--out", help="output directory (default: stdout)")
        sp.add_argument("--config", help="key = value file; flags override it")
        sp.add_argument("--format", choices=("csv", "json"), default=None,
                        help="output format (default: csv)")
    return p


def read_config(path):
    """Flat ``key = value`` file with ``#`` comments."""
    out = {}
    try:
        fh = open(path)
    except OSError as e:
        raise CliError(f"--config: cannot read {path}: {e.strerror}") from None
    with fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"--config: line {n} is not key = value")
            k, v = (t.strip() for t in line.split("=", 1))
            out[k.replace("_", "-")] = v
    return out


def resolve(command, ns):
    """Merge defaults, config file and flags; convert and check every value."""
    opts = COMMANDS[command]
    table = dict(COMMON)
    table.update({k: v for k, v in opts.items() if not k.startswith("_")})
    cfg = read_config(ns.config) if ns.config else {}
    for key in cfg:
        if key not in table and key not in ("format", "out"):
            raise CliError(f"--config: unknown key {key!r} for {command}")
    params = {}
    for name, (typ, default, _h, check, domain) in table.items():
        raw = getattr(ns, _dest(name))
        if raw is None:
            raw = cfg.get(name)
        if raw is None:
            params[name] = opts.get("_defaults", {}).get(name, default)
            continue
        try:
            val = typ(raw)
        except (TypeError, ValueError):
            raise CliError(f"--{name}: expected {domain}, got {raw!r}") from None
        if check is not None and not check(val):
            raise CliError(f"--{name}: must be {domain}, got {raw!r}")
        params[name] = val
    params["format"] = ns.format or cfg.get("format", "csv")
    if params["format"] not in ("csv", "json"):
        raise CliError(f"--format: must be csv or json, got {params['format']!r}")
    params["out"] = ns.out or cfg.get("out")
    return params


def config_hash(command, params):
    blob = json.dumps({"command": command, **{k: v for k, v in params.items() if k != "out"}},
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _need(params, *names):
    for n in names:
        if params.get(n) is None:
            raise CliError(f"--{n}: required for this command")


# ---------------------------------------------------------------------------
# handlers: each returns (rows, assertions)


def _kernel(family, delta, eps, lam=0.5, delta2=0.5, top=math.inf):
    from . import noise

    if family == "U":
        return noise.u_kernel(delta, eps)
    if family == "H":
        return noise.h_kernel(eps, top)
    if family == "omega":
        return noise.omega_kernel(delta, eps)
    if family == "U-lambda":
        return noise.u_lambda_kernel(delta, eps, lam)
    return noise.increment_kernel(delta, delta2)


def cmd_kernel_eval(a):
    from . import noise

    k = _kernel(a["family"], a["delta"], a["eps"], a["lam"], a["delta2"], a["top"])
    vals = np.atleast_1d(noise.eval_kernel(k, np.asarray(a["sep"], dtype=float)))
    rows = [{"family": a["family"], "separation": s, "value": float(v)}
            for s, v in zip(a["sep"], vals)]
    return rows, [("finite", bool(np.all(np.isfinite(vals))), "")]


def cmd_sample_field(a):
    from . import noise

    n, L = a["grid"], a["length"]
    pts = (np.arange(n) + 0.5) * L / n
    if a["backend"] == "exact":
        k = _kernel(a["family"], a["delta"], a["eps"], a["lam"])
        draws = np.atleast_2d(noise.sample_exact(k, pts, a["seed"], size=a["reps"]))
    else:
        dx = a["dx"] or a["eps"] / 16
        if a["family"] == "U":
            region = noise.RegionSpec("triangle-U", a["eps"], a["delta"])
            mesh = noise.make_mesh(-a["delta"], L + a["delta"], a["eps"], a["delta"], dx)
        elif a["family"] == "H":
            if L != 1:
                raise CliError("--length: must be 1 for the periodic H mesh")
            top = 2.0
            region = noise.RegionSpec("wedge-H", a["eps"], top=top)
            mesh = noise.make_mesh(0.0, 1.0, a["eps"], top, dx, periodic=True)
        else:
            raise CliError("--family: mesh backend supports U or H")
        rng = np.random.default_rng(a["seed"])
        draws = np.array([noise.field_from_noise(noise.sample_white_noise(mesh, rng), region, pts)
                          for _ in range(a["reps"])])
    rows = [{"rep": r, "x": float(x), "value": float(v)}
            for r in range(draws.shape[0]) for x, v in zip(pts, draws[r])]
    return rows, [("finite", bool(np.all(np.isfinite(draws))), "")]


def cmd_gmc_moments(a):
    from . import gmc

    d = a["delta"]
    ts = [d / 2**j for j in range(a["octaves"], -1, -1)]
    rows, checks = [], []
    for q in a["q"]:
        ests, slope = gmc.moment_mc(a["gamma"], d, q, ts, a["reps"], a["seed"], h=d / a["grid"])
        z = float(gmc.zeta(a["gamma"], q))
        for e in ests:
            rows.append({"q": q, "t": e.t, "estimate": e.estimate, "stderr": e.stderr,
                         "unreliable": e.unreliable, "slope": slope, "zeta": z})
        checks.append((f"slope q={q:g}", abs(slope - z) <= a["tol"], f"{slope:.4f} vs {z:.4f}"))
    return rows, checks


def cmd_scaling_law(a):
    from . import gmc, harness

    h = a["length"] / a["grid"]
    left, right = gmc.scaling_law_pair(a["gamma"], a["delta"], a["lam"], (0.0, a["length"]),
                                       a["reps"], a["seed"], h=h)
    stat, pv = harness.ks_two_sample(left, right)
    rows = [{"mean_left": float(left.mean()), "mean_right": float(right.mean()),
             "ks_statistic": stat, "p_value": pv}]
    return rows, [("ks not rejected", pv > a["level"], f"p={pv:.4g}")]


def cmd_laplace(a):
    from . import gmc

    est, se = gmc.laplace_mc(a["gamma"], a["delta"], a["r"], a["t"], a["reps"], a["seed"],
                             h=a["t"] / a["grid"])
    return [{"estimate": est, "stderr": se}], [("in [0, 1]", 0 <= est <= 1, "")]


def cmd_l2_check(a):
    from . import gmc

    est, se, bound, ok = gmc.l2_check(a["gamma"], a["delta"], a["x"], a["reps"], a["seed"])
    return ([{"estimate": est, "stderr": se, "bound": bound}],
            [("estimate <= bound + 3 se", ok, f"{est:.4g} vs {bound:.4g}")])


def cmd_inverse_tests(a):
    from . import gmc, inverse, noise

    mode = a["mode"]
    g, d = a["gamma"], a["delta"]
    if mode == "identities":
        n = a["grid"]
        h = 1.0 / n
        pts = (np.arange(n) + 0.5) * h
        kern = noise.u_kernel(d, h)
        m = gmc.build_measure(noise.sample_exact(kern, pts, a["seed"]), h, g, kern.variance)
        inv = inverse.InverseMap(m)
        rng = np.random.default_rng(a["seed"])
        t = rng.uniform(0, 1, a["points"])
        x = rng.uniform(0, m.total, a["points"])
        e1 = float(np.max(np.abs(inverse.q_of(inv, m.cdf(t)) - t)))
        e2 = float(np.max(np.abs(m.cdf(inverse.q_of(inv, x)) - x)))
        hm = inverse.circle_homeomorphism(m)
        xx = rng.uniform(-3, 3, a["points"])
        e3 = float(np.max(np.abs(inverse.homeomorphism_eval(hm, xx + 1)
                                 - inverse.homeomorphism_eval(hm, xx) - 1)))
        yx = np.sort(rng.uniform(0, m.total, (min(a["points"], 200), 2)), axis=1)
        e4 = max(abs(inverse.q_increment(inv, y, xv) - inverse.q_bullet(m, xv - y, inverse.q_of(inv, y)))
                 for y, xv in yx)
        rows = [{"identity": k, "max_error": v} for k, v in
                [("Q(eta(t))=t", e1), ("eta(Q(x))=x", e2), ("periodicity", e3), ("semigroup", e4)]]
        return rows, [(r["identity"], r["max_error"] < 1e-9, f"{r['max_error']:.2e}") for r in rows]
    h = d / (a["grid"] // 4 or 1)
    if mode == "smp":
        r = a["r"] if a["r"] is not None else 2 * d
        res = inverse.smp_test(g, d, a["a"], r, a["t"], a["reps"], a["seed"], h=h)
        lim = 3 / math.sqrt(res.n)
        return ([{"pearson": res.pearson, "pvalue": res.pearson_pvalue, "dcor": res.dcor,
                  "n": res.n, "dropped": res.dropped}],
                [("|corr| < 3/sqrt(n)", abs(res.pearson) < lim, f"{res.pearson:.4f}")])
    if mode == "mean-shift":
        est, se, lo = inverse.mean_shift_mc(g, d, a["a"], a["reps"], a["seed"], h=h)
        return [{"estimate": est, "stderr": se, "lower99": lo}], [("lower bound > 0", lo > 0, "")]
    if mode == "multipoint":
        res = inverse.multipoint_product_mc(
            g, [0.25, 0.125], [((0.6, 0.7), (0.8, 0.9)), ((0.1, 0.15), (0.2, 0.25))],
            [a["p"], a["p"]], 1.0, a["reps"], a["seed"])
        return ([{"joint": res.joint, "joint_se": res.joint_se, "gap_probability":
                  res.gap_probability, "ratio": res.ratio, "n": res.n}],
                [("finite", math.isfinite(res.joint), "")])
    zs = np.logspace(-7, -4, 7)
    slope = inverse.xi_modulus_slope(zs)
    return [{"slope": slope}], [("slope near 2/3", abs(slope - 2 / 3) < 0.05, f"{slope:.4f}")]


def cmd_ratio_moments(a):
    from . import inverse

    d = a["delta"]
    xs = a["xs"] or [d / 64, d / 32, d / 16, d / 8, d / 4]
    est, se, slope = inverse.ratio_slope_mc(a["gamma"], d, a["p"], xs, a["sep-factor"],
                                            a["reps"], a["seed"])
    rows = [{"x": x, "estimate": float(e), "stderr": float(s), "slope": slope}
            for x, e, s in zip(sorted(xs), est, se)]
    return rows, [("finite", bool(np.all(np.isfinite(est))), "")]


def cmd_welding_stats(a):
    from . import gmc, inverse, noise, welding

    n = a["grid"]
    if n & (n - 1) or n < 64:
        raise CliError("--grid: must be a power of two >= 64")
    h = 1.0 / n
    pts = (np.arange(n) + 0.5) * h
    kern = noise.h_kernel(h)
    x = noise.sample_exact(kern, pts, a["seed"]) if a["gamma"] > 0 else np.zeros(n)
    hm = inverse.circle_homeomorphism(gmc.build_measure(x, h, a["gamma"], kern.variance))
    top = min(a["levels"], welding._resolution(hm) - welding.J5_DEPTH)
    rows = []
    for lvl in range(top + 1):
        kq = welding.level_bounds(hm, lvl, a["pairs"])
        rows.append({"level": lvl, "K_Q_mean": float(kq.mean()), "K_Q_max": float(kq.max()),
                     "scan_to_level": welding.integrability_scan(hm, lvl, a["pairs"])})
    diag = welding.cube_ratio_diagnostic(hm, welding.DyadicInterval(min(2, top), 1),
                                         seed=a["seed"])
    ok = bool(all(r["K_Q_mean"] >= 1 for r in rows))
    return rows, [("K_Q >= 1", ok, ""), ("numeric K <= K_Q", diag <= 1.0, f"ratio={diag:.3f}")]


def _annulus_params(a):
    from .lehto import AnnulusParams

    try:
        return AnnulusParams(a["p-star"], a["r-a"], a["r-b"])
    except ValueError as e:
        raise CliError(f"--r-a/--r-b: {e}") from None


def cmd_lehto(a):
    from . import lehto

    mode = a["mode"]
    L = int(round(math.log2(a["grid"])))
    if 2**L != a["grid"]:
        raise CliError("--grid: must be a power of two")
    if mode == "trivial":
        K = a["K"][0]
        val = lehto.lehto_integral(K, 0.0, a["r"], a["R"])
        exact = math.log(a["R"] / a["r"]) / (2 * math.pi * K)
        return [{"value": val, "closed_form": exact}], [("closed form", abs(val - exact) < 1e-9, "")]
    if mode == "branched":
        if len(a["K"]) != 2:
            raise CliError("--K: branched mode needs two values")
        val = lehto.branched_lehto(a["K"][0], a["K"][1], a["r"], a["R"])
        return [{"value": val}], [("positive", val > 0, "")]
    P = _annulus_params(a)
    if mode == "family":
        fam = lehto.annulus_family(P, max(a["levels"]), a["gamma"])
        rows = [{"level": int(k), "a": float(x), "b": float(y), "a_P": float(u), "b_P": float(v)}
                for k, x, y, u, v in zip(fam.levels, fam.a, fam.b, fam.a_P, fam.b_P)]
        return rows, [(k, bool(v), "") for k, v in fam.report.items()]
    if mode == "tail":
        res = lehto.lehto_tail_mc(P, a["N"], a["delta"], a["reps"], a["seed"], a["gamma"], L)
        rows = [{"N": n, "freq": float(f), "ci_lo": float(c[0]), "ci_hi": float(c[1])}
                for n, f, c in zip(res.Ns, res.freq, res.ci)]
        mono = bool(np.all(np.diff(res.freq) <= 0))
        return rows, [("non-increasing", mono, "")]
    rng = np.random.default_rng(a["seed"])
    rows, ok = [], True
    for i in range(a["reps"]):
        st = lehto.build_stack(P, a["levels"], a["gamma"], L, rng)
        M = {n: lehto.scaling_factor(st.tau, st.etas[n], P, n) for n in st.etas}
        A = lehto.choose_disjoint_levels(M, P)
        lb = lehto.lehto_lower_bound(st, P, A, M)
        ok &= lb.total <= lb.lehto
        rows.append({"config": i, "levels": " ".join(map(str, A)), "lower_bound": lb.total,
                     "lehto": lb.lehto})
    return rows, [("sum sigma m <= L", bool(ok), "")]


def cmd_gap_alpha(a):
    from . import lehto

    L = int(round(math.log2(a["grid"])))
    res = lehto.gap_alpha_mc(_annulus_params(a), a["N"], a["reps"], a["seed"], a["gamma"], L)
    rows = [{"N": res.N, "mean_ratio": res.mean_ratio, "ci_lo": res.ci[0], "ci_hi": res.ci[1],
             "literal_agrees": res.literal_agrees}]
    return rows, [("interval graph matches literal edges", res.literal_agrees == 1.0, "")]


def cmd_pair_centers(a):
    from . import lehto

    try:
        p = lehto.pair_centers(a["x"], a["y"], a["radius"], bool(a["check-gaps"]))
    except ValueError as e:
        raise CliError(f"--x/--y: {e}") from None
    inv = lehto.pairing_invariants(p)
    rows = [{"s": s, "k": k, "m": m, "X": float(p.X[k]), "Y": float(p.Y[m])}
            for s, (k, m) in enumerate(p.pairs)]
    return rows, [(k, v, "") for k, v in inv.items()]


def cmd_overlap(a):
    from . import lehto

    A = [lehto.RandomAnnulus(1, c, s, a["a0"], a["b0"]) for c, s in zip(a["centers"], a["scales"])]
    ev = lehto.overlap_event(A[0], A[1], a["P"])
    return [{"overlap": ev}], []


def cmd_solve_constraints(a):
    from . import constraints

    if a["profile"] not in constraints.PROFILES:
        raise CliError(f"--profile: must be one of {sorted(constraints.PROFILES)}")
    prof = constraints.PROFILES[a["profile"]]
    thr, wit = constraints.max_beta(prof, tol=a["tol"])
    rep = constraints.check_point(wit)
    rows = [{"profile": prof.name, "threshold": thr, "quoted": prof.quoted,
             **{k: v for k, v in wit.__dict__.items()}}]
    rel = abs(thr - prof.quoted) / prof.quoted
    return rows, [("witness feasible", all(rep.holds[i - 1] for i in prof.constraints), ""),
                  ("matches quoted value (1e-3 rel)", rel <= 1e-3, f"{thr:.8g}")]


def cmd_dyadic_modulus(a):
    from . import treemod

    rows, checks = [], []
    if a["spec"]:
        try:
            spec = treemod.load_tree_spec(a["spec"])
        except (OSError, ValueError) as e:
            raise CliError(f"--spec: {e}") from None
        c = treemod.modulus_lower_bound(spec)
        B, area = treemod.weights_and_area(spec)
        ok = True
        for i in range(1, spec.i_max + 1):
            M = spec.i_max - i
            mrl = treemod.min_rho_length(spec, i, M, B)
            rows.append({"i": i, "B": float(B[i - 1]), "c_iM": treemod.c_finite(spec, i, M),
                         "min_rho_length": mrl, "c": c, "area": area})
            ok &= mrl >= 1 - 1e-12
        if np.all(np.diff(B) >= 0):
            checks.append(("admissible", bool(ok), ""))
    if a["gw-probs"]:
        proc = treemod.GwProcess(a["gw-probs"], a["gw-N"])
        est = treemod.gw_estimate(proc, a["depth"], a["reps"], a["seed"])
        for g, (m, s) in enumerate(zip(est.S_mean, est.S_se)):
            rows.append({"generation": g, "S_mean": float(m), "S_se": float(s)})
        rows.append({"c_inf": est.c_inf, "c_se": est.c_se, "c_exact_depth": est.c_exact,
                     "one_minus_q": 1 - est.extinction})
        gap = abs(est.c_inf - est.c_exact)
        checks.append(("survival within 3 se", gap <= 3 * max(est.c_se, 1e-12), ""))
    if not rows:
        raise CliError("--spec: give a tree file or --gw-probs")
    return rows, checks


HANDLERS = {
    "kernel-eval": cmd_kernel_eval, "sample-field": cmd_sample_field,
    "gmc-moments": cmd_gmc_moments, "scaling-law": cmd_scaling_law, "laplace": cmd_laplace,
    "l2-check": cmd_l2_check, "inverse-tests": cmd_inverse_tests,
    "ratio-moments": cmd_ratio_moments, "welding-stats": cmd_welding_stats,
    "lehto": cmd_lehto, "gap-alpha": cmd_gap_alpha, "pair-centers": cmd_pair_centers,
    "overlap": cmd_overlap, "solve-constraints": cmd_solve_constraints,
    "dyadic-modulus": cmd_dyadic_modulus,
}


# ---------------------------------------------------------------------------
# output


def _plain(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def render(command, params, rows, checks, header):
    fmt = params["format"]
    if fmt == "json":
        obj = {
            "header": header,
            "command": command,
            "params": [{"name": k, "value": _plain(v) if not isinstance(v, list) else v}
                       for k, v in sorted(params.items()) if k not in ("out", "format")],
            "results": [{k: _plain(v) for k, v in r.items()} for r in rows],
            "assertions": [{"name": n, "passed": bool(ok), "detail": d} for n, ok, d in checks],
        }
        return json.dumps(obj, indent=2, default=str) + "\n"
    buf = io.StringIO()
    buf.write(header + "\n")
    keys = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\r\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _plain(v) for k, v in r.items()})
    return buf.getvalue()


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            parser.print_usage(sys.stderr)
            return 2
        params = resolve(ns.command, ns)
        t0 = time.perf_counter()
        rows, checks = HANDLERS[ns.command](params)
    except CliError as e:
        if "invalid choice" in str(e) and "command" in str(e):
            parser.print_usage(sys.stderr)
        print(f"artifact: error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"artifact: error: {e}", file=sys.stderr)
        return 2
    header = (f"# artifact {__version__} config={config_hash(ns.command, params)} "
              f"seed={params['seed']}")
    checks.append(("runtime_s", True, f"{time.perf_counter() - t0:.3f}"))
    text = render(ns.command, params, rows, checks, header)
    if params["out"]:
        os.makedirs(params["out"], exist_ok=True)
        path = os.path.join(params["out"], f"{ns.command}.{params['format']}")
        with open(path, "w", newline="") as fh:
            fh.write(text)
        print(path)
    else:
        sys.stdout.write(text)
    return 0 if all(ok for _, ok, _ in checks) else 1


if __name__ == "__main__":
    sys.exit(main())
