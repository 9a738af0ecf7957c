"""Acceptance suite: every quantitative contract, one test per criterion.

Each test prints a single PASS line with its headline numbers (run with
``pytest tests/test_acceptance.py -v -s`` to watch them).  Monte-Carlo
checks run at a fixed seed so the suite is deterministic; statistical
tolerances are the stated ones (chi-square floors, 3-SE or 5-SE slacks).
"""

import math
import time
import tracemalloc

import numpy as np
from scipy.stats import chi2

from conftest import enumerate_pinned_paths
from strongcoupling.core import RandomSource
from strongcoupling.onestep import conditional_law, exp_moment_estimate
from strongcoupling.recursion import (
    DEFAULT_CONFIG,
    pinned_paths_batch,
    sample_infinite_coupling,
    sample_walk_coupling,
)
from strongcoupling.stein import (
    discrete_identity_check,
    stein_h,
    stein_identity_residual,
    triangular_density,
    truncated_normal_density,
    uniform_density,
)
from strongcoupling.verify import (
    ExperimentPlan,
    _top_split_max_bound_gap,
    exact_exp_square_moment,
    exp_square_moment_bound,
    mc_pinned_exp_moment,
    mc_pinned_square_moment,
    run_deviation_experiment,
    tail_linearity,
)

SEED = 20250809


def report(criterion: int, label: str, detail: str):
    print(f"ACCEPTANCE {criterion:2d} PASS - {label}: {detail}")


def src_for(name: str) -> RandomSource:
    return RandomSource(SEED).split("acceptance").split(name)


PHI_BATTERY = [
    ("x", lambda x: x, lambda x: 1.0, None),
    ("x^2", lambda x: x * x, lambda x: 2.0 * x, None),
    ("x^3", lambda x: x ** 3, lambda x: 3.0 * x * x, None),
    ("sin", math.sin, math.cos, None),
    ("clipped-linear", lambda x: min(1.0, max(-1.0, x)),
     lambda x: 1.0 if -1.0 < x < 1.0 else 0.0, (-1.0, 1.0)),
]


def test_criterion_01_stein_identity_continuous():
    t0 = time.perf_counter()
    densities = [uniform_density(), triangular_density(),
                 truncated_normal_density()]
    worst = 0.0
    for dens in densities:
        h = stein_h(dens)
        for _, phi, dphi, points in PHI_BATTERY:
            worst = max(worst, stein_identity_residual(dens, h.exact, phi,
                                                       dphi, points=points))
    assert worst < 1e-7
    control = stein_identity_residual(uniform_density(), lambda x: 1.0,
                                      lambda x: x ** 3, lambda x: 3 * x * x)
    assert control > 1e-2
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    report(1, "stein identity, continuous",
           f"max residual {worst:.2e}, negative control {control:.3f}, "
           f"{elapsed:.1f}s")


def test_criterion_02_stein_identity_discrete():
    t0 = time.perf_counter()
    polys = [
        [0.0, 1.0],
        [1.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.5, -1.0, 0.0, 2.0, 1.0],
        [0.0, 1.0, 0.0, 0.0, 1.0],
    ]
    worst = 0.0
    for n in range(1, 11):
        for coeffs in polys:
            worst = max(worst, discrete_identity_check(n, coeffs))
    assert worst < 1e-9
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    report(2, "stein identity, discrete",
           f"max residual {worst:.2e} over n<=10, degree<=4, {elapsed:.1f}s")


def test_criterion_03_autocorr_martingale():
    from strongcoupling.stein import autocorr_coefficient

    t0 = time.perf_counter()
    n, reps = 50, 100_000
    h = stein_h(uniform_density())
    u = src_for("autocorr").uniform_block(0, reps * (n + 1))
    xs = (2.0 * u - 1.0).reshape(reps, n + 1) * math.sqrt(3.0)
    totals = autocorr_coefficient(xs, h)
    gap = abs(totals.mean() - n)
    se = totals.std(ddof=1) / math.sqrt(reps)
    assert gap < 3.0 * se
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    report(3, "autocorrelation martingale",
           f"|mean - n| = {gap:.4f} vs 3 SE = {3 * se:.4f}, {elapsed:.1f}s")


def test_criterion_04_conditional_law_exactness():
    t0 = time.perf_counter()
    worst = 0.0
    for n in range(2, 21):
        S, _ = enumerate_pinned_paths(n)
        ends = S[:, n]
        for a in range(-n, n + 1, 2):
            rows = np.flatnonzero(ends == a)
            if rows.size == 0:
                continue
            for k in range(1, n):
                law = conditional_law(n, k, a)
                counts = np.bincount(S[rows, k] - law.support[0],
                                     minlength=2 * law.support[-1]
                                     - 2 * law.support[0] + 1)
                pmf_enum = counts[::2][: law.support.size] / rows.size
                worst = max(worst, float(np.max(np.abs(law.pmf - pmf_enum))))
    assert worst < 1e-12
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    report(4, "conditional-law exactness",
           f"max |pmf - enumeration| = {worst:.2e} over all n<=20, {elapsed:.0f}s")


def test_criterion_05_recursive_marginal_exactness():
    t0 = time.perf_counter()
    draws = 1_000_000
    worst_p = 1.0
    worst_case = None
    for n in range(1, 13):
        for a in range(-n, n + 1, 2):
            sub = src_for(f"marg{n},{a}")
            counts = np.zeros(1 << n, dtype=np.int64)
            chunk = max(1, (1 << 22) // (n + 1))
            done = 0
            while done < draws:
                take = min(chunk, draws - done)
                S, _, _ = pinned_paths_batch(n, a, DEFAULT_CONFIG,
                                             sub.split(f"c{done}"), take)
                bits = (np.diff(S, axis=1) > 0).astype(np.int64)
                codes = bits @ (1 << np.arange(n, dtype=np.int64))
                counts += np.bincount(codes, minlength=1 << n)
                done += take
            pop = np.zeros(1 << n, dtype=np.int64)
            for b in range(n):
                pop += (np.arange(1 << n) >> b) & 1
            cells = counts[pop == (n + a) // 2]
            assert counts[pop != (n + a) // 2].sum() == 0
            if cells.size > 1:
                expected = draws / cells.size
                stat = float(np.sum((cells - expected) ** 2) / expected)
                p = float(chi2.sf(stat, cells.size - 1))
                if p < worst_p:
                    worst_p, worst_case = p, (n, a)
                assert p > 0.001, (n, a, p)

    # bridge covariance at n = 16, three-SE cellwise
    n, reps = 16, 100_000
    _, Y, _ = pinned_paths_batch(n, 0, DEFAULT_CONFIG, src_for("cov16"), reps)
    i = np.arange(n + 1, dtype=float)
    target = np.minimum.outer(i, i) * (n - np.maximum.outer(i, i)) / n
    emp = Y.T @ Y / reps
    se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target ** 2)
                 / reps)
    zmax = float(np.max(np.abs(emp - target)[1:-1, 1:-1] / se[1:-1, 1:-1]))
    assert zmax < 3.0
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0
    report(5, "recursive-sampler marginal exactness",
           f"worst uniformity p = {worst_p:.4f} at {worst_case}, "
           f"max covariance z = {zmax:.2f}, {elapsed:.0f}s")


def test_criterion_06_per_sample_split_inequality():
    t0 = time.perf_counter()
    n = 64
    total, violations, margin = 0, 0, np.inf
    for a, take in ((0, 600_000), (16, 200_000), (-8, 200_000)):
        sub = src_for(f"ineq{a}")
        done = 0
        chunk = (1 << 22) // (n + 1)
        while done < take:
            reps = min(chunk, take - done)
            gap = _top_split_max_bound_gap(n, a, DEFAULT_CONFIG,
                                           sub.split(f"c{done}"), reps)
            violations += int(np.sum(gap > 1e-9))
            margin = min(margin, float(-gap.max()))
            total += reps
            done += reps
    assert violations == 0
    elapsed = time.perf_counter() - t0
    report(6, "per-sample split inequality",
           f"0 violations in {total:,} draws at n=64 "
           f"(worst slack {margin:.3f}), {elapsed:.0f}s")


def test_criterion_07_one_step_uniformity_in_n():
    t0 = time.perf_counter()
    reps = 20_000
    ests, ses = [], []
    for n in (10, 100, 1000, 10_000):
        rep = exp_moment_estimate("binomial", n, None, None, [0.2], reps,
                                  src_for(f"onestep{n}"))
        ests.append(float(rep.estimates[0]))
        ses.append(float(rep.std_errors[0]))
    worst_ratio = 0.0
    for i in range(4):
        for j in range(i + 1, 4):
            gap = abs(ests[i] - ests[j])
            tol = 5.0 * math.hypot(ses[i], ses[j])
            worst_ratio = max(worst_ratio, gap / tol)
            assert gap < tol, (i, j, gap, tol)
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    report(7, "one-step uniformity in n",
           f"estimates {np.round(ests, 4).tolist()}, worst pairwise gap at "
           f"{worst_ratio:.2f} of the 5-SE budget, {elapsed:.0f}s")


def test_criterion_08_exponential_moment_bounds():
    t0 = time.perf_counter()
    # exact square-exponential inequality, enumerated
    for n in range(1, 21):
        for theta in (0.05, 0.1, 0.15, 0.2, 0.24):
            val = exact_exp_square_moment(n, theta)
            assert val <= exp_square_moment_bound(theta) + 1e-12

    # pinned exponential moment: E exp(theta W_k / sqrt(k)) <= exp(theta^2)
    reps = 30_000
    cases = 0
    for n, a in ((30, 0), (120, 12), (200, -20), (200, 0)):
        for k in (n // 3, n // 2):
            out = mc_pinned_exp_moment(n, a, k, [0.5, 1.0, 2.0], reps,
                                       src_for(f"l34-{n},{a},{k}"))
            for est, se, bound in zip(out["estimates"], out["std_errors"],
                                      out["bounds"]):
                assert est <= bound * (1.0 + 3.0 * se / est), (n, a, k)
                cases += 1

    # pinned square moment: E exp(alpha S_k^2 / k) <= exp(1 + 3 alpha a^2/(4n))
    for n, a in ((30, 0), (120, 12), (200, -20), (200, 0)):
        for k in (n // 3, n // 2, 2 * n // 3):
            out = mc_pinned_square_moment(n, a, k, 0.05, reps,
                                          src_for(f"l35-{n},{a},{k}"))
            assert out["estimate"] <= out["bound"] * (
                1.0 + 3.0 * out["std_error"] / out["estimate"]), (n, a, k)
            cases += 1
    elapsed = time.perf_counter() - t0
    report(8, "exponential-moment bounds",
           f"square-moment inequality exact for n<=20; {cases} MC bound "
           f"checks inside 3-SE slack, {elapsed:.0f}s")


def test_criterion_09_growth_rate_separation():
    t0 = time.perf_counter()
    reps = 500
    kmt_plan = ExperimentPlan(
        n_values=tuple(2 ** e for e in range(8, 17)), replicates=reps,
        seed=SEED, scheme="kmt-recursive",
    )
    kmt = run_deviation_experiment(kmt_plan)
    lo, hi = kmt.trend["ratio_slope_ci"]
    assert lo <= 0.0, kmt.trend

    sko_plan = ExperimentPlan(
        n_values=tuple(2 ** e for e in range(8, 13)), replicates=reps,
        seed=SEED, scheme="skorokhod", dt=1e-3,
    )
    sko = run_deviation_experiment(sko_plan)
    expo = sko.trend["exponent"]
    assert 0.2 <= expo <= 0.3, sko.trend

    # dominance at every common n, by at least three combined SEs
    common = set(kmt_plan.n_values) & set(sko_plan.n_values)
    worst = np.inf
    for n in sorted(common):
        ik = kmt_plan.n_values.index(n)
        isk = sko_plan.n_values.index(n)
        gap = sko.medians[isk] - kmt.medians[ik]
        se = math.hypot(kmt.median_se[ik], sko.median_se[isk])
        worst = min(worst, gap / se)
        assert gap >= 3.0 * se, (n, gap, se)
    elapsed = time.perf_counter() - t0
    assert elapsed < 1800.0
    report(9, "growth-rate separation",
           f"recursive ratio-slope CI ({lo:.4f}, {hi:.4f}) reaches <= 0; "
           f"embedding exponent {expo:.3f} (raw {sko.trend['exponent_raw']:.3f}); "
           f"dominance margin >= {worst:.1f} SE at common n, {elapsed:.0f}s")


def test_criterion_10_tail_exponentiality():
    t0 = time.perf_counter()
    out = tail_linearity(1 << 12, 20_000, src_for("tail"), p_floor=1e-3)
    assert out["slope_negative"]
    assert out["within_bands"], out
    elapsed = time.perf_counter() - t0
    report(10, "tail exponentiality",
           f"log-tail slope {out['slope']:.2f}, inside bootstrap bands over "
           f"p in [1e-3, 0.05], {elapsed:.0f}s")


def test_criterion_11_performance():
    n = 1 << 20
    warm = src_for("warm")
    sample_walk_coupling(1 << 14, src=warm)  # jit and table warm-up

    tracemalloc.start()
    t0 = time.perf_counter()
    w, g = sample_walk_coupling(n, src=src_for("perf-walk"))
    walk_elapsed = time.perf_counter() - t0
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert walk_elapsed < 1.0, walk_elapsed
    assert peak < 60 * 8 * n  # O(n) memory, generous constant

    t0 = time.perf_counter()
    wi, gi = sample_infinite_coupling(n, src=src_for("perf-inf"))
    inf_elapsed = time.perf_counter() - t0
    assert inf_elapsed < 2.0, inf_elapsed
    assert wi.n == n and gi.n == n
    report(11, "performance",
           f"walk coupling at n=2^20 in {walk_elapsed * 1000:.0f} ms "
           f"(peak traced {peak / 1e6:.0f} MB), infinite horizon in "
           f"{inf_elapsed * 1000:.0f} ms")


def test_criterion_12_cli_determinism():
    import subprocess
    import sys

    def run(*args):
        out = subprocess.run([sys.executable, "-m", "strongcoupling"]
                             + list(args), capture_output=True, text=True,
                             timeout=600)
        assert out.returncode == 0, out.stderr
        return out.stdout

    t0 = time.perf_counter()
    cases = [
        ("simulate", "--n", "64", "--endpoint", "0", "--seed", "3",
         "--mode", "bridge", "--emit-paths"),
        ("simulate", "--n", "20", "--seed", "3", "--mode", "infinite"),
        ("verify", "--experiment", "marginals", "--n", "6", "--reps", "20000",
         "--seed", "3"),
        ("stein-check", "--n", "4"),
    ]
    for case in cases:
        assert run(*case) == run(*case), case

    threaded = ("verify", "--experiment", "growth", "--scheme",
                "kmt-recursive", "--n", "64,256", "--reps", "300",
                "--seed", "3", "--format", "csv")
    one = run(*threaded, "--threads", "1")
    eight = run(*threaded, "--threads", "8")
    assert one == eight
    elapsed = time.perf_counter() - t0
    report(12, "cli determinism",
           f"byte-identical reports across reruns and thread counts "
           f"{{1, 8}}, {elapsed:.0f}s")
