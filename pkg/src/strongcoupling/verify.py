"""Monte-Carlo verification harness: deviation growth, tails, moment bounds.

Three coupling schemes are compared on the same footing:

* ``kmt-recursive`` -- the recursive quantile-coupling construction, whose
  maximal deviation should grow like log n with exponential tails;
* ``skorokhod`` -- the classical embedding extracting the walk from first
  exits of unit bands around a running level, simulated on an Euler grid
  (O(sqrt(dt)) time-discretization bias, documented and excluded from
  assertions by the statistical margins); its deviation grows like n^{1/4}
  up to log factors;
* ``independent`` -- walk and Gaussian drawn independently, a null baseline.

The harness also estimates exponential max-moments of the pinned coupling,
verifies the square-exponential moment inequality exactly by enumeration,
and checks the two permutation moment bounds by Monte Carlo.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .core import (
    CouplingReport,
    CovarianceKind,
    DomainError,
    EstimationError,
    GaussianPath,
    RandomSource,
    WalkPath,
)
from .onestep import conditional_law, log_path_count, _jackknife_mean_se
from .recursion import (
    DEFAULT_CONFIG,
    BridgeCouplingConfig,
    walk_paths_batch,
)

SCHEMES = ("kmt-recursive", "skorokhod", "independent")


class RareEventError(EstimationError):
    """A rare-event safety budget was exhausted; diagnostics attached."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


# ---------------------------------------------------------------------------
# Experiment plans and growth fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentPlan:
    """What to run: n grid, replicates, parameter grids, seed, scheme."""

    n_values: tuple
    replicates: int
    seed: int
    scheme: str = "kmt-recursive"
    lambdas: tuple = ()
    thetas: tuple = ()
    dt: float = 1e-4

    def __post_init__(self):
        ns = tuple(int(n) for n in self.n_values)
        if not ns or any(n < 1 for n in ns):
            raise DomainError("n_values must be positive")
        if list(ns) != sorted(ns):
            raise DomainError("n_values must be ascending")
        if self.replicates < 100:
            raise DomainError("need at least 100 replicates")
        if self.scheme not in SCHEMES:
            raise DomainError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.scheme == "skorokhod" and not (0 < self.dt <= 1e-3):
            raise DomainError("skorokhod grid resolution must satisfy 0 < dt <= 1e-3")
        object.__setattr__(self, "n_values", ns)
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        object.__setattr__(self, "thetas", tuple(float(x) for x in self.thetas))


@dataclass(frozen=True)
class GrowthFit:
    """Per-n deviation quantiles plus a growth-model fit and trend interval."""

    model: str
    coefficients: tuple
    residual_rms: float
    n_values: tuple
    medians: np.ndarray
    q90: np.ndarray
    q99: np.ndarray
    median_se: np.ndarray
    trend: dict = field(default_factory=dict)
    tail: dict = field(default_factory=dict)

    def __post_init__(self):
        k = len(self.n_values)
        for name in ("medians", "q90", "q99", "median_se"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (k,):
                raise DomainError(f"{name} must align with n_values")
            object.__setattr__(self, name, arr)

    def table(self) -> list:
        return [
            {"n": n, "median": float(m), "q90": float(a), "q99": float(b),
             "median_se": float(s)}
            for n, m, a, b, s in zip(self.n_values, self.medians, self.q90,
                                     self.q99, self.median_se)
        ]


# ---------------------------------------------------------------------------
# Deviation sampling per scheme
# ---------------------------------------------------------------------------

_KMT_CHUNK_CELLS = 1 << 22


def kmt_max_deviations(n: int, reps: int, src: RandomSource,
                       cfg: BridgeCouplingConfig = DEFAULT_CONFIG,
                       threads: int = 1) -> np.ndarray:
    """max_k |S_k - Y_k| over ``reps`` draws of the recursive walk coupling."""
    out = np.empty(reps)
    chunk = max(1, min(reps, _KMT_CHUNK_CELLS // (n + 1)))
    spans = [(s, min(s + chunk, reps)) for s in range(0, reps, chunk)]

    def job(span):
        s0, s1 = span
        sub = src.split(f"chunk{s0}")
        S, Y = walk_paths_batch(n, cfg, sub, s1 - s0)
        out[s0:s1] = np.max(np.abs(S - Y), axis=1)

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(job, spans))
    else:
        for span in spans:
            job(span)
    return out


def independent_max_deviations(n: int, reps: int, src: RandomSource) -> np.ndarray:
    """Deviations when the walk and the Gaussian walk are independent."""
    out = np.empty(reps)
    chunk = max(1, min(reps, _KMT_CHUNK_CELLS // (2 * n + 2)))
    for s0 in range(0, reps, chunk):
        s1 = min(s0 + chunk, reps)
        gen = src.bulk_generator(tag=s0)
        signs = np.where(gen.random((s1 - s0, n)) < 0.5, -1, 1)
        S = np.cumsum(signs, axis=1)
        B = np.cumsum(gen.standard_normal((s1 - s0, n)), axis=1)
        out[s0:s1] = np.max(np.abs(S - B), axis=1)
    return out


# --- Skorokhod baseline ----------------------------------------------------

_SKO_KERNEL = None


def _sko_kernel_compiled():
    global _SKO_KERNEL
    if _SKO_KERNEL is None:
        import numba

        @numba.njit(cache=True, nogil=True)
        def kernel(z, sqrt_dt, spu, n, band, state_f, state_i, eps, bvals,
                   exit_steps):
            B = state_f[0]
            ref = state_f[1]
            t = state_i[0]
            exits = state_i[1]
            b_steps = n * spu
            for i in range(z.shape[0]):
                if exits >= n and t >= b_steps:
                    break
                B += z[i] * sqrt_dt
                t += 1
                if t % spu == 0 and t <= b_steps:
                    bvals[t // spu] = B
                if exits < n:
                    d = B - ref
                    if d >= band:
                        eps[exits] = 1
                        exit_steps[exits] = t
                        ref += 1.0
                        exits += 1
                    elif d <= -band:
                        eps[exits] = -1
                        exit_steps[exits] = t
                        ref -= 1.0
                        exits += 1
            state_f[0] = B
            state_f[1] = ref
            state_i[0] = t
            state_i[1] = exits

        _SKO_KERNEL = kernel
    return _SKO_KERNEL


# Boundary continuity correction for first passage on an Euler grid: the
# discrete scan systematically misses excursions past the boundary, which a
# band shrunk by 0.5826 sqrt(dt) compensates to O(dt).
_BGK_BETA = 0.5826


def _skorokhod_paths(n: int, dt: float, src: RandomSource, rep_tag: int,
                     max_time_factor: float = 2.0):
    """One grid-simulated Skorokhod replicate: (+/-1 steps, B at integer times)."""
    spu = int(round(1.0 / dt))
    sqrt_dt = 1.0 / math.sqrt(spu)
    band = 1.0 - _BGK_BETA * sqrt_dt
    kernel = _sko_kernel_compiled()
    gen = src.bulk_generator(tag=rep_tag)

    eps = np.zeros(n, dtype=np.int8)
    bvals = np.zeros(n + 1, dtype=np.float64)
    exit_steps = np.zeros(n, dtype=np.int64)
    state_f = np.zeros(2, dtype=np.float64)
    state_i = np.zeros(2, dtype=np.int64)
    budget = int((max_time_factor * n + 64) * spu)
    # First chunk covers the typical need; geometric top-ups catch stragglers.
    chunk = min(budget, int((n + 1.5 * math.sqrt(n) + 2) * spu))
    topup = max(2 * spu, n * spu // 8)
    consumed = 0
    while consumed < budget:
        z = gen.standard_normal(min(chunk, budget - consumed))
        kernel(z, sqrt_dt, spu, n, band, state_f, state_i, eps, bvals, exit_steps)
        consumed += z.size
        if state_i[1] >= n and state_i[0] >= n * spu:
            return eps, bvals, exit_steps * dt
        chunk = topup
        topup *= 2
    raise RareEventError(
        f"walk extraction incomplete after {budget} grid steps",
        diagnostics={
            "n": n, "dt": dt, "exits_completed": int(state_i[1]),
            "grid_steps": int(state_i[0]), "budget_steps": budget,
        },
    )


def skorokhod_couple(n: int, dt: float = 1e-4, src: RandomSource = None,
                     max_time_factor: float = 2.0):
    """Embed an n-step walk in a grid-simulated Brownian path.

    The walk's +/-1 steps are the successive first exits of [-1, +1] bands
    around the running level; the Gaussian path records the Brownian values
    at integer times.  The sign marginal is exactly iid symmetric; exit
    timing carries the O(sqrt(dt)) grid bias.

    Raises
    ------
    RareEventError
        If the walk fails to complete n exits within the safety budget of
        ``max_time_factor * n + 64`` time units.
    """
    if src is None:
        raise DomainError("a RandomSource is required")
    if not (0 < dt <= 1e-3):
        raise DomainError("grid resolution must satisfy 0 < dt <= 1e-3")
    if n < 1:
        raise DomainError("n must be positive")
    eps, bvals, _ = _skorokhod_paths(n, dt, src, rep_tag=0,
                                     max_time_factor=max_time_factor)
    S = np.concatenate([[0], np.cumsum(eps, dtype=np.int64)])
    return (WalkPath(values=S),
            GaussianPath(values=bvals, covariance_kind=CovarianceKind.WALK))


def skorokhod_max_deviations(n: int, reps: int, src: RandomSource,
                             dt: float = 1e-3) -> np.ndarray:
    out = np.empty(reps)
    for r in range(reps):
        eps, bvals, _ = _skorokhod_paths(n, dt, src, rep_tag=r)
        S = np.cumsum(eps, dtype=np.int64)
        out[r] = np.max(np.abs(S - bvals[1:]))
    return out


def scheme_max_deviations(scheme: str, n: int, reps: int, src: RandomSource,
                          dt: float = 1e-4, threads: int = 1) -> np.ndarray:
    if scheme == "kmt-recursive":
        return kmt_max_deviations(n, reps, src, threads=threads)
    if scheme == "skorokhod":
        return skorokhod_max_deviations(n, reps, src, dt=dt)
    if scheme == "independent":
        return independent_max_deviations(n, reps, src)
    raise DomainError(f"unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# Bootstrap utilities (deterministic: indices come from the stream)
# ---------------------------------------------------------------------------


def bootstrap_indices(src: RandomSource, n_items: int, n_boot: int) -> np.ndarray:
    u = src.uniform_block(0, n_boot * n_items).reshape(n_boot, n_items)
    return np.minimum((u * n_items).astype(np.int64), n_items - 1)


def bootstrap_quantile_se(values: np.ndarray, q: float, src: RandomSource,
                          n_boot: int = 200) -> float:
    idx = bootstrap_indices(src, values.size, n_boot)
    stats = np.quantile(values[idx], q, axis=1)
    return float(np.std(stats, ddof=1))


# ---------------------------------------------------------------------------
# Growth experiment
# ---------------------------------------------------------------------------


def _line_fit(x: np.ndarray, y: np.ndarray):
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid ** 2)))


def _log_deflator(n: np.ndarray) -> np.ndarray:
    """(log n)^{1/2} (loglog n)^{1/4}, the classical embedding log factors."""
    ln = np.log(np.maximum(n, 3.0))
    return np.sqrt(ln) * np.log(np.maximum(ln, 1.1)) ** 0.25


def run_deviation_experiment(plan: ExperimentPlan, threads: int = 1) -> GrowthFit:
    """Estimate deviation quantiles on the plan's n grid and fit their growth.

    For the recursive and independent schemes the medians are fit against
    log n and the trend interval is a bootstrap CI for the slope of
    median/log n regressed on log n (flat or falling means the log-n rate
    holds).  For the Skorokhod scheme the fit is a power law on log-log axes
    and the trend interval is a bootstrap CI for the exponent.
    """
    src = RandomSource(plan.seed).split("deviation").split(plan.scheme)
    n_values = plan.n_values
    reps = plan.replicates

    devs = []
    for n in n_values:
        devs.append(scheme_max_deviations(plan.scheme, n, reps,
                                          src.split(f"n{n}"), dt=plan.dt,
                                          threads=threads))
    medians = np.array([np.median(d) for d in devs])
    q90 = np.array([np.quantile(d, 0.9) for d in devs])
    q99 = np.array([np.quantile(d, 0.99) for d in devs])
    med_se = np.array([
        bootstrap_quantile_se(d, 0.5, src.split(f"boot{n}"))
        for n, d in zip(n_values, devs)
    ])

    logn = np.log(np.asarray(n_values, dtype=np.float64))
    n_boot = 200
    boot_meds = np.empty((n_boot, len(n_values)))
    for j, (n, d) in enumerate(zip(n_values, devs)):
        idx = bootstrap_indices(src.split(f"trend{n}"), d.size, n_boot)
        boot_meds[:, j] = np.median(d[idx], axis=1)

    if plan.scheme == "skorokhod":
        # The classical embedding rate is n^{1/4} (log n)^{1/2} (loglog n)^{1/4};
        # at desk scale the log factors alone add ~0.07 to a raw log-log
        # slope, so the power exponent is fit on medians deflated by the
        # known logarithmic factors (the raw slope is reported alongside).
        model = "power-law"
        deflator = _log_deflator(np.asarray(n_values, dtype=np.float64))
        expo, logc, rms = _line_fit(logn, np.log(medians / deflator))
        raw, _, _ = _line_fit(logn, np.log(medians))
        coefficients = (expo, math.exp(logc))
        slopes = np.array([
            _line_fit(logn, np.log(np.maximum(bm / deflator, 1e-12)))[0]
            for bm in boot_meds
        ])
        raw_slopes = np.array([
            _line_fit(logn, np.log(np.maximum(bm, 1e-12)))[0] for bm in boot_meds
        ])
        trend = {
            "exponent": expo,
            "exponent_ci": (float(np.quantile(slopes, 0.025)),
                            float(np.quantile(slopes, 0.975))),
            "exponent_raw": raw,
            "exponent_raw_ci": (float(np.quantile(raw_slopes, 0.025)),
                                float(np.quantile(raw_slopes, 0.975))),
        }
    else:
        model = "linear-in-log-n"
        c1, c2, rms = _line_fit(logn, medians)
        coefficients = (c1, c2)
        safe_logn = np.maximum(logn, math.log(2.0))
        ratios = boot_meds / safe_logn[None, :]
        slopes = np.array([_line_fit(safe_logn, r)[0] for r in ratios])
        slope, _, _ = _line_fit(safe_logn, medians / safe_logn)
        trend = {
            "ratio_slope": slope,
            "ratio_slope_ci": (float(np.quantile(slopes, 0.025)),
                               float(np.quantile(slopes, 0.975))),
        }

    # Exponential-tail screen at the largest n: the log-tail of deviations
    # beyond the median should fall on a line with negative slope.
    d = devs[-1]
    med = float(np.median(d))
    probs = np.array([0.4, 0.3, 0.2, 0.1, 0.05, 0.02])
    xs = np.quantile(d, 1.0 - probs) - med
    emp = np.array([max(float(np.mean(d >= med + x)), 0.5 / d.size) for x in xs])
    slope, intercept, _ = _line_fit(xs, np.log(emp))
    tail = {"n": n_values[-1], "x": xs.tolist(), "log_tail": np.log(emp).tolist(),
            "slope": slope, "intercept": intercept, "slope_negative": slope < 0.0}

    return GrowthFit(
        model=model, coefficients=coefficients, residual_rms=rms,
        n_values=n_values, medians=medians, q90=q90, q99=q99,
        median_se=med_se, trend=trend, tail=tail,
    )


def tail_linearity(n: int, replicates: int, src: RandomSource,
                   p_floor: float = 1e-3, p_head: float = 0.05,
                   n_boot: int = 200,
                   cfg: BridgeCouplingConfig = DEFAULT_CONFIG) -> dict:
    """Check the deviation log-tail against a linear fit with bootstrap bands.

    Samples the recursive coupling at one n, grids tail probabilities from
    ``p_head`` down to ``p_floor``, fits a line to the empirical log-tail
    (excesses over the median) by least squares weighted with the bootstrap
    variances, and reports whether the fitted line stays inside the
    pointwise bootstrap band at every grid point.

    The grid starts at ``p_head`` rather than at the median itself: the
    local slope of the log-tail drifts through the extreme-value head of
    the maximum's distribution and only settles into its exponential regime
    around tail probability 0.05 (measured at 1.5e5 replicates), while the
    decay claim being tested concerns the tail.  Between ``p_head`` and the
    default floor, 1.7 decades of probability remain under test.
    """
    devs = kmt_max_deviations(n, replicates, src.split("sample"), cfg=cfg)
    med = float(np.median(devs))
    probs = np.geomspace(p_head, p_floor, 10)
    xs = np.quantile(devs, 1.0 - probs) - med

    def log_tail(sample):
        counts = np.array([(sample >= med + x).mean() for x in xs])
        return np.log(np.maximum(counts, 0.5 / sample.size))

    emp = log_tail(devs)

    idx = bootstrap_indices(src.split("boot"), devs.size, n_boot)
    boot = np.stack([log_tail(devs[row]) for row in idx])
    lo_band = np.quantile(boot, 0.025, axis=0)
    hi_band = np.quantile(boot, 0.975, axis=0)

    weights = 1.0 / np.maximum(boot.var(axis=0, ddof=1), 1e-10)
    root_w = np.sqrt(weights)
    design = np.column_stack([xs, np.ones_like(xs)])
    coef, *_ = np.linalg.lstsq(design * root_w[:, None], emp * root_w,
                               rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    fit_line = design @ coef
    rms = float(np.sqrt(np.mean((emp - fit_line) ** 2)))

    inside = bool(np.all((fit_line >= lo_band) & (fit_line <= hi_band)))
    return {
        "n": n, "x": xs.tolist(), "log_tail": emp.tolist(),
        "slope": slope, "intercept": intercept, "residual_rms": rms,
        "band_low": lo_band.tolist(), "band_high": hi_band.tolist(),
        "within_bands": inside, "slope_negative": slope < 0.0,
    }


# ---------------------------------------------------------------------------
# Exponential max-moment of the pinned coupling
# ---------------------------------------------------------------------------


def _top_split_max_bound_gap(n: int, a: int, cfg: BridgeCouplingConfig,
                             src: RandomSource, reps: int) -> np.ndarray:
    """Pathwise deviation minus its top-split bound, per replicate.

    Negative values mean max_i |w_i - y_i| <= max(T_L, T_R) + T holds with
    room to spare; the bound is a triangle-inequality consequence of the
    construction, so positive values beyond float tolerance indicate a bug.
    """
    from .recursion import _top_split_diagnostics, pinned_paths_batch

    S, Y, k = pinned_paths_batch(n, a, cfg, src, reps)
    if k is None:
        raise DomainError("split diagnostics need n above the base-case cutoff")
    grid = np.arange(n + 1) * (a / n)
    dev = np.max(np.abs(S - grid[None, :] - Y), axis=1)
    tl, tr, t = _top_split_diagnostics(S, Y, a, k)
    return dev - (np.maximum(tl, tr) + t)


def pinned_max_deviations(n: int, a: int, reps: int, src: RandomSource,
                          cfg: BridgeCouplingConfig = DEFAULT_CONFIG) -> np.ndarray:
    """max_i |w_i - y_i| over draws of the pinned coupling at endpoint a."""
    from .recursion import pinned_paths_batch

    out = np.empty(reps)
    chunk = max(1, min(reps, _KMT_CHUNK_CELLS // (n + 1)))
    grid = np.arange(n + 1) * (a / n)
    for s0 in range(0, reps, chunk):
        s1 = min(s0 + chunk, reps)
        S, Y, _ = pinned_paths_batch(n, a, cfg, src.split(f"chunk{s0}"), s1 - s0)
        out[s0:s1] = np.max(np.abs(S - grid[None, :] - Y), axis=1)
    return out


def estimate_exp_max_moment(n: int, a: int, lambdas, replicates: int,
                            src: RandomSource,
                            cfg: BridgeCouplingConfig = DEFAULT_CONFIG) -> CouplingReport:
    """Monte-Carlo E exp(lambda * max_i |W_i - Z_i|) for the pinned coupling.

    Grid values above 0.5 are rejected (overflow guard); overflowing
    estimates at admissible grid points are flagged, not reported.  The
    derived table carries log-estimate / log n for growth-trend reading.
    """
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=np.float64))
    if np.any(lambdas < 0.0) or np.any(lambdas > 0.5):
        raise DomainError("lambda grid must lie in [0, 0.5]")
    if replicates < 1000:
        raise DomainError("need at least 1000 replicates")
    t0 = time.perf_counter()
    devs = pinned_max_deviations(n, a, replicates, src, cfg=cfg)

    estimates = np.empty(lambdas.shape)
    std_errors = np.empty(lambdas.shape)
    failed = np.zeros(lambdas.shape, dtype=bool)
    for i, lam in enumerate(lambdas):
        with np.errstate(over="ignore"):
            v = np.exp(lam * devs)
        if not np.all(np.isfinite(v)):
            failed[i] = True
            estimates[i] = np.nan
            std_errors[i] = np.nan
        else:
            estimates[i], std_errors[i] = _jackknife_mean_se(v)
    with np.errstate(invalid="ignore"):
        ratio = np.log(estimates) / math.log(max(n, 2))
    return CouplingReport(
        params=lambdas, estimates=estimates, std_errors=std_errors,
        replicates=replicates, seconds=time.perf_counter() - t0, failed=failed,
        derived={"log_estimate_over_log_n": ratio.tolist(), "n": n, "a": a},
    )


def exp_max_moment_endpoint_sweep(n: int, a_values, lam: float, replicates: int,
                                  src: RandomSource,
                                  cfg: BridgeCouplingConfig = DEFAULT_CONFIG) -> dict:
    """Fit log E exp(lam * max|W - Z|) against a^2/n over an endpoint sweep."""
    a_values = [int(a) for a in a_values]
    logs, ses = [], []
    for a in a_values:
        rep = estimate_exp_max_moment(n, a, [lam], replicates,
                                      src.split(f"a{a}"), cfg=cfg)
        if rep.failed[0]:
            raise EstimationError(f"overflow at endpoint {a}")
        logs.append(math.log(rep.estimates[0]))
        ses.append(rep.std_errors[0] / rep.estimates[0])
    x = np.array([a * a / n for a in a_values])
    slope, intercept, rms = _line_fit(x, np.array(logs))
    return {
        "n": n, "lambda": lam, "a_values": a_values,
        "log_estimates": logs, "log_se": ses,
        "slope": slope, "intercept": intercept, "residual_rms": rms,
        # smallest c consistent with log E <= const + c lam^2 a^2 / n
        "c_hat": slope / (lam * lam) if lam > 0 else float("nan"),
    }


# ---------------------------------------------------------------------------
# Exact and Monte-Carlo moment bounds
# ---------------------------------------------------------------------------


def exact_exp_square_moment(n: int, theta: float) -> float:
    """E exp(4 theta^2 S_n^2 / n) for the n-step walk sum, by enumeration."""
    if n < 1:
        raise DomainError("n must be positive")
    j = np.arange(n + 1)
    logw = log_path_count(np.full(n + 1, n), 2 * j - n) - n * math.log(2.0)
    s = 2 * j - n
    return float(np.sum(np.exp(logw + 4.0 * theta * theta * s * s / n)))


def exp_square_moment_bound(theta: float) -> float:
    """(1 - 16 theta^2)^{-1/2}, valid for 16 theta^2 < 1."""
    if 16.0 * theta * theta >= 1.0:
        raise DomainError("bound requires 16 theta^2 < 1")
    return 1.0 / math.sqrt(1.0 - 16.0 * theta * theta)


def mc_pinned_exp_moment(n: int, a: int, k: int, thetas, replicates: int,
                         src: RandomSource) -> dict:
    """MC check of E exp(theta W_k / sqrt(k)) <= exp(theta^2) under pinning.

    W_k = S_k - k a / n with S_k drawn from the exact conditional law (the
    distribution of a partial sum of exchangeably permuted fixed signs).
    """
    law = conditional_law(n, k, a)
    u = src.uniform_block(0, replicates)
    w = law.quantile(u) - law.conditional_mean
    thetas = np.atleast_1d(np.asarray(thetas, dtype=np.float64))
    est, ses = [], []
    for theta in thetas:
        v = np.exp(theta * w / math.sqrt(k))
        m, se = _jackknife_mean_se(v)
        est.append(m)
        ses.append(se)
    return {
        "thetas": thetas.tolist(), "estimates": est, "std_errors": ses,
        "bounds": [math.exp(t * t) for t in thetas],
    }


def mc_pinned_square_moment(n: int, a: int, k: int, alpha: float,
                            replicates: int, src: RandomSource) -> dict:
    """MC check of E exp(alpha S_k^2 / k) <= exp(1 + 3 alpha a^2 / (4n))."""
    if k > 2 * n / 3:
        raise DomainError("bound requires k <= 2n/3")
    law = conditional_law(n, k, a)
    u = src.uniform_block(0, replicates)
    s = law.quantile(u).astype(np.float64)
    v = np.exp(alpha * s * s / k)
    m, se = _jackknife_mean_se(v)
    return {
        "alpha": alpha, "estimate": m, "std_error": se,
        "bound": math.exp(1.0 + 3.0 * alpha * a * a / (4.0 * n)),
    }


# ---------------------------------------------------------------------------
# Shared goodness-of-fit routines
# ---------------------------------------------------------------------------


def signs_chi_square(increments: np.ndarray) -> float:
    """Chi-square p-value that +/-1 increment rows are iid symmetric signs.

    For n <= 12 the full 2^n pattern distribution is tested; for larger n
    the per-position sign frequencies are pooled.
    """
    inc = np.asarray(increments)
    if inc.ndim != 2 or np.any(np.abs(inc) != 1):
        raise DomainError("increments must be a (reps, n) array of +/-1")
    reps, n = inc.shape
    bits = (inc > 0).astype(np.int64)
    if n <= 12:
        codes = bits @ (1 << np.arange(n, dtype=np.int64))
        counts = np.bincount(codes, minlength=1 << n)
        expected = reps / (1 << n)
        stat = float(np.sum((counts - expected) ** 2) / expected)
        return float(chi2.sf(stat, (1 << n) - 1))
    ups = bits.sum(axis=0)
    stat = float(np.sum((2.0 * ups - reps) ** 2) / reps)
    return float(chi2.sf(stat, n))


def pinned_uniformity_chi_square(paths: np.ndarray, a: int) -> float:
    """Chi-square p-value that pinned lattice paths are uniform on A_a^n."""
    S = np.asarray(paths)
    reps, cols = S.shape
    n = cols - 1
    if n > 20:
        raise DomainError("pattern test supports n <= 20")
    inc = np.diff(S, axis=1)
    bits = (inc > 0).astype(np.int64)
    codes = bits @ (1 << np.arange(n, dtype=np.int64))
    counts = np.bincount(codes, minlength=1 << n)

    all_codes = np.arange(1 << n, dtype=np.int64)
    pop = np.zeros(all_codes.shape, dtype=np.int64)
    for b in range(n):
        pop += (all_codes >> b) & 1
    feasible = pop == (n + a) // 2
    if np.any(counts[~feasible] > 0):
        raise DomainError("observed a path outside the pinned set")
    cells = counts[feasible]
    if cells.size == 1:
        return 1.0
    expected = reps / cells.size
    stat = float(np.sum((cells - expected) ** 2) / expected)
    return float(chi2.sf(stat, cells.size - 1))
