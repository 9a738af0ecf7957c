"""Exact conditional laws of the pinned walk and one-step quantile couplings.

The conditional distribution of the walk value S_k, given the endpoint
S_n = a, is a lattice law proportional to the product of path counts of the
two halves: counting n-step unit-increment paths from 0 to b gives
|A_b^n| = C(n, (n+b)/2), so

    P(S_k = s | S_n = a)  propto  |A_s^k| * |A_{a-s}^{n-k}|.

In up-step coordinates j = (s+k)/2 this is a hypergeometric law, which is
what the fast windowed inversion below exploits.

Couplings here are monotone quantile couplings: a single uniform u drives
both coordinates, the Gaussian via z = sigma * Phi^{-1}(u) (so z is exactly
Gaussian) and the walk via the conditional law's quantile function at u (so
the walk marginal is exact).  Ties at CDF jumps resolve to the lower support
point.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import gammaln

from .core import (
    CouplingReport,
    DomainError,
    RandomSource,
    standard_normal_quantile,
)

# ---------------------------------------------------------------------------
# Log-factorial table (grown on demand, shared by every lattice computation)
# ---------------------------------------------------------------------------

_LOGFACT = gammaln(np.arange(2, dtype=np.float64) + 1.0)


def _logfact(limit: int) -> np.ndarray:
    """Return a log-factorial table covering 0..limit inclusive."""
    global _LOGFACT
    if _LOGFACT.size <= limit:
        size = max(limit + 1, 2 * _LOGFACT.size)
        _LOGFACT = gammaln(np.arange(size, dtype=np.float64) + 1.0)
    return _LOGFACT


def log_path_count(n, b):
    """log |A_b^n|: log-count of n-step unit paths from 0 to b.

    Vectorized; returns -inf for infeasible (parity or range) endpoints.
    """
    n = np.asarray(n, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    lf = _logfact(int(n.max(initial=0)))
    feasible = (np.abs(b) <= n) & ((n - b) % 2 == 0)
    ups = np.where(feasible, (n + b) // 2, 0)
    out = np.where(
        feasible,
        lf[n] - lf[ups] - lf[n - ups],
        -np.inf,
    )
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Windowed exact quantile inversion for lattice laws
# ---------------------------------------------------------------------------
#
# The hypergeometric-type conditional pmf concentrates within a few standard
# deviations of its mean, so CDF inversion only ever needs a window around
# the mean.  A window of half-width 12*sigma + 24 (sigma the binomial proxy
# sqrt(k p (1-p)), which dominates the hypergeometric variance) carries all
# but less than e^-72 of the mass by Bennett's inequality; uniform variates
# have spacing 2^-53, so the windowed quantile agrees with the full-support
# quantile for every representable u.  When the window covers the support
# (always the case for short segments) the inversion is the plain exact one.
# Weights are built by the exact pmf ratio recurrence, so no special
# functions enter and the relative error stays near machine epsilon.

_WINDOW_SIGMAS = 12.0
_WINDOW_PAD = 24
_HQ_KERNEL = None


def _hq_kernel_compiled():
    global _HQ_KERNEL
    if _HQ_KERNEL is None:
        import numba

        @numba.njit(cache=True, nogil=True)
        def kernel(m, k, K, u, w_sig, pad, out):
            for r in range(m.shape[0]):
                mm = m[r]
                kk = k[r]
                KK = K[r]
                j_lo = KK - (mm - kk)
                if j_lo < 0:
                    j_lo = 0
                j_hi = kk if kk < KK else KK
                if j_hi <= j_lo:
                    out[r] = j_lo
                    continue
                p = KK / mm
                sig = math.sqrt(kk * p * (1.0 - p))
                half = int(w_sig * sig) + pad
                c = int(kk * p + 0.5)
                if c < j_lo:
                    c = j_lo
                elif c > j_hi:
                    c = j_hi
                w_lo = c - half
                if w_lo < j_lo:
                    w_lo = j_lo
                w_hi = c + half
                if w_hi > j_hi:
                    w_hi = j_hi
                # pass 1: window mass relative to the left edge
                w = 1.0
                tot = 1.0
                for j in range(w_lo + 1, w_hi + 1):
                    w *= ((kk - j + 1) * (KK - j + 1)) / (j * (mm - kk - KK + j))
                    tot += w
                # pass 2: first point whose partial sum reaches u * tot
                tgt = u[r] * tot
                w = 1.0
                cs = 1.0
                jj = w_lo
                while cs < tgt and jj < w_hi:
                    jj += 1
                    w *= ((kk - jj + 1) * (KK - jj + 1)) / (jj * (mm - kk - KK + jj))
                    cs += w
                out[r] = jj

        _HQ_KERNEL = kernel
    return _HQ_KERNEL


def _hypergeom_quantile(m, k, ups_total, u):
    """Quantile in up-step coordinates of the split-value law.

    Parameters are flat arrays: segment length ``m``, split ``k``, total
    up-step count ``ups_total`` = (m + a)/2, and uniform levels ``u``.
    Returns j with 2j - k the walk value at the split.  Ties at CDF jumps
    resolve to the lower point.
    """
    m = np.ascontiguousarray(m, dtype=np.int64)
    k = np.ascontiguousarray(k, dtype=np.int64)
    K = np.ascontiguousarray(ups_total, dtype=np.int64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    out = np.empty(u.shape, dtype=np.int64)
    kernel = _hq_kernel_compiled()
    kernel(m, k, K, u, _WINDOW_SIGMAS, _WINDOW_PAD, out)
    return out


def _binomial_quantile(n: int, u) -> np.ndarray:
    """Quantile of Binomial(n, 1/2) in up-step coordinates at levels ``u``."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    lf = _logfact(n)
    sigma = 0.5 * math.sqrt(n)
    half = int(math.ceil(_WINDOW_SIGMAS * sigma)) + _WINDOW_PAD
    center = n // 2
    w_lo = max(0, center - half)
    w_hi = min(n, center + half)
    j = np.arange(w_lo, w_hi + 1, dtype=np.int64)
    logw = lf[n] - lf[j] - lf[n - j]
    w = np.exp(logw - logw.max())
    cs = np.cumsum(w)
    idx = np.searchsorted(cs, u * cs[-1], side="left")
    return w_lo + np.minimum(idx, j.size - 1)


# ---------------------------------------------------------------------------
# Conditional law of the pinned walk at a split point
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionalWalkLaw:
    """Exact pmf of S_k given S_n = a for the simple random walk.

    ``support`` holds the feasible values s (parity of k, reachable from both
    ends), ``pmf`` the matching probabilities, and ``log_path_counts`` the
    left-half log-counts log |A_s^k|.
    """

    n: int
    k: int
    a: int
    support: np.ndarray
    pmf: np.ndarray
    log_path_counts: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=np.int64)
        p = np.asarray(self.pmf, dtype=np.float64)
        if s.shape != p.shape or s.ndim != 1 or s.size == 0:
            raise DomainError("support and pmf must be matching 1-d arrays")
        if abs(float(p.sum()) - 1.0) > 1e-12:
            raise DomainError("pmf must sum to 1")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "pmf", p)
        object.__setattr__(
            self, "log_path_counts", np.asarray(self.log_path_counts, dtype=np.float64)
        )

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.pmf)
        c[-1] = 1.0
        return c

    @property
    def sigma(self) -> float:
        """Std deviation of the coupled Gaussian: sqrt(k(n-k)/n)."""
        return math.sqrt(self.k * (self.n - self.k) / self.n)

    @property
    def conditional_mean(self) -> float:
        return self.k * self.a / self.n

    def quantile(self, u) -> np.ndarray:
        """Lowest support point whose CDF reaches ``u`` (ties to the lower point)."""
        u = np.asarray(u, dtype=np.float64)
        idx = np.searchsorted(self.cdf, u, side="left")
        idx = np.minimum(idx, self.support.size - 1)
        return self.support[idx]


def conditional_law(n: int, k: int, a: int) -> ConditionalWalkLaw:
    """Exact conditional law of S_k given S_n = a, via log path counts."""
    if n < 2 or not (1 <= k < n):
        raise DomainError(f"need 1 <= k < n, got k={k}, n={n}")
    if abs(a) > n or (n - a) % 2 != 0:
        raise DomainError(f"endpoint a={a} infeasible for an {n}-step walk")
    s_lo = max(-k, a - (n - k))
    s_hi = min(k, a + (n - k))
    if s_lo > s_hi:
        raise DomainError(f"empty conditional support for (n={n}, k={k}, a={a})")
    support = np.arange(s_lo, s_hi + 1, 2, dtype=np.int64)
    left = log_path_count(np.full(support.shape, k), support)
    right = log_path_count(np.full(support.shape, n - k), a - support)
    logw = left + right
    w = np.exp(logw - logw.max())
    pmf = w / w.sum()
    return ConditionalWalkLaw(n=n, k=k, a=a, support=support, pmf=pmf, log_path_counts=left)


# ---------------------------------------------------------------------------
# One-step quantile couplings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoupledPair:
    """One draw of a quantile coupling: lattice value, Gaussian value, centered value."""

    s: int
    z: float
    w: float


def binomial_couple_batch(n: int, src: RandomSource, reps: int, counter_start: int = 0):
    """Vectorized draws of the (S_n, Z_n) quantile coupling.

    Returns (s, z) arrays: s is the centered binomial sum 2*Bin(n,1/2) - n
    and z ~ N(0, n) exactly, both driven by one uniform per replicate.
    """
    if n < 1:
        raise DomainError("n must be positive")
    u = src.uniform_block(counter_start, reps)
    z = math.sqrt(n) * standard_normal_quantile(u)
    s = 2 * _binomial_quantile(n, u) - n
    return s, z


def conditional_couple_batch(law: ConditionalWalkLaw, src: RandomSource, reps: int,
                             counter_start: int = 0):
    """Vectorized draws of the pinned-walk split coupling for a fixed law.

    Returns (s, z, w): s from the conditional law's quantile, z Gaussian with
    variance k(n-k)/n, w = s - k*a/n.
    """
    u = src.uniform_block(counter_start, reps)
    z = law.sigma * standard_normal_quantile(u)
    s = law.quantile(u)
    w = s - law.conditional_mean
    return s, z, w


def quantile_couple_binomial(n: int, src: RandomSource) -> CoupledPair:
    """One monotone quantile coupling of S_n (simple random walk sum) with N(0, n)."""
    s, z = binomial_couple_batch(n, src, 1)
    return CoupledPair(s=int(s[0]), z=float(z[0]), w=float(s[0]))


def quantile_couple_conditional(law: ConditionalWalkLaw, src: RandomSource) -> CoupledPair:
    """One monotone quantile coupling of S_k | S_n = a with N(0, k(n-k)/n)."""
    s, z, w = conditional_couple_batch(law, src, 1)
    return CoupledPair(s=int(s[0]), z=float(z[0]), w=float(w[0]))


# ---------------------------------------------------------------------------
# Exponential-moment estimation
# ---------------------------------------------------------------------------


def _jackknife_mean_se(values: np.ndarray) -> tuple:
    """Mean and jackknife standard error (leave-one-out, exact for the mean)."""
    m = values.size
    mean = float(values.mean())
    if m < 2:
        return mean, 0.0
    se = math.sqrt(float(np.sum((values - mean) ** 2)) / (m * (m - 1)))
    return mean, se


def exp_moment_estimate(
    coupler: str,
    n: int,
    k: int | None,
    a: int | None,
    thetas,
    replicates: int,
    src: RandomSource,
) -> CouplingReport:
    """Monte-Carlo estimate of E exp(theta * |coupling gap|) on a theta grid.

    ``coupler`` selects the gap: ``"binomial"`` uses |S_n - Z_n| from the
    unconditioned coupling, ``"conditional"`` uses |W_k - Z_k| from the
    pinned coupling at split k with endpoint a.  Overflowing grid points are
    flagged as failed rather than reported as numbers.
    """
    if replicates < 1000:
        raise DomainError("need at least 1000 replicates")
    thetas = np.atleast_1d(np.asarray(thetas, dtype=np.float64))
    t0 = time.perf_counter()
    if coupler == "binomial":
        s, z = binomial_couple_batch(n, src, replicates)
        gap = np.abs(s - z)
    elif coupler == "conditional":
        if k is None or a is None:
            raise DomainError("conditional coupler needs both k and a")
        law = conditional_law(n, k, a)
        s, z, w = conditional_couple_batch(law, src, replicates)
        gap = np.abs(w - z)
    else:
        raise DomainError(f"unknown coupler {coupler!r}")

    estimates = np.empty(thetas.shape)
    std_errors = np.empty(thetas.shape)
    failed = np.zeros(thetas.shape, dtype=bool)
    for i, theta in enumerate(thetas):
        with np.errstate(over="ignore"):
            v = np.exp(theta * gap)
        if not np.all(np.isfinite(v)):
            failed[i] = True
            estimates[i] = np.nan
            std_errors[i] = np.nan
            continue
        estimates[i], std_errors[i] = _jackknife_mean_se(v)
    return CouplingReport(
        params=thetas,
        estimates=estimates,
        std_errors=std_errors,
        replicates=replicates,
        seconds=time.perf_counter() - t0,
        failed=failed,
    )
