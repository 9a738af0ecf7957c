"""Shared domain types, deterministic random streams, and report containers.

Everything downstream (conditional laws, couplings, the recursive bridge
construction, the verification harness) builds on three primitives defined
here:

* ``RandomSource`` -- a splittable, counter-based random stream.  A source is
  an immutable value identified by ``(seed, path)``; splitting appends a
  branch label and re-keys.  Draws are pure functions of (source, counter),
  so samplers built on top are deterministic and order-independent, which is
  what makes replicate-level parallelism reproducible.
* ``standard_normal_quantile`` -- the inverse standard normal CDF, computed
  by a rational approximation polished with one Newton step against the
  double-precision normal CDF.  Quantile couplings at large n probe tail
  probabilities near 1e-10, so tail accuracy matters here.
* path/coupling containers (``WalkPath``, ``GaussianPath``,
  ``PinnedCoupling``, ``CouplingReport``) with validated invariants.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.special import ndtr


class DomainError(ValueError):
    """Inputs violate an operation's contract (domain, parity, feasibility)."""


class EstimationError(RuntimeError):
    """A numerical estimate (quadrature, Monte Carlo) failed to converge."""


# ---------------------------------------------------------------------------
# Inverse standard normal CDF
# ---------------------------------------------------------------------------

_SQRT_2PI = 2.5066282746310005024

# Rational approximation coefficients (Wichura's PPND16 scheme): central
# region in r = q^2, two tail regions in r = sqrt(-log(p)).
_PPND_A = (
    3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
    1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
    3.3430575583588128105e4, 2.5090809287301226727e3,
)
_PPND_B = (
    1.0, 4.2313330701600911252e1, 6.8718700749205790830e2,
    5.3941960214247511077e3, 2.1213794301586595867e4, 3.9307895800092710610e4,
    2.8729085735721942674e4, 5.2264952788528545610e3,
)
_PPND_C = (
    1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
    3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
    2.27238449892691845833e-2, 7.74545014278341407640e-4,
)
_PPND_D = (
    1.0, 2.05319162663775882187e0, 1.67638483018380384940e0,
    6.89767334985100004550e-1, 1.48103976427480074590e-1, 1.51986665636164571966e-2,
    5.47593808499534494600e-4, 1.05075007164441684324e-9,
)
_PPND_E = (
    6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
    2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
    2.71155556874348757815e-5, 2.01033439929228813265e-7,
)
_PPND_F = (
    1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1,
    1.48753612908506148525e-2, 7.86869131145613259100e-4, 1.84631831751005468180e-5,
    1.42151175831644588870e-7, 2.04426310338993978564e-15,
)


def _poly(coeffs: tuple, x: np.ndarray) -> np.ndarray:
    out = np.full_like(x, coeffs[-1])
    for c in coeffs[-2::-1]:
        out = out * x + c
    return out


def _ppnd16(p: np.ndarray) -> np.ndarray:
    """Rational approximation to the standard normal quantile, p in (0, 1)."""
    q = p - 0.5
    out = np.empty_like(p)

    central = np.abs(q) <= 0.425
    if np.any(central):
        r = 0.180625 - q[central] * q[central]
        out[central] = q[central] * _poly(_PPND_A, r) / _poly(_PPND_B, r)

    tail = ~central
    if np.any(tail):
        pt = np.where(q[tail] < 0.0, p[tail], 1.0 - p[tail])
        r = np.sqrt(-np.log(pt))
        near = r <= 5.0
        val = np.empty_like(r)
        val[near] = _poly(_PPND_C, r[near] - 1.6) / _poly(_PPND_D, r[near] - 1.6)
        val[~near] = _poly(_PPND_E, r[~near] - 5.0) / _poly(_PPND_F, r[~near] - 5.0)
        out[tail] = np.where(q[tail] < 0.0, -val, val)
    return out


def standard_normal_quantile(p):
    """Inverse CDF of the standard normal distribution.

    Accurate to well below 1e-9 absolute error for p in [1e-12, 1 - 1e-12]:
    the rational approximation is polished by one Newton step against the
    double-precision normal CDF, evaluated on the lower half-plane where the
    CDF is computed with full relative accuracy.

    Raises
    ------
    DomainError
        If any p lies outside the open interval (0, 1).
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.size and (np.any(~np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0)):
        raise DomainError("probabilities must lie strictly inside (0, 1)")
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)

    # Work with q = min(p, 1-p) so Newton's residual never cancels: for
    # p >= 0.5 the subtraction 1 - p is exact (Sterbenz) and ndtr is
    # relatively accurate on the negative axis.
    flip = arr > 0.5
    q = np.where(flip, 1.0 - arr, arr)
    x = _ppnd16(q)

    safe = x > -36.0  # below this, pdf underflow makes Newton useless
    if np.any(safe):
        xs = x[safe]
        pdf = np.exp(-0.5 * xs * xs) / _SQRT_2PI
        x[safe] = xs - (ndtr(xs) - q[safe]) / pdf

    out = np.where(flip, -x, x)
    return float(out[0]) if scalar else out


def normal_cdf(x):
    """Standard normal CDF (double precision, relatively accurate in the lower tail)."""
    return ndtr(x)


# ---------------------------------------------------------------------------
# Splittable counter-based random streams
# ---------------------------------------------------------------------------

_MIX_M1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_U64_ONE = np.uint64(1)


def _mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, vectorized over uint64 arrays."""
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * _MIX_M1
        x = (x ^ (x >> np.uint64(27))) * _MIX_M2
        return x ^ (x >> np.uint64(31))


@dataclass(frozen=True)
class RandomSource:
    """An immutable random stream identified by a 64-bit seed and a branch path.

    The (seed, path) pair is hashed into keys for two counter-based draw
    mechanisms:

    * ``uniforms(counters)`` maps explicit 64-bit counters to uniforms via a
      keyed SplitMix-style hash.  Random-access: any counter can be evaluated
      in any order, which lets tree-structured samplers assign one counter
      per node and stay deterministic under any evaluation schedule.
    * ``bulk_generator(tag)`` returns a numpy Philox generator keyed off the
      same hash, for long sequential blocks of draws.

    Splitting appends a label to the path and re-keys, so sibling streams are
    statistically independent and every stream is reproducible from its
    (seed, path) coordinates alone.
    """

    seed: int
    path: tuple = ()

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)):
            raise DomainError("seed must be an integer")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise DomainError("seed must fit in 64 bits")
        object.__setattr__(self, "path", tuple(str(x) for x in self.path))

    @cached_property
    def _digest(self) -> bytes:
        h = hashlib.sha256()
        h.update(b"strongcoupling.stream")
        h.update(int(self.seed).to_bytes(8, "little"))
        for label in self.path:
            raw = label.encode("utf-8")
            h.update(len(raw).to_bytes(4, "little"))
            h.update(raw)
        return h.digest()

    @cached_property
    def _keys(self) -> tuple:
        d = self._digest
        lo = np.uint64(int.from_bytes(d[0:8], "little"))
        hi = np.uint64(int.from_bytes(d[8:16], "little"))
        pk = (int.from_bytes(d[16:24], "little"), int.from_bytes(d[24:32], "little"))
        return lo, hi, pk

    def split(self, label) -> "RandomSource":
        """Child stream for the given branch label."""
        return RandomSource(self.seed, self.path + (str(label),))

    def uniforms(self, counters) -> np.ndarray:
        """Uniform(0,1) variates at explicit counters (pure, random-access).

        Values lie strictly inside (0, 1) with spacing 2^-53.
        """
        key_lo, key_hi, _ = self._keys
        c = np.asarray(counters, dtype=np.uint64)
        with np.errstate(over="ignore"):
            state = (c + _U64_ONE) * _GOLDEN + key_lo
            v = _mix64(_mix64(state) ^ key_hi)
        return ((v >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)

    def uniform_block(self, start: int, count: int) -> np.ndarray:
        """Uniforms at counters start, start+1, ..., start+count-1."""
        return self.uniforms(np.arange(start, start + count, dtype=np.uint64))

    def normals(self, counters) -> np.ndarray:
        """Standard normal variates at explicit counters (inverse-CDF transform)."""
        return standard_normal_quantile(self.uniforms(counters))

    def bulk_generator(self, tag: int = 0) -> np.random.Generator:
        """Philox generator for long sequential draw blocks, keyed by ``tag``."""
        _, _, pk = self._keys
        t = _mix64(np.uint64(int(tag) & 0xFFFFFFFFFFFFFFFF))
        key = np.array([np.uint64(pk[0]) ^ t, np.uint64(pk[1])], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def label(self) -> str:
        """Human-readable stream coordinates, e.g. ``7:growth/kmt/rep=3``."""
        return f"{self.seed}:{'/'.join(self.path)}"


def split_rng(src: RandomSource, label) -> RandomSource:
    """Derive the child stream of ``src`` for the given branch label."""
    return src.split(label)


# ---------------------------------------------------------------------------
# Path and coupling containers
# ---------------------------------------------------------------------------


class CovarianceKind(Enum):
    BRIDGE = "bridge"
    WALK = "walk"


@dataclass(frozen=True)
class WalkPath:
    """Integer lattice path S_0..S_n with S_0 = 0 and unit steps."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int64)
        if v.ndim != 1 or v.size < 2:
            raise DomainError("walk path needs at least one step")
        if v[0] != 0:
            raise DomainError("walk path must start at 0")
        if np.any(np.abs(np.diff(v)) != 1):
            raise DomainError("walk increments must be +/-1")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size - 1

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)


@dataclass(frozen=True)
class GaussianPath:
    """Real-valued path with either bridge or walk covariance structure."""

    values: np.ndarray
    covariance_kind: CovarianceKind = CovarianceKind.BRIDGE

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise DomainError("gaussian path needs at least one step")
        if v[0] != 0.0:
            raise DomainError("gaussian path must start at 0")
        if self.covariance_kind is CovarianceKind.BRIDGE and v[-1] != 0.0:
            raise DomainError("bridge paths must end at 0 exactly")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size - 1


@dataclass(frozen=True)
class PinnedCoupling:
    """A coupled (centered pinned walk, Gaussian bridge) pair on one draw.

    ``w[i] = S_i - i*a/n`` for a lattice path S pinned to S_n = a, and ``y``
    is the coupled Gaussian vector with bridge covariance.  The diagnostic
    fields record, for the top split of the recursive construction, the two
    half-interval maxima and the split-point discrepancy whose combination
    dominates the pathwise distance; they are zero when n <= 2.
    """

    w: np.ndarray
    y: np.ndarray
    a: int
    diag_tl: float = 0.0
    diag_tr: float = 0.0
    diag_t: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if w.shape != y.shape or w.ndim != 1 or w.size < 2:
            raise DomainError("w and y must be 1-d arrays of equal length >= 2")
        if w[0] != 0.0 or w[-1] != 0.0:
            raise DomainError("centered pinned walk must vanish at both ends")
        if min(self.diag_tl, self.diag_tr, self.diag_t) < 0.0:
            raise DomainError("split diagnostics must be nonnegative")
        n = w.size - 1
        lattice = w + np.arange(n + 1) * (self.a / n)
        rounded = np.rint(lattice)
        if np.max(np.abs(lattice - rounded)) > 1e-8:
            raise DomainError("w does not recover an integer lattice path")
        steps = np.diff(rounded.astype(np.int64))
        if np.any(np.abs(steps) != 1):
            raise DomainError("recovered lattice path must have unit steps")
        if n > 2:
            bound = max(self.diag_tl, self.diag_tr) + self.diag_t
            if float(np.max(np.abs(w - y))) > bound + 1e-9:
                raise DomainError("pathwise distance exceeds its split bound")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.w.size - 1

    def lattice_path(self) -> np.ndarray:
        """Recover the integer path S_i = w_i + i*a/n."""
        n = self.n
        return np.rint(self.w + np.arange(n + 1) * (self.a / n)).astype(np.int64)


@dataclass(frozen=True)
class CouplingReport:
    """Monte-Carlo estimates over a parameter grid, with jackknife errors."""

    params: np.ndarray
    estimates: np.ndarray
    std_errors: np.ndarray
    replicates: int
    seconds: float
    failed: np.ndarray = None
    derived: dict = field(default_factory=dict)

    def __post_init__(self):
        params = np.asarray(self.params, dtype=np.float64)
        est = np.asarray(self.estimates, dtype=np.float64)
        se = np.asarray(self.std_errors, dtype=np.float64)
        failed = self.failed
        if failed is None:
            failed = np.zeros(params.shape, dtype=bool)
        failed = np.asarray(failed, dtype=bool)
        if not (params.shape == est.shape == se.shape == failed.shape):
            raise DomainError("report arrays must share one shape")
        if self.replicates < 1:
            raise DomainError("replicates must be positive")
        ok = ~failed
        if np.any(~np.isfinite(est[ok])) or np.any(~np.isfinite(se[ok])):
            raise DomainError("estimates and standard errors must be finite")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "estimates", est)
        object.__setattr__(self, "std_errors", se)
        object.__setattr__(self, "failed", failed)
