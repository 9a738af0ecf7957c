"""Recursive coupling of a pinned walk with a Gaussian bridge, and extensions.

The construction: a segment of length m with endpoint increment a is split at
k; one quantile coupling draws the walk's split value s together with a
Gaussian z of variance k(m-k)/m; the two halves are then built recursively
from independent streams.  The Gaussian side telescopes into a midpoint
construction -- each node adds its z on top of the linear interpolation of
its endpoint values, which reproduces exactly the tilt decomposition

    Y_i = Z_i + (i/k) Z        (left half)
    Y_i = Z'_{i-k} + ((n-i)/(n-k)) Z    (right half)

so the y-marginal is an exact Gaussian bridge with Cov(Y_i, Y_j) =
(i^j)(n - (i v j))/n, while the walk marginal is exactly uniform over the
pinned path set.  Segments at or below the base-case cutoff keep the same
exact marginals but decouple the two sides (independent driving uniforms).

The recursion is executed level-synchronously over numpy arrays rather than
node by node: all segments of one depth are processed in a single vectorized
step, with one draw counter per (replicate, heap index, slot).  This keeps
the total work O(n), the depth O(log n), and the output bit-identical under
any execution order or thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    CovarianceKind,
    DomainError,
    GaussianPath,
    PinnedCoupling,
    RandomSource,
    WalkPath,
    standard_normal_quantile,
)
from .onestep import _binomial_quantile, _hypergeom_quantile

_MAX_N = 1 << 28
_MAX_REPS = (1 << 30) - 1

# Counter layout: (replicate << 34) | (heap index << 2) | slot.
_SLOT_SPLIT = 0  # drives the quantile coupling at a split (z and s together)
_SLOT_WALK = 1  # drives the walk side alone on decoupled (base-case) segments


@dataclass(frozen=True)
class BridgeCouplingConfig:
    """Tuning of the recursive construction.

    ``base_case_cutoff`` is the segment length at and below which the walk
    and Gaussian sides are sampled independently (both still with their exact
    marginal laws).  ``split_rule`` maps a segment length to its split index;
    None means floor(m/2).  For segments above the cutoff the split must stay
    within the middle third, m/3 <= k <= 2m/3.
    """

    base_case_cutoff: int = 2
    split_rule: Callable[[int], int] | None = None

    def __post_init__(self):
        if self.base_case_cutoff < 1:
            raise DomainError("base_case_cutoff must be >= 1")

    def splits(self, lengths: np.ndarray, enforce_middle: bool) -> np.ndarray:
        if self.split_rule is None:
            return lengths // 2
        out = np.empty_like(lengths)
        for m in np.unique(lengths):
            k = int(self.split_rule(int(m)))
            if not (1 <= k < m):
                raise DomainError(f"split rule gave k={k} outside 1..{m - 1}")
            if enforce_middle and m > self.base_case_cutoff:
                if not (m / 3 <= k <= 2 * m / 3):
                    raise DomainError(
                        f"split rule gave k={k} outside the middle third of m={m}"
                    )
            out[lengths == m] = k
        return out


DEFAULT_CONFIG = BridgeCouplingConfig()


@dataclass(frozen=True)
class BlockSchedule:
    """Doubling block layout for the infinite-horizon coupling.

    Block ends are the doubling sequence 4, 16, 256, 65536, ... clipped to
    the horizon; block r covers (end_{r-1}, end_r] and has length
    ``lengths[r-1]``.
    """

    boundaries: tuple
    lengths: tuple

    def __post_init__(self):
        if len(self.boundaries) != len(self.lengths) or not self.boundaries:
            raise DomainError("schedule needs matching, nonempty boundaries and lengths")
        prev = 0
        for b, l in zip(self.boundaries, self.lengths):
            if b <= prev or l != b - prev:
                raise DomainError("boundaries must increase and match lengths")
            prev = b

    @property
    def horizon(self) -> int:
        return self.boundaries[-1]

    @classmethod
    def for_horizon(cls, horizon: int) -> "BlockSchedule":
        if horizon < 1:
            raise DomainError("horizon must be >= 1")
        bounds, lengths = [], []
        prev, r = 0, 1
        while prev < horizon:
            end = min(2 ** (2 ** r), horizon)
            bounds.append(end)
            lengths.append(end - prev)
            prev = end
            r += 1
        return cls(boundaries=tuple(bounds), lengths=tuple(lengths))


# ---------------------------------------------------------------------------
# Vectorized level-synchronous sampler
# ---------------------------------------------------------------------------


def _counters(rep_shift: np.ndarray, heap: np.ndarray, slot: int) -> np.ndarray:
    return rep_shift | (heap.astype(np.uint64) << np.uint64(2)) | np.uint64(slot)


def pinned_paths_batch(n: int, endpoints, cfg: BridgeCouplingConfig,
                       src: RandomSource, reps: int):
    """Sample ``reps`` coupled (lattice path, Gaussian bridge) pairs at once.

    ``endpoints`` is a scalar or a (reps,)-shaped integer array of walk
    endpoints (parity n, magnitude <= n).  Returns (S, Y, k_top): an int64
    array of shape (reps, n+1) of walk values, a float64 array of bridge
    values, and the top split index (None when n <= the base-case cutoff).
    """
    if not (1 <= n <= _MAX_N):
        raise DomainError(f"n must be in 1..{_MAX_N}")
    if not (1 <= reps <= _MAX_REPS):
        raise DomainError("bad replicate count")
    a = np.broadcast_to(np.asarray(endpoints, dtype=np.int64), (reps,))
    if np.any(np.abs(a) > n) or np.any((n - a) % 2 != 0):
        raise DomainError(f"endpoint infeasible for an {n}-step walk")

    S = np.zeros((reps, n + 1), dtype=np.int64)
    Y = np.zeros((reps, n + 1), dtype=np.float64)
    S[:, n] = a

    rep_shift = (np.arange(reps, dtype=np.uint64) << np.uint64(34))[:, None]
    k_top = None

    # Current level of segments (shared geometry across replicates).
    lo = np.array([0], dtype=np.int64)
    hi = np.array([n], dtype=np.int64)
    heap = np.array([1], dtype=np.int64)
    coupled = np.array([n > cfg.base_case_cutoff])

    while lo.size:
        m = hi - lo
        keep = m >= 2
        lo, hi, heap, coupled, m = lo[keep], hi[keep], heap[keep], coupled[keep], m[keep]
        if not lo.size:
            break

        k = np.empty_like(m)
        if np.any(coupled):
            k[coupled] = cfg.splits(m[coupled], enforce_middle=True)
        if np.any(~coupled):
            k[~coupled] = m[~coupled] // 2
        mid = lo + k
        if k_top is None and coupled.size and bool(coupled[0]) and lo[0] == 0 and hi[0] == n:
            k_top = int(k[0])

        # Gaussian side: one z per segment with variance k(m-k)/m, added to
        # the linear interpolation of the segment's endpoint values.
        u_z = src.uniforms(_counters(rep_shift, heap[None, :], _SLOT_SPLIT))
        sigma = np.sqrt(k * (m - k) / m)
        z = sigma[None, :] * standard_normal_quantile(u_z)
        y_lo = Y[:, lo]
        Y[:, mid] = y_lo + (k / m)[None, :] * (Y[:, hi] - y_lo) + z

        # Walk side: split value from the exact conditional law.  Coupled
        # segments reuse u_z (monotone quantile coupling); decoupled segments
        # draw their own uniform.
        u_s = u_z
        if np.any(~coupled):
            u_walk = src.uniforms(_counters(rep_shift, heap[None, :], _SLOT_WALK))
            u_s = np.where(coupled[None, :], u_z, u_walk)
        a_seg = S[:, hi] - S[:, lo]
        ups = (m[None, :] + a_seg) >> 1
        flat = _hypergeom_quantile(
            np.broadcast_to(m[None, :], u_s.shape).ravel(),
            np.broadcast_to(k[None, :], u_s.shape).ravel(),
            ups.ravel(),
            u_s.ravel(),
        )
        s = 2 * flat.reshape(u_s.shape) - k[None, :]
        S[:, mid] = S[:, lo] + s

        # Children stay coupled only while their own length exceeds the
        # cutoff; once decoupled, a whole subtree stays decoupled.
        new_coupled = np.concatenate(
            [coupled & (k > cfg.base_case_cutoff),
             coupled & ((m - k) > cfg.base_case_cutoff)]
        )
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
        heap = np.concatenate([2 * heap, 2 * heap + 1])
        coupled = new_coupled

    return S, Y, k_top


def _top_split_diagnostics(S: np.ndarray, Y: np.ndarray, a, k: int):
    """Per-replicate (T_L, T_R, T) at the top split of the recursion."""
    n = S.shape[1] - 1
    a = np.broadcast_to(np.asarray(a, dtype=np.float64), (S.shape[0],))
    i = np.arange(n + 1, dtype=np.float64)
    s_k = S[:, k].astype(np.float64)
    z_k = Y[:, k]

    t = np.abs(s_k - k * a / n - z_k)
    left = i[: k + 1] / k
    tl = np.max(
        np.abs(S[:, : k + 1] - left[None, :] * s_k[:, None]
               - (Y[:, : k + 1] - left[None, :] * z_k[:, None])),
        axis=1,
    )
    j = i[k:] - k
    frac = j / (n - k)
    tail = 1.0 - frac
    tr = np.max(
        np.abs(S[:, k:] - s_k[:, None] - frac[None, :] * (a[:, None] - s_k[:, None])
               - (Y[:, k:] - tail[None, :] * z_k[:, None])),
        axis=1,
    )
    return tl, tr, t


def sample_pinned_coupling(n: int, a: int, cfg: BridgeCouplingConfig = DEFAULT_CONFIG,
                           src: RandomSource = None) -> PinnedCoupling:
    """One coupled (centered pinned walk, Gaussian bridge) draw at endpoint a.

    The walk marginal is exactly uniform over n-step unit paths from 0 to a;
    the Gaussian marginal is an exact mean-zero bridge.  The diagnostic
    fields record the top-split quantities whose combination bounds the
    pathwise distance on every draw of length n > 2.
    """
    if src is None:
        raise DomainError("a RandomSource is required")
    S, Y, k_top = pinned_paths_batch(n, a, cfg, src, 1)
    grid = np.arange(n + 1, dtype=np.float64)
    w = S[0] - grid * (a / n)
    w[0] = 0.0
    w[n] = 0.0
    if k_top is None:
        return PinnedCoupling(w=w, y=Y[0], a=a)
    tl, tr, t = _top_split_diagnostics(S, Y, a, k_top)
    return PinnedCoupling(
        w=w, y=Y[0], a=a,
        diag_tl=float(tl[0]), diag_tr=float(tr[0]), diag_t=float(t[0]),
    )


def walk_paths_batch(n: int, cfg: BridgeCouplingConfig, src: RandomSource, reps: int):
    """Sample ``reps`` coupled (walk, Gaussian walk) pairs; arrays (reps, n+1).

    Walk endpoints come from the binomial quantile coupling driven by the
    heap-0 counter; the pinned construction then fills the interior, and the
    bridge is tilted by (i/n) z so the Gaussian side has walk covariance
    (Cov = i^j) and shares its endpoint with the top coupling exactly.
    """
    rep_shift = np.arange(reps, dtype=np.uint64) << np.uint64(34)
    u0 = src.uniforms(rep_shift)  # heap 0, slot 0
    z_top = math.sqrt(n) * standard_normal_quantile(u0)
    s_top = 2 * _binomial_quantile(n, u0) - n
    S, Y, _ = pinned_paths_batch(n, s_top, cfg, src, reps)
    grid = np.arange(n + 1, dtype=np.float64) / n
    Y = Y + grid[None, :] * z_top[:, None]
    Y[:, 0] = 0.0
    Y[:, n] = z_top
    return S, Y


def sample_walk_coupling(n: int, cfg: BridgeCouplingConfig = DEFAULT_CONFIG,
                         src: RandomSource = None):
    """One coupled (simple random walk, Gaussian walk) pair of length n."""
    if src is None:
        raise DomainError("a RandomSource is required")
    S, Y = walk_paths_batch(n, cfg, src, 1)
    return WalkPath(values=S[0]), GaussianPath(values=Y[0], covariance_kind=CovarianceKind.WALK)


def infinite_paths_batch(horizon: int, cfg: BridgeCouplingConfig,
                         src: RandomSource, reps: int):
    """Blockwise coupled paths valid simultaneously for all lengths <= horizon.

    Independent block couplings on the doubling schedule are concatenated
    with cumulative shifts; each block uses its own child stream, so a
    longer horizon extends a shorter one without disturbing shared blocks.
    """
    schedule = BlockSchedule.for_horizon(horizon)
    S = np.zeros((reps, horizon + 1), dtype=np.int64)
    Y = np.zeros((reps, horizon + 1), dtype=np.float64)
    start = 0
    for r, (end, length) in enumerate(zip(schedule.boundaries, schedule.lengths), start=1):
        Sb, Yb = walk_paths_batch(length, cfg, src.split(f"block{r}"), reps)
        S[:, start + 1:end + 1] = S[:, start][:, None] + Sb[:, 1:]
        Y[:, start + 1:end + 1] = Y[:, start][:, None] + Yb[:, 1:]
        start = end
    return S, Y


def sample_infinite_coupling(horizon: int, cfg: BridgeCouplingConfig = DEFAULT_CONFIG,
                             src: RandomSource = None):
    """One coupled (walk, Gaussian walk) pair serving all lengths <= horizon."""
    if src is None:
        raise DomainError("a RandomSource is required")
    S, Y = infinite_paths_batch(horizon, cfg, src, 1)
    return WalkPath(values=S[0]), GaussianPath(values=Y[0], covariance_kind=CovarianceKind.WALK)


def max_deviation(walk, gauss) -> float:
    """Largest pointwise distance between the two coupled paths."""
    w = walk.values if isinstance(walk, WalkPath) else np.asarray(walk, dtype=np.float64)
    g = gauss.values if isinstance(gauss, GaussianPath) else np.asarray(gauss, dtype=np.float64)
    if w.shape != g.shape:
        raise DomainError("paths must have equal length")
    return float(np.max(np.abs(w - g)))
