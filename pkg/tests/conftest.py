import numpy as np
import pytest

from strongcoupling.core import RandomSource


@pytest.fixture
def src():
    return RandomSource(20250809)


def enumerate_pinned_paths(n: int):
    """All n-step unit paths grouped by endpoint, as an increments matrix.

    Returns (S, codes): S is the (2^n, n+1) matrix of partial sums over every
    sign vector, codes the matching bit encodings.  Brute force on purpose:
    this is the enumeration oracle the samplers are checked against.
    """
    codes = np.arange(1 << n, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(n)[None, :]) & 1
    steps = 2 * bits - 1
    S = np.concatenate(
        [np.zeros((1 << n, 1), dtype=np.int64), np.cumsum(steps, axis=1)], axis=1
    )
    return S, codes


def exhaustive_conditional_pmf(n: int, k: int, a: int):
    """pmf of S_k given S_n = a by explicit path enumeration."""
    S, _ = enumerate_pinned_paths(n)
    rows = S[:, n] == a
    vals, counts = np.unique(S[rows, k], return_counts=True)
    return vals, counts / counts.sum()

