"""Pure numpy/scipy implementations of the hot kernels.

These define the reference behaviour; the compiled module must agree with
them to round-off.
"""
import numpy as np
from scipy.linalg import solve_banded


def solve_tridiagonal(lower, diag, upper, rhs):
    """Solve a tridiagonal system.

    ``lower[i]`` multiplies ``x[i-1]`` in row ``i`` (``lower[0]`` ignored) and
    ``upper[i]`` multiplies ``x[i+1]`` (``upper[-1]`` ignored).
    """
    n = len(diag)
    ab = np.empty((3, n))
    ab[0, 1:] = upper[:-1]
    ab[0, 0] = 0.0
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    ab[2, -1] = 0.0
    return solve_banded((1, 1), ab, rhs, check_finite=False)


def clearing_scan(sell, buy, mo_buy, mo_sell, ref_index):
    """Best clearing level over dense per-tick volume arrays.

    Returns ``(index, matched, surplus, side)`` where ``side`` is +1 when the
    surplus is on the sell side, -1 on the buy side and 0 when balanced.
    ``index`` is -1 when no occupied level has positive matched volume.
    """
    sell = np.asarray(sell, dtype=np.int64)
    buy = np.asarray(buy, dtype=np.int64)
    supply = np.cumsum(sell) + mo_sell
    demand = np.cumsum(buy[::-1])[::-1] + mo_buy
    matched = np.minimum(supply, demand)
    occupied = (sell > 0) | (buy > 0)
    if not occupied.any():
        return -1, 0, 0, 0
    idx = np.flatnonzero(occupied)
    m = matched[idx]
    best = m.max()
    if best <= 0:
        return -1, 0, 0, 0
    idx = idx[m == best]
    surplus = np.abs(supply[idx] - demand[idx])
    idx = idx[surplus == surplus.min()]
    dist = np.abs(idx - ref_index)
    i = int(idx[dist == dist.min()].min())
    diff = int(supply[i] - demand[i])
    return i, int(matched[i]), abs(diff), (diff > 0) - (diff < 0)


def rescaled_range(X):
    """Rescaled range ``R_t/S_t`` for ``t = 1..L`` on each row of ``X``.

    ``X`` has shape ``(days, L+1)`` with ``X[:, 0]`` the origin.  ``S_t`` uses
    the running sum of squared one-step increments.  Entries with ``S_t = 0``
    are NaN.
    """
    X = np.asarray(X, dtype=float)
    X = X - X[:, :1]
    days, n1 = X.shape
    L = n1 - 1
    Z = np.cumsum(np.diff(X, axis=1) ** 2, axis=1)
    out = np.empty((days, L))
    for t in range(1, L + 1):
        s = np.arange(1, t + 1) / t
        Y = X[:, 1:t + 1] - s * X[:, t:t + 1]
        R = Y.max(axis=1) - Y.min(axis=1)
        S2 = Z[:, t - 1] / t - (X[:, t] / t) ** 2
        with np.errstate(invalid="ignore", divide="ignore"):
            out[:, t - 1] = np.where(S2 > 0, R / np.sqrt(np.where(S2 > 0, S2, 1.0)), np.nan)
    return out
