"""Dynamic time warping: exact distance and the multiscale FastDTW approximation.

The cost function is the absolute difference between aligned points (squared
cost is available as an option). Sequences of unequal length are accepted
everywhere. All functions are pure and thread-safe.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit

from .errors import InvalidInput

__all__ = ["DtwMode", "DtwParams", "dtw_exact", "dtw_fast", "dtw_distance"]


class DtwMode(Enum):
    EXACT = "exact"
    FAST = "fast"


@dataclass(frozen=True)
class DtwParams:
    """FastDTW refinement radius and exact/fast mode selector."""

    radius: int = 10
    mode: DtwMode = DtwMode.FAST
    squared: bool = False

    def __post_init__(self):
        if self.radius < 0:
            raise InvalidInput("radius must be non-negative")


def _as_seq(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInput(f"{name} must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} must contain only finite values")
    return arr


@njit(cache=True)
def _dist_only(a, b, squared):
    # Two-row DP over the full matrix; returns the cumulative corner cost.
    n = a.shape[0]
    m = b.shape[0]
    prev = np.empty(m)
    curr = np.empty(m)
    d = a[0] - b[0]
    prev[0] = d * d if squared else abs(d)
    for j in range(1, m):
        d = a[0] - b[j]
        prev[j] = prev[j - 1] + (d * d if squared else abs(d))
    for i in range(1, n):
        d = a[i] - b[0]
        curr[0] = prev[0] + (d * d if squared else abs(d))
        for j in range(1, m):
            d = a[i] - b[j]
            c = d * d if squared else abs(d)
            best = prev[j]
            if prev[j - 1] < best:
                best = prev[j - 1]
            if curr[j - 1] < best:
                best = curr[j - 1]
            curr[j] = c + best
        tmp = prev
        prev = curr
        curr = tmp
    return prev[m - 1]


@njit(cache=True)
def _windowed_with_path(a, b, lo, hi, squared):
    # DP restricted to columns lo[i]..hi[i] per row, then backtracking.
    # (0, 0) and (n-1, m-1) are always inside the window by construction.
    n = a.shape[0]
    m = b.shape[0]
    inf = np.inf
    cost = np.full((n, m), inf)
    for i in range(n):
        for j in range(lo[i], hi[i] + 1):
            d = a[i] - b[j]
            c = d * d if squared else abs(d)
            if i == 0 and j == 0:
                cost[i, j] = c
                continue
            best = inf
            if i > 0 and cost[i - 1, j] < best:
                best = cost[i - 1, j]
            if i > 0 and j > 0 and cost[i - 1, j - 1] < best:
                best = cost[i - 1, j - 1]
            if j > 0 and cost[i, j - 1] < best:
                best = cost[i, j - 1]
            if best < inf:
                cost[i, j] = c + best
    path = np.empty((n + m, 2), dtype=np.int64)
    k = 0
    i = n - 1
    j = m - 1
    path[k, 0] = i
    path[k, 1] = j
    k += 1
    while i > 0 or j > 0:
        best = inf
        bi = i
        bj = j
        if i > 0 and j > 0 and cost[i - 1, j - 1] <= best:
            best = cost[i - 1, j - 1]
            bi = i - 1
            bj = j - 1
        if i > 0 and cost[i - 1, j] < best:
            best = cost[i - 1, j]
            bi = i - 1
            bj = j
        if j > 0 and cost[i, j - 1] < best:
            best = cost[i, j - 1]
            bi = i
            bj = j - 1
        i = bi
        j = bj
        path[k, 0] = i
        path[k, 1] = j
        k += 1
    return cost[n - 1, m - 1], path[:k][::-1].copy()


def _full_window(n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.zeros(n, dtype=np.int64),
        np.full(n, m - 1, dtype=np.int64),
    )


def _half(x: np.ndarray) -> np.ndarray:
    # Average adjacent pairs; an odd trailing point is dropped and recovered
    # by the window projection below.
    k = len(x) - len(x) % 2
    return (x[0:k:2] + x[1:k:2]) / 2.0


@njit(cache=True)
def _project_window(path, n, m, radius):
    # Map a coarse warp path onto the finer grid as per-row column bounds:
    # each coarse cell expands to its (2r+1)^2 neighborhood, doubled to the
    # finer resolution. Rows/columns past the projected coverage (possible
    # when a length was odd) inherit the final bounds so the corner cell
    # stays reachable.
    lo = np.full(n, m, dtype=np.int64)
    hi = np.full(n, -1, dtype=np.int64)
    for p in range(path.shape[0]):
        ci = path[p, 0]
        cj = path[p, 1]
        i0 = max(2 * (ci - radius), 0)
        i1 = min(2 * (ci + radius) + 1, n - 1)
        j0 = max(2 * (cj - radius), 0)
        j1 = min(2 * (cj + radius) + 1, m - 1)
        for i in range(i0, i1 + 1):
            if j0 < lo[i]:
                lo[i] = j0
            if j1 > hi[i]:
                hi[i] = j1
    last = n - 1
    while last >= 0 and hi[last] < 0:
        last -= 1
    for i in range(last + 1, n):
        lo[i] = lo[last]
        hi[i] = m - 1
    hi[n - 1] = m - 1
    return lo, hi


def _fastdtw(a: np.ndarray, b: np.ndarray, radius: int, squared: bool):
    min_size = radius + 2
    if len(a) <= min_size or len(b) <= min_size:
        lo, hi = _full_window(len(a), len(b))
        return _windowed_with_path(a, b, lo, hi, squared)
    _, coarse_path = _fastdtw(_half(a), _half(b), radius, squared)
    lo, hi = _project_window(coarse_path, len(a), len(b), radius)
    return _windowed_with_path(a, b, lo, hi, squared)


def dtw_exact(a, b, squared: bool = False) -> float:
    """Exact DTW distance under the standard three-step recurrence."""
    a = _as_seq(a, "a")
    b = _as_seq(b, "b")
    return float(_dist_only(a, b, squared))


def dtw_fast(a, b, params: DtwParams = DtwParams()) -> float:
    """FastDTW: coarsen by two, project the warp path, refine within ``radius``.

    Equals ``dtw_exact`` whenever ``radius >= max(len(a), len(b))``; otherwise
    it is an upper bound on the exact distance.
    """
    a = _as_seq(a, "a")
    b = _as_seq(b, "b")
    dist, _ = _fastdtw(a, b, params.radius, params.squared)
    return float(dist)


def dtw_distance(a, b, params: DtwParams) -> float:
    """Dispatch on ``params.mode``."""
    if params.mode is DtwMode.EXACT:
        return dtw_exact(a, b, params.squared)
    return dtw_fast(a, b, params)
