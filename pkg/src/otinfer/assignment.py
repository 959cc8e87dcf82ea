"""Discrete optimal transport between two n-point samples.

The transport value over plans ``pi`` with ``n * pi`` doubly stochastic is
attained at a permutation (Birkhoff), so it is computed as a linear
assignment problem with the Hungarian algorithm.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .errors import DimensionMismatch, Infeasible, TooLarge

INF = math.inf
BRUTE_FORCE_MAX_N = 9


@dataclass(frozen=True)
class TransportPlan:
    """Extreme-point solution: row ``i`` is matched to column ``permutation[i]``."""

    n: int
    permutation: np.ndarray
    value: float

    def matrix(self) -> np.ndarray:
        """The plan as an ``n x n`` matrix with entries ``0`` or ``1/n``."""
        pi = np.zeros((self.n, self.n))
        pi[np.arange(self.n), self.permutation] = 1.0 / self.n
        return pi


def as_cost_matrix(C) -> np.ndarray:
    """Validate and return ``C`` as a float64 square array (``inf`` allowed)."""
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DimensionMismatch(f"cost matrix must be square, got shape {C.shape}")
    if C.shape[0] < 1:
        raise DimensionMismatch("cost matrix must have n >= 1")
    if np.isnan(C).any():
        raise ValueError("cost matrix contains NaN")
    if (C < 0).any():
        raise ValueError("cost matrix entries must be nonnegative")
    return C


@nb.njit(cache=True, nogil=True)
def _hungarian(cost):
    # Shortest augmenting path with row/column potentials, O(n^3).
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, np.int64)
    way = np.zeros(n + 1, np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv[:] = np.inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    perm = np.empty(n, np.int64)
    for j in range(1, n + 1):
        perm[p[j] - 1] = j - 1
    return perm


def _plan(C: np.ndarray, perm: np.ndarray) -> TransportPlan:
    n = C.shape[0]
    entries = C[np.arange(n), perm]
    if np.isinf(entries).any():
        raise Infeasible("every permutation crosses an infinite-cost cell")
    return TransportPlan(n=n, permutation=perm, value=float(entries.sum()) / n)


def solve_assignment(C) -> TransportPlan:
    """Minimum of ``(1/n) sum_i C[i, sigma(i)]`` over permutations ``sigma``.

    Infinite entries are replaced by a sentinel larger than the cost of any
    all-finite permutation; the problem is infeasible iff the optimum still
    uses a sentinel cell.

    Raises
    ------
    DimensionMismatch
        ``C`` is not square.
    Infeasible
        No permutation has all-finite cost.
    """
    C = as_cost_matrix(C)
    n = C.shape[0]
    finite = np.isfinite(C)
    if finite.all():
        work = C
    else:
        top = float(C[finite].max()) if finite.any() else 0.0
        work = np.where(finite, C, 2.0 * (n * top + 1.0))
    return _plan(C, _hungarian(work))


def brute_force_assignment(C) -> TransportPlan:
    """Exhaustive minimum over all ``n!`` permutations (test oracle, n <= 9)."""
    C = as_cost_matrix(C)
    n = C.shape[0]
    if n > BRUTE_FORCE_MAX_N:
        raise TooLarge(f"brute force limited to n <= {BRUTE_FORCE_MAX_N}, got {n}")
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    totals = C[np.arange(n)[None, :], perms].sum(axis=1)
    best = int(np.argmin(totals))
    if not np.isfinite(totals[best]):
        raise Infeasible("every permutation crosses an infinite-cost cell")
    return _plan(C, perms[best])
