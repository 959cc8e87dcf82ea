"""Dense two-phase tableau simplex.

Solves ``min c.x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq`` and
``x >= 0``. Pricing is Dantzig's rule with a switch to Bland's rule after a
run of degenerate pivots, which rules out cycling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

_STALL_PIVOTS = 50


@dataclass
class LPResult:
    x: np.ndarray | None
    fun: float
    status: str
    nit: int

    @property
    def success(self) -> bool:
        return self.status == OPTIMAL


_STATUS = (OPTIMAL, UNBOUNDED, ITERATION_LIMIT)


@nb.njit(cache=True, nogil=True)
def _pivot(T, basis, r, q):
    m1, w = T.shape
    piv = T[r, q]
    for k in range(w):
        T[r, k] /= piv
    for i in range(m1):
        if i == r:
            continue
        f = T[i, q]
        if f != 0.0:
            for k in range(w):
                T[i, k] -= f * T[r, k]
            T[i, q] = 0.0
    T[r, q] = 1.0
    basis[r] = q


@nb.njit(cache=True, nogil=True)
def _run(T, basis, n_cols, tol, max_iter, stall_pivots):
    """Optimize the last-row objective over the first ``n_cols`` columns.

    Returns ``(status, pivots)`` with status 0 optimal, 1 unbounded,
    2 iteration limit.
    """
    m = T.shape[0] - 1
    nit = 0
    stall = 0
    last_obj = T[m, -1]
    while True:
        q = -1
        if stall >= stall_pivots:
            for k in range(n_cols):
                if T[m, k] < -tol:
                    q = k
                    break
        else:
            best = -tol
            for k in range(n_cols):
                if T[m, k] < best:
                    best = T[m, k]
                    q = k
        if q < 0:
            return 0, nit
        r = -1
        best_ratio = np.inf
        for i in range(m):
            a = T[i, q]
            if a > tol:
                ratio = T[i, -1] / a
                if r < 0 or ratio < best_ratio - tol * max(1.0, abs(best_ratio)):
                    best_ratio = ratio
                    r = i
                elif ratio <= best_ratio + tol * max(1.0, abs(best_ratio)) and basis[i] < basis[r]:
                    # ties go to the smallest basic index
                    r = i
        if r < 0:
            return 1, nit
        if nit >= max_iter:
            return 2, nit
        _pivot(T, basis, r, q)
        nit += 1
        # objective row stores -z, so an increase is progress
        if T[m, -1] > last_obj + tol:
            stall = 0
            last_obj = T[m, -1]
        else:
            stall += 1


class _Tableau:
    def __init__(self, T: np.ndarray, basis: np.ndarray, tol: float):
        self.T = T
        self.basis = basis
        self.tol = tol
        self.nit = 0

    def pivot(self, r: int, q: int) -> None:
        _pivot(self.T, self.basis, r, q)

    def run(self, n_cols: int, max_iter: int) -> str:
        code, nit = _run(self.T, self.basis, n_cols, self.tol, max(0, max_iter - self.nit),
                         _STALL_PIVOTS)
        self.nit += nit
        return _STATUS[code]


def linprog(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, *,
            tol: float = 1e-9, max_iter: int = 100_000) -> LPResult:
    """Solve a linear program in inequality/equality form with ``x >= 0``."""
    c = np.asarray(c, dtype=np.float64)
    nv = c.size
    A_ub = np.zeros((0, nv)) if A_ub is None else np.asarray(A_ub, dtype=np.float64).reshape(-1, nv)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=np.float64).ravel()
    A_eq = np.zeros((0, nv)) if A_eq is None else np.asarray(A_eq, dtype=np.float64).reshape(-1, nv)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=np.float64).ravel()
    if len(b_ub) != len(A_ub) or len(b_eq) != len(A_eq):
        raise ValueError("constraint matrix and right-hand side lengths differ")

    m_ub, m_eq = len(A_ub), len(A_eq)
    m = m_ub + m_eq
    # columns: originals | slacks | artificials | rhs
    need_art = np.concatenate([b_ub < 0, np.ones(m_eq, dtype=bool)])
    n_art = int(need_art.sum())
    n_cols = nv + m_ub + n_art
    T = np.zeros((m + 1, n_cols + 1))
    T[:m_ub, :nv] = A_ub
    T[:m_ub, nv:nv + m_ub] = np.eye(m_ub)
    T[m_ub:m, :nv] = A_eq
    T[:m, -1] = np.concatenate([b_ub, b_eq])
    neg = T[:m, -1] < 0
    T[:m][neg] *= -1.0

    basis = np.empty(m, dtype=np.int64)
    art_rows = np.flatnonzero(need_art)
    basis[:m_ub] = nv + np.arange(m_ub)
    for k, i in enumerate(art_rows):
        T[i, nv + m_ub + k] = 1.0
        basis[i] = nv + m_ub + k
    tab = _Tableau(T, basis, tol)

    if n_art:
        T[-1, :] = 0.0
        T[-1, nv + m_ub:n_cols] = 1.0
        T[-1] -= T[art_rows].sum(axis=0)
        status = tab.run(n_cols, max_iter)
        if status == ITERATION_LIMIT:
            return LPResult(None, np.nan, status, tab.nit)
        scale = max(1.0, np.abs(T[:m, -1]).max(initial=0.0))
        if -T[-1, -1] > 1e3 * tol * scale:
            return LPResult(None, np.nan, INFEASIBLE, tab.nit)
        # drive zero-level artificials out of the basis; drop redundant rows
        keep = np.ones(m + 1, dtype=bool)
        for i in range(m):
            if tab.basis[i] >= nv + m_ub:
                row = T[i, :nv + m_ub]
                nz = np.flatnonzero(np.abs(row) > tol)
                if nz.size:
                    tab.pivot(i, int(nz[0]))
                else:
                    keep[i] = False
        nit_phase1 = tab.nit
        T = np.delete(T[keep], np.s_[nv + m_ub:n_cols], axis=1)
        tab = _Tableau(T, tab.basis[keep[:-1]], tol)
        n_cols = nv + m_ub
    else:
        nit_phase1 = 0

    T = tab.T
    cost = np.zeros(n_cols)
    cost[:nv] = c
    T[-1, :n_cols] = cost
    T[-1, -1] = 0.0
    T[-1] -= cost[tab.basis] @ T[:-1]
    status = tab.run(n_cols, max_iter)
    nit = nit_phase1 + tab.nit
    if status != OPTIMAL:
        return LPResult(None, np.nan, status, nit)
    x = np.zeros(n_cols)
    x[tab.basis] = T[:-1, -1]
    x = x[:nv]
    return LPResult(x=x, fun=float(c @ x), status=OPTIMAL, nit=nit)
