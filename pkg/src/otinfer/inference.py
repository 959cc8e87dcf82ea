"""Optimal-transport test statistics, critical values and the membership test.

Sample conventions: the latent sample on stream 0 supplies the rows of every
cost matrix for a given parameter (the statistic and all its critical
statistics), while stream ``s`` in ``1..S`` supplies the simulated outcomes
of critical draw ``s``. The parameter-free outer test reads the same streams
through the parameter-free quantile map.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .assignment import INF, solve_assignment
from .errors import BudgetExceeded, DimensionMismatch, Infeasible, MaxIterations
from .latent import STAT_STREAM, LatentSample, latent_sample
from .model import Dataset, MetricConfig, ModelSpec, Theta, covariate_distances
from .simplex import linprog

NCX_BUDGET = 10**6
CX_TOL = 1e-8
CX_MAX_ITER = 500


def critical_rank(S: int, alpha: float) -> int:
    """Rank ``ceil(S (1 - alpha))`` of the order statistic used as critical value."""
    if S < 1:
        raise ValueError(f"S must be >= 1, got {S}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    # guard against 0.95 * 100 = 95.00000000000001 style rounding
    return max(1, math.ceil(round(S * (1.0 - alpha), 9)))


def order_statistic(values, S: int, alpha: float) -> float:
    return float(np.sort(np.asarray(values, dtype=np.float64))[critical_rank(S, alpha) - 1])


def required_successes(S: int, alpha: float) -> int:
    """Smallest count of ``T_n <= T'^s`` events meaning ``T_n`` is at most the critical order statistic."""
    return S - critical_rank(S, alpha) + 1


# ---------------------------------------------------------------------------
# statistic

def _check_pair(data: Dataset, latent: LatentSample) -> None:
    if data.n != latent.n:
        raise DimensionMismatch(f"{data.n} observations but {latent.n} latent draws")


def build_cost_matrix(data: Dataset, latent: LatentSample, theta: Theta, model: ModelSpec,
                      m: MetricConfig = MetricConfig(), star: bool = False) -> np.ndarray:
    """``C[i, j] = d((U_i, X_i), Gamma_u(Y_j, X_j))``, ``inf`` for empty sections."""
    _check_pair(data, latent)
    C = model.section_distances(latent.u_tilde, data.y, data.x, theta, star=star)
    if m.lambda_x:
        C = C + m.lambda_x * covariate_distances(data.x)
    return C


def _assignment_value(C: np.ndarray) -> float:
    try:
        return solve_assignment(C).value
    except Infeasible:
        return INF


def test_statistic(data: Dataset, latent: LatentSample, theta: Theta, model: ModelSpec,
                   m: MetricConfig = MetricConfig()) -> float:
    """Assignment value of the cost matrix; ``Infeasible`` if every plan hits an empty section."""
    return solve_assignment(build_cost_matrix(data, latent, theta, model, m)).value


# ---------------------------------------------------------------------------
# critical-value statistics

@dataclass(eq=False)
class ColumnChoiceSet:
    """Candidate cost columns, ``columns[j]`` has shape ``(k_j, n)``."""

    columns: list[np.ndarray]
    outcomes: list[list]
    empty: np.ndarray

    @property
    def n(self) -> int:
        return len(self.columns)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(c) for c in self.columns], dtype=np.int64)

    @property
    def any_empty(self) -> bool:
        return bool(self.empty.any())

    def n_selections(self) -> int:
        return math.prod(int(k) for k in self.sizes)

    def assemble(self, selection) -> np.ndarray:
        """Cost matrix whose column ``j`` is candidate ``selection[j]``."""
        C = np.empty((self.n, self.n))
        for j, k in enumerate(selection):
            C[:, j] = self.columns[j][k]
        return C

    def max_matrix(self) -> np.ndarray:
        """Elementwise maximum over candidates, column by column."""
        return np.stack([c.max(axis=0) for c in self.columns], axis=1)


def choices_from_columns(columns, outcomes=None) -> ColumnChoiceSet:
    """Build a choice set from raw candidate columns, deduplicating exact repeats."""
    cols, outs = [], []
    n = len(columns)
    for j, cand in enumerate(columns):
        cand = np.asarray(cand, dtype=np.float64).reshape(-1, n)
        ys = list(outcomes[j]) if outcomes is not None else list(range(len(cand)))
        first = []
        for k in range(len(cand)):
            if not any(np.array_equal(cand[k], cand[f]) for f in first):
                first.append(k)
        cols.append(cand[first])
        outs.append([ys[k] for k in first])
    empty = np.array([len(c) == 0 for c in cols], dtype=bool)
    return ColumnChoiceSet(columns=cols, outcomes=outs, empty=empty)


def column_choices(latent_prime: LatentSample, latent: LatentSample, X, theta: Theta,
                   model: ModelSpec, m: MetricConfig = MetricConfig(),
                   star: bool = False) -> ColumnChoiceSet:
    """One cost column per outcome predicted at ``(U'_j, X_j)``.

    ``c_j(y)[i]`` is the distance from ``(U_i, X_i)`` to the latent section
    of ``(y, X_j)`` plus the covariate term. Columns with identical distance
    vectors are merged.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if latent_prime.n != n or latent.n != n:
        raise DimensionMismatch("latent samples and covariates differ in length")
    preds = model.predict_rows(latent_prime.u_tilde, X, theta, star=star)
    owner = np.array([j for j, ys in enumerate(preds) for _ in ys], dtype=np.int64)
    flat_y = [y for ys in preds for y in ys]
    if flat_y:
        D = model.section_distances(latent.u_tilde, np.array(flat_y), X[owner], theta, star=star)
        if m.lambda_x:
            D = D + m.lambda_x * covariate_distances(X)[:, owner]
    else:
        D = np.zeros((n, 0))
    columns, start = [], 0
    for ys in preds:
        columns.append(D[:, start:start + len(ys)].T)
        start += len(ys)
    return choices_from_columns(columns, preds)


def maximizing_selection(choices: ColumnChoiceSet,
                         budget: int = NCX_BUDGET) -> tuple[float, np.ndarray]:
    """Selection with the largest assignment value, by exhaustive enumeration.

    Ties go to the first selection in lexicographic order.
    """
    if choices.any_empty:
        raise ValueError("a column has no candidates")
    total = choices.n_selections()
    if total > budget:
        raise BudgetExceeded(f"{total} selections exceed budget {budget}")
    sizes = choices.sizes
    multi = np.flatnonzero(sizes > 1)
    sel = np.zeros(choices.n, dtype=np.int64)
    C = choices.assemble(sel)
    best, best_sel = -INF, sel.copy()
    for combo in itertools.product(*(range(sizes[j]) for j in multi)):
        for j, k in zip(multi, combo):
            C[:, j] = choices.columns[j][k]
            sel[j] = k
        v = _assignment_value(C)
        if v > best:
            best, best_sel = v, sel.copy()
    return best, best_sel


def ncx_critical_stat(choices: ColumnChoiceSet, budget: int = NCX_BUDGET) -> float:
    """Maximum assignment value over every per-column selection (exhaustive)."""
    if choices.any_empty:
        return INF
    return maximizing_selection(choices, budget)[0]


@dataclass
class MinMaxResult:
    """Certified bracket ``lower <= T' <= upper`` for the convexified statistic."""

    lower: float
    upper: float
    iterations: int
    converged: bool
    #: ``True`` when an early-stop threshold settled the comparison
    decided: bool = False
    #: best single-selection assignment value seen (a lower bound on the max-min value)
    ncx_lower: float = -INF
    master_history: list[float] = field(default_factory=list)
    upper_history: list[float] = field(default_factory=list)

    @property
    def value(self) -> float:
        return 0.5 * (self.lower + self.upper) if self.converged else math.nan

    @property
    def gap(self) -> float:
        return self.upper - self.lower


class _Master:
    """Epigraph LP over ``P = n * pi`` (doubly stochastic) and ``t``."""

    def __init__(self, n: int):
        self.n = n
        nv = n * n + 1
        A = np.zeros((2 * n - 1, nv))
        for i in range(n):
            A[i, i * n:(i + 1) * n] = 1.0
        for j in range(n - 1):  # last column sum is implied
            A[n + j, j:n * n:n] = 1.0
        self.A_eq = A
        self.b_eq = np.ones(2 * n - 1)
        self.c = np.zeros(nv)
        self.c[-1] = 1.0
        self.cuts: list[np.ndarray] = []

    def add(self, C: np.ndarray) -> None:
        self.cuts.append(np.concatenate([C.ravel() / self.n, [-1.0]]))

    def solve(self) -> tuple[float, np.ndarray]:
        res = linprog(self.c, np.array(self.cuts), np.zeros(len(self.cuts)),
                      self.A_eq, self.b_eq)
        if not res.success:
            raise RuntimeError(f"master LP failed: {res.status}")
        P = np.clip(res.x[:-1], 0.0, None).reshape(self.n, self.n)
        return res.fun, P


def _best_response(choices: ColumnChoiceSet, P: np.ndarray) -> tuple[np.ndarray, float]:
    n = choices.n
    sel = np.empty(n, dtype=np.int64)
    total = 0.0
    for j, cand in enumerate(choices.columns):
        v = cand @ P[:, j]
        k = int(np.argmax(v))
        sel[j] = k
        total += v[k]
    return sel, total / n


def _perm_plan(n: int, perm: np.ndarray) -> np.ndarray:
    P = np.zeros((n, n))
    P[np.arange(n), perm] = 1.0
    return P


def cx_critical_stat(choices: ColumnChoiceSet, tol: float = CX_TOL,
                     early_stop_threshold: float | None = None,
                     max_iter: int = CX_MAX_ITER,
                     time_limit: float | None = None) -> MinMaxResult:
    """Convexified statistic ``min_pi sum_j max_y <pi_j, c_j(y)>`` by cutting plane.

    Each iteration solves the epigraph master LP over the cost matrices
    collected so far (a lower bound) and then assembles the per-column best
    response to the master plan (an upper bound and the next cut). With
    ``early_stop_threshold`` the loop returns as soon as the bracket lies
    entirely on one side of the threshold, flagged ``decided``.
    """
    if choices.n == 0:
        raise ValueError("empty choice set")
    if choices.any_empty:
        return MinMaxResult(INF, INF, 0, True)
    n = choices.n
    thr = early_stop_threshold

    def settled(lo: float, hi: float) -> bool:
        return thr is not None and (lo >= thr or hi < thr)

    # permutation plans give f(pi) = <pi, C_max>, so D_n(C_max) bounds from above
    Cmax = choices.max_matrix()
    upper_plan = solve_assignment(Cmax)
    upper = upper_plan.value
    if (choices.sizes == 1).all():
        return MinMaxResult(upper, upper, 1, True, decided=thr is not None,
                            ncx_lower=upper, master_history=[upper], upper_history=[upper])

    deadline = None if time_limit is None else time.monotonic() + time_limit
    master = _Master(n)
    # first cut: best response to the C_max-optimal permutation
    sel, _ = _best_response(choices, _perm_plan(n, upper_plan.permutation))
    C = choices.assemble(sel)
    plan = solve_assignment(C)
    lower = ncx_lower = plan.value
    P = _perm_plan(n, plan.permutation)  # optimal master plan for a single cut
    master.add(C)
    res = MinMaxResult(lower, upper, 1, False, ncx_lower=ncx_lower,
                       master_history=[lower], upper_history=[upper])
    it = 1
    while True:
        sel, f = _best_response(choices, P)
        upper = min(upper, f)
        res.upper, res.lower, res.iterations = upper, lower, it
        res.upper_history.append(f)
        if upper - lower <= tol:
            res.converged = True
            res.decided = thr is not None
            return res
        if settled(lower, upper):
            res.decided = True
            return res
        if it >= max_iter or (deadline is not None and time.monotonic() > deadline):
            raise MaxIterations(f"cutting plane stopped after {it} iterations "
                                f"with gap {upper - lower:.3g}", result=res)
        C = choices.assemble(sel)
        v = _assignment_value(C)
        if v > ncx_lower:
            ncx_lower = res.ncx_lower = v
            if thr is not None and v >= thr:
                # a single selection already reaches the threshold
                res.lower = max(lower, v)
                res.decided = True
                return res
        master.add(C)
        t, P = master.solve()
        res.master_history.append(t)
        lower = max(lower, t)
        it += 1


# ---------------------------------------------------------------------------
# membership test

@dataclass
class TestDecision:
    """Outcome of the Monte Carlo membership test at one parameter value.

    ``tau[s]`` records ``T_n <= T'^s``; the parameter is accepted when
    ``T_n`` does not exceed the order statistic of rank ``ceil(S (1-alpha))``
    of the critical statistics, which is a count condition on ``tau``.
    """

    __test__ = False

    t_n: float
    tau: np.ndarray
    accept: bool
    s_evaluated: int
    alpha: float
    #: draws left at tau = 0 because the iteration or time budget ran out
    undecided: int = 0
    #: draws where the ncx oracle exceeded its budget and cx was used instead
    ncx_fallbacks: int = 0

    @property
    def S(self) -> int:
        return len(self.tau)

    @property
    def tau_fraction(self) -> float:
        return float(self.tau.mean())

    def accept_at(self, alpha: float) -> bool:
        return accept_rule(self.t_n, self.tau, alpha)


def accept_rule(t_n: float, tau: np.ndarray, alpha: float) -> bool:
    if not math.isfinite(t_n):
        return False
    return int(np.count_nonzero(tau)) >= required_successes(len(tau), alpha)


def critical_tau(t_n: float, choices: ColumnChoiceSet, method: str = "cx",
                 tol: float = CX_TOL, max_iter: int = CX_MAX_ITER,
                 time_limit: float | None = None,
                 ncx_budget: int = NCX_BUDGET) -> tuple[bool, bool, bool]:
    """Decide ``t_n <= T'`` for one critical draw.

    Returns ``(tau, undecided, ncx_fallback)``.
    """
    if method == "ncx":
        try:
            return t_n <= ncx_critical_stat(choices, ncx_budget), False, False
        except BudgetExceeded:
            tau, undecided, _ = critical_tau(t_n, choices, "cx", tol, max_iter, time_limit)
            return tau, undecided, True
    if method != "cx":
        raise ValueError(f"unknown method {method!r}")
    try:
        r = cx_critical_stat(choices, tol, early_stop_threshold=t_n, max_iter=max_iter,
                             time_limit=time_limit)
    except MaxIterations as exc:
        r = exc.result
        if r.lower >= t_n:
            return True, False, False
        if r.upper < t_n:
            return False, False, False
        return False, True, False
    if r.lower >= t_n:
        return True, False, False
    if r.upper < t_n:
        return False, False, False
    # converged with t_n inside a bracket narrower than tol
    return t_n <= r.upper, False, False


def mc_membership_test(data: Dataset, theta: Theta, model: ModelSpec,
                       m: MetricConfig = MetricConfig(), S: int = 100, alpha: float = 0.05,
                       seed: int = 0, method: str = "cx", *, tol: float = CX_TOL,
                       max_iter: int = CX_MAX_ITER, time_cap: float | None = None,
                       ncx_budget: int = NCX_BUDGET) -> TestDecision:
    """Monte Carlo test of whether ``theta`` belongs to the confidence region.

    Stream 0 of ``seed`` gives the latent rows, streams ``1..S`` the simulated
    outcomes of the critical draws. Once ``time_cap`` seconds have elapsed,
    remaining draws keep ``tau = 0``.
    """
    critical_rank(S, alpha)
    X = data.x
    base = latent_sample(seed, STAT_STREAM, X, theta.theta2, model)
    C = build_cost_matrix(data, base, theta, model, m)
    t_n = _assignment_value(C)
    tau = np.zeros(S, dtype=bool)
    if not math.isfinite(t_n):
        return TestDecision(t_n, tau, False, 0, alpha)
    start = time.monotonic()
    undecided = fallbacks = evaluated = 0
    for s in range(1, S + 1):
        remaining = None
        if time_cap is not None:
            remaining = time_cap - (time.monotonic() - start)
            if remaining <= 0:
                break
        if t_n == 0.0:
            tau[s - 1] = True  # every critical statistic is nonnegative
        else:
            prime = latent_sample(seed, s, X, theta.theta2, model)
            choices = column_choices(prime, base, X, theta, model, m)
            tau[s - 1], und, fb = critical_tau(t_n, choices, method, tol, max_iter,
                                               remaining, ncx_budget)
            undecided += und
            fallbacks += fb
        evaluated += 1
    undecided += S - evaluated
    return TestDecision(t_n=t_n, tau=tau, accept=accept_rule(t_n, tau, alpha),
                        s_evaluated=evaluated, alpha=alpha, undecided=undecided,
                        ncx_fallbacks=fallbacks)


# ---------------------------------------------------------------------------
# parameter-free outer test

def star_sample(seed: int, stream_id: int, X, model: ModelSpec) -> LatentSample:
    return latent_sample(seed, stream_id, X, None, model, star=True)


def outer_stat(data: Dataset, theta: Theta, model: ModelSpec,
               m: MetricConfig = MetricConfig(), seed: int = 0,
               latent: LatentSample | None = None) -> float:
    """``T*_n``: assignment value with parameter-free draws and the transformed sections."""
    if latent is None:
        latent = star_sample(seed, STAT_STREAM, data.x, model)
    return _assignment_value(build_cost_matrix(data, latent, theta, model, m, star=True))


def point_cost_matrix(rows: LatentSample, cols: LatentSample, X,
                      m: MetricConfig = MetricConfig(), dx: np.ndarray | None = None) -> np.ndarray:
    """``d((U_i, X_i), (U'_j, X_j))`` for two latent samples on the same covariates."""
    diff = rows.u_tilde[:, None, :] - cols.u_tilde[None, :, :]
    C = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    if m.lambda_x:
        C = C + m.lambda_x * (covariate_distances(X) if dx is None else dx)
    return C


def outer_critical_draws(X, model: ModelSpec, m: MetricConfig = MetricConfig(),
                         S: int = 100, seed: int = 0) -> np.ndarray:
    """Point-to-point statistics ``T^0`` for draws ``s = 1..S``.

    Rows come from stream 0 and columns from stream ``s``, the same samples
    that enter the outer statistic and its per-draw critical statistics, so
    each ``T^0`` dominates the corresponding critical statistic at every
    parameter.
    """
    X = np.asarray(X, dtype=np.float64)
    rows = star_sample(seed, STAT_STREAM, X, model)
    dx = covariate_distances(X) if m.lambda_x else None
    out = np.empty(S)
    for s in range(1, S + 1):
        cols = star_sample(seed, s, X, model)
        out[s - 1] = solve_assignment(point_cost_matrix(rows, cols, X, m, dx)).value
    return out


def outer_critical_value(X, model: ModelSpec, m: MetricConfig = MetricConfig(),
                         S: int = 100, alpha: float = 0.05, seed: int = 0) -> float:
    """Parameter-free critical value ``c^0``, an order statistic of :func:`outer_critical_draws`."""
    critical_rank(S, alpha)
    return order_statistic(outer_critical_draws(X, model, m, S, seed), S, alpha)


def outer_critical_stats(data: Dataset, theta: Theta, model: ModelSpec,
                         m: MetricConfig = MetricConfig(), S: int = 100, seed: int = 0,
                         method: str = "ncx") -> np.ndarray:
    """Per-draw critical statistics of the outer statistic (used to check dominance)."""
    X = data.x
    rows = star_sample(seed, STAT_STREAM, X, model)
    out = np.empty(S)
    for s in range(1, S + 1):
        cols = star_sample(seed, s, X, model)
        choices = column_choices(cols, rows, X, theta, model, m, star=True)
        if method == "ncx":
            out[s - 1] = ncx_critical_stat(choices)
        else:
            r = cx_critical_stat(choices)
            out[s - 1] = r.upper
    return out
