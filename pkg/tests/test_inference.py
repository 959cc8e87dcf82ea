import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog as scipy_linprog

from otinfer.assignment import INF, brute_force_assignment, solve_assignment
from otinfer.entrygame import EntryGame, GameTheta, game_dist_to_section, simulate_dgp
from otinfer.errors import BudgetExceeded, Infeasible, MaxIterations
from otinfer.inference import (ColumnChoiceSet, accept_rule, build_cost_matrix, choices_from_columns,
                               column_choices, critical_rank, critical_tau, cx_critical_stat,
                               maximizing_selection, mc_membership_test, ncx_critical_stat,
                               order_statistic, outer_critical_draws, outer_critical_stats,
                               outer_critical_value, outer_stat, point_cost_matrix,
                               required_successes, star_sample)
from otinfer.inference import test_statistic as statistic
from otinfer.latent import STAT_STREAM, LatentSample, latent_sample
from otinfer.model import Dataset, MetricConfig, covariate_distances

from toymodels import BandModel

GAME3 = EntryGame(3, 2)
BASE = GameTheta(beta=[0.6, 0.6], delta=0.3)
NO_X = MetricConfig(0.0)


def _dataset(n=12, seed=3, theta=BASE, players=3):
    return simulate_dgp(n, theta, "uniform", seed=seed, n_players=players)


def _latent(u):
    u = np.asarray(u, dtype=float)
    return LatentSample(u_tilde=u, r=np.arange(len(u)))


def _random_choices(rng, n, max_k=3):
    cols = [rng.uniform(0, 5, size=(int(rng.integers(1, max_k + 1)), n)) for _ in range(n)]
    return choices_from_columns(cols)


def cx_oracle(choices: ColumnChoiceSet) -> float:
    """min over doubly stochastic pi of sum_j max_y <pi_j, c_j(y)>, as one LP."""
    n = choices.n
    nv = n * n + n
    A_ub, b_ub = [], []
    for j, cand in enumerate(choices.columns):
        for c in cand:
            row = np.zeros(nv)
            row[j:n * n:n] = c
            row[n * n + j] = -1.0
            A_ub.append(row)
            b_ub.append(0.0)
    A_eq = np.zeros((2 * n, nv))
    for i in range(n):
        A_eq[i, i * n:(i + 1) * n] = 1.0
        A_eq[n + i, i:n * n:n] = 1.0
    c = np.concatenate([np.zeros(n * n), np.ones(n)])
    bounds = [(0, None)] * (n * n) + [(None, None)] * n
    res = scipy_linprog(c, A_ub=np.array(A_ub), b_ub=b_ub, A_eq=A_eq, b_eq=np.full(2 * n, 1.0 / n),
                        bounds=bounds, method="highs")
    assert res.status == 0
    return res.fun


# quantile convention

def test_critical_rank_values():
    assert critical_rank(100, 0.05) == 95
    assert critical_rank(99, 0.05) == 95
    assert critical_rank(99, 0.10) == 90
    assert critical_rank(19, 0.05) == 19
    assert critical_rank(1, 0.5) == 1
    assert required_successes(100, 0.05) == 6
    assert required_successes(19, 0.05) == 1
    for bad in ((0, 0.05), (10, 0.0), (10, 1.0)):
        with pytest.raises(ValueError):
            critical_rank(*bad)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=40), st.floats(0.01, 0.99),
       st.floats(0, 10))
def test_count_rule_matches_order_statistic(values, alpha, t_n):
    S = len(values)
    tau = np.array([t_n <= v for v in values])
    assert accept_rule(t_n, tau, alpha) == (t_n <= order_statistic(values, S, alpha))


@given(st.lists(st.booleans(), min_size=1, max_size=30), st.floats(0.01, 0.99))
def test_accept_rule_monotone_in_tau(tau, alpha):
    tau = np.array(tau)
    if accept_rule(1.0, tau, alpha):
        more = tau.copy()
        more[np.flatnonzero(~more)[:1]] = True
        assert accept_rule(1.0, more, alpha)
    assert not accept_rule(INF, np.ones(len(tau), dtype=bool), alpha)


# statistic

def test_cost_matrix_elementwise():
    data = _dataset(n=2)
    th = BASE.to_theta()
    lat = _latent(np.array([[0.1, -0.4, 1.2], [-1.0, 0.3, 0.0]]))
    C = build_cost_matrix(data, lat, th, GAME3)
    for i, j in itertools.product(range(2), repeat=2):
        d = game_dist_to_section(lat.u_tilde[i], data.y[j], data.x[j], BASE)
        d += np.linalg.norm(data.x[i] - data.x[j])
        assert C[i, j] == pytest.approx(d, abs=1e-14)
    one = Dataset(y=data.y[:1], x=data.x[:1])
    assert build_cost_matrix(one, _latent(lat.u_tilde[:1]), th, GAME3).shape == (1, 1)


def test_rationalizable_data_gives_zero():
    th = BASE.to_theta()
    rng = np.random.default_rng(0)
    U = rng.normal(size=(6, 3))
    X = np.tile(np.array([[1.0, 0.2]]), (6, 3, 1))
    Y = np.array([GAME3.predict_rows(U[j:j + 1], X[j:j + 1], th)[0][0] for j in range(6)])
    data = Dataset(y=Y, x=X)
    assert np.all(np.diag(build_cost_matrix(data, _latent(U), th, GAME3)) == 0)
    assert statistic(data, _latent(U), th, GAME3) == 0.0


def test_statistic_matches_brute_force():
    data = _dataset(n=5)
    lat = latent_sample(7, STAT_STREAM, data.x, None, GAME3)
    C = build_cost_matrix(data, lat, BASE.to_theta(), GAME3)
    assert statistic(data, lat, BASE.to_theta(), GAME3) == pytest.approx(
        brute_force_assignment(C).value, abs=1e-12)


def test_statistic_infeasible_when_sections_empty():
    model = BandModel()
    th = model.theta_from_vector([0.0, 0.1, 0.0])
    data = Dataset(y=np.full((3, 1), 2), x=np.zeros((3, 1, 1)))
    with pytest.raises(Infeasible):
        statistic(data, _latent(np.zeros((3, 1))), th, model, NO_X)


# column choices

def test_column_choices_unique_equilibrium_without_interaction():
    th = GameTheta(beta=[0.6, 0.6], delta=0.0).to_theta()
    data = _dataset(n=8)
    rows = latent_sample(1, STAT_STREAM, data.x, None, GAME3)
    prime = latent_sample(1, 2, data.x, None, GAME3)
    ch = column_choices(prime, rows, data.x, th, GAME3)
    assert (ch.sizes == 1).all()


def test_column_choices_multiplicity_case():
    game = EntryGame(2, 1)
    th = GameTheta(beta=[0.0], delta=0.5).to_theta()
    X = np.ones((2, 2, 1))
    prime = _latent([[0.2, 0.3], [1.0, 1.0]])
    rows = _latent([[0.0, 0.0], [0.5, -0.5]])
    ch = column_choices(prime, rows, X, th, game, NO_X)
    assert ch.sizes.tolist() == [2, 1]
    assert ch.outcomes[0] == [(0, 1), (1, 0)]
    for k, y in enumerate(ch.outcomes[0]):
        for i in range(2):
            assert ch.columns[0][k][i] == pytest.approx(
                game_dist_to_section(rows.u_tilde[i], y, X[0], GameTheta(beta=[0.0], delta=0.5)))


def test_column_deduplication():
    ch = choices_from_columns([np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 2.0]]),
                               np.array([[3.0, 3.0]])], [["a", "b", "c"], ["d"]])
    assert ch.sizes.tolist() == [2, 1]
    assert ch.outcomes[0] == ["a", "c"]


# ncx

def test_ncx_hand_case():
    cols = [np.array([[0.0, 1.0], [2.0, 0.0]]), np.array([[1.0, 0.0], [3.0, 3.0]])]
    ch = choices_from_columns(cols)
    values = []
    for a, b in itertools.product(range(2), repeat=2):
        values.append(brute_force_assignment(np.column_stack([cols[0][a], cols[1][b]])).value)
    assert ncx_critical_stat(ch) == pytest.approx(max(values))
    value, sel = maximizing_selection(ch)
    assert value == pytest.approx(max(values))
    assert brute_force_assignment(ch.assemble(sel)).value == pytest.approx(value)


def test_ncx_singletons_equal_statistic():
    rng = np.random.default_rng(1)
    C = rng.uniform(size=(5, 5))
    ch = choices_from_columns([C[:, j][None] for j in range(5)])
    assert ncx_critical_stat(ch) == pytest.approx(brute_force_assignment(C).value, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_ncx_unchanged_by_dominated_column(seed):
    rng = np.random.default_rng(seed)
    ch = _random_choices(rng, 4)
    j = int(rng.integers(4))
    extra = ch.columns[j][0] * rng.uniform(0, 1, size=4)
    cols = [c.copy() for c in ch.columns]
    cols[j] = np.vstack([cols[j], extra])
    assert ncx_critical_stat(choices_from_columns(cols)) == pytest.approx(ncx_critical_stat(ch),
                                                                          abs=1e-12)


def test_ncx_budget_and_empty():
    ch = choices_from_columns([np.vstack([np.arange(2.0) + k, np.arange(2.0) * k]) for k in range(2)])
    with pytest.raises(BudgetExceeded):
        ncx_critical_stat(ch, budget=3)
    empty = choices_from_columns([np.zeros((0, 2)), np.ones((1, 2))])
    assert empty.any_empty
    assert ncx_critical_stat(empty) == INF
    assert cx_critical_stat(empty).upper == INF


# cx

def test_cx_singletons_one_iteration():
    rng = np.random.default_rng(2)
    C = rng.uniform(size=(4, 4))
    r = cx_critical_stat(choices_from_columns([C[:, j][None] for j in range(4)]))
    assert r.converged and r.iterations == 1
    assert r.value == pytest.approx(brute_force_assignment(C).value, abs=1e-12)


@settings(deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_cx_bracket_against_lp_oracle(n, seed):
    rng = np.random.default_rng(seed)
    ch = _random_choices(rng, n)
    r = cx_critical_stat(ch, tol=1e-10)
    exact = cx_oracle(ch)
    assert r.converged
    assert r.lower - 1e-7 <= exact <= r.upper + 1e-7
    assert r.value >= ncx_critical_stat(ch) - 1e-9
    assert all(b >= a - 1e-9 for a, b in zip(r.master_history, r.master_history[1:]))
    assert all(u >= r.upper - 1e-12 for u in r.upper_history)
    assert r.lower <= r.upper + 1e-12


@settings(deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 5))
def test_cx_early_stop_decides_correctly(seed, thr):
    rng = np.random.default_rng(seed)
    ch = _random_choices(rng, 4)
    exact = cx_oracle(ch)
    r = cx_critical_stat(ch, early_stop_threshold=thr)
    assert r.decided
    if r.lower >= thr:
        assert exact >= thr - 1e-7
    elif r.upper < thr:
        assert exact < thr + 1e-7
    else:
        assert r.converged


def test_cx_max_iterations_carries_bracket():
    rng = np.random.default_rng(11)
    ch = _random_choices(rng, 8, max_k=4)
    with pytest.raises(MaxIterations) as info:
        cx_critical_stat(ch, tol=1e-12, max_iter=1)
    r = info.value.result
    assert r.lower <= cx_oracle(ch) + 1e-9 <= r.upper + 2e-9


def test_critical_tau_paths():
    rng = np.random.default_rng(5)
    ch = _random_choices(rng, 5)
    v = ncx_critical_stat(ch)
    assert critical_tau(v - 0.1, ch, "ncx") == (True, False, False)
    assert critical_tau(v + 10, ch, "ncx") == (False, False, False)
    assert critical_tau(v + 10, ch, "cx")[0] is False
    assert critical_tau(v - 0.1, ch, "cx")[0] is True
    tau, und, fb = critical_tau(v - 0.1, ch, "ncx", ncx_budget=1)
    assert tau and fb and not und
    with pytest.raises(ValueError):
        critical_tau(1.0, ch, "other")


# membership test

def test_membership_accepts_zero_statistic():
    model = BandModel()
    th = model.theta_from_vector([0.0, 100.0, 0.0])
    data = Dataset(y=np.array([[0], [1], [0], [1]]), x=np.zeros((4, 1, 1)))
    dec = mc_membership_test(data, th, model, NO_X, S=20, alpha=0.05, seed=1)
    assert dec.t_n == 0.0 and dec.accept and dec.tau.all()


def test_membership_rejects_empty_sections():
    model = BandModel()
    th = model.theta_from_vector([0.0, 0.1, 0.0])
    data = Dataset(y=np.full((3, 1), 2), x=np.zeros((3, 1, 1)))
    dec = mc_membership_test(data, th, model, NO_X, S=10, alpha=0.1, seed=1)
    assert dec.t_n == INF and not dec.accept and dec.s_evaluated == 0


def test_membership_methods_and_determinism():
    data = _dataset(n=10, seed=4)
    th = BASE.to_theta()
    a = mc_membership_test(data, th, GAME3, S=19, alpha=0.1, seed=9, method="cx")
    b = mc_membership_test(data, th, GAME3, S=19, alpha=0.1, seed=9, method="cx")
    c = mc_membership_test(data, th, GAME3, S=19, alpha=0.1, seed=9, method="ncx")
    np.testing.assert_array_equal(a.tau, b.tau)
    assert a.t_n == b.t_n == c.t_n
    # the convexified statistic dominates the exhaustive one draw by draw
    assert (a.tau >= c.tau).all()
    assert a.S == 19 and a.s_evaluated == 19 and a.undecided == 0


def test_membership_time_cap_leaves_draws_undecided():
    data = _dataset(n=10, seed=4)
    dec = mc_membership_test(data, BASE.to_theta(), GAME3, S=5, alpha=0.2, seed=9,
                             time_cap=1e-12)
    assert dec.s_evaluated == 0 and dec.undecided == 5 and not dec.tau.any()


@given(st.lists(st.floats(0, 10), min_size=1, max_size=40), st.floats(0.01, 0.99),
       st.floats(0, 10), st.floats(0, 10))
def test_decision_monotone_in_statistic(values, alpha, t1, t2):
    lo, hi = sorted((t1, t2))
    tau = lambda t: np.array([t <= v for v in values])
    if accept_rule(hi, tau(hi), alpha):
        assert accept_rule(lo, tau(lo), alpha)


# outer test

def test_outer_stat_equals_statistic_for_entry_game():
    data = _dataset(n=9)
    th = BASE.to_theta()
    rows = star_sample(4, STAT_STREAM, data.x, GAME3)
    assert outer_stat(data, th, GAME3, latent=rows) == pytest.approx(
        statistic(data, rows, th, GAME3), abs=1e-12)


def test_outer_stat_hand_case():
    model = BandModel()
    th = model.theta_from_vector([0.5, 0.1, 1.0])
    data = Dataset(y=np.array([[1], [0]]), x=np.zeros((2, 1, 1)))
    rows = _latent([[-1.0], [0.0]])
    # u = mu + u*: rows sit at 0 and 1; y=1 needs u >= 0.4, y=0 needs u <= 0.6
    C = np.array([[0.4, 0.0], [0.0, 0.4]])
    assert outer_stat(data, th, model, NO_X, latent=rows) == pytest.approx(
        brute_force_assignment(C).value)


def test_outer_critical_value_is_theta_free_and_zero_for_identical_draws():
    data = _dataset(n=10)
    c1 = outer_critical_value(data.x, GAME3, S=19, alpha=0.1, seed=5)
    c2 = outer_critical_value(data.x, GAME3, S=19, alpha=0.1, seed=5)
    assert c1 == c2
    rows = star_sample(5, STAT_STREAM, data.x, GAME3)
    assert solve_assignment(point_cost_matrix(rows, rows, data.x)).value == 0.0


@settings(deadline=None, max_examples=15)
@given(st.integers(0, 2**32 - 1), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(0, 1.5))
def test_outer_dominance_per_draw(seed, b0, b1, delta):
    data = _dataset(n=7, seed=seed % 1000)
    th = GameTheta(beta=[b0, b1], delta=delta).to_theta()
    t0 = outer_critical_draws(data.x, GAME3, S=6, seed=seed)
    t_star = outer_critical_stats(data, th, GAME3, S=6, seed=seed, method="ncx")
    assert (t_star <= t0 + 1e-12).all()
    t_cx = outer_critical_stats(data, th, GAME3, S=6, seed=seed, method="cx")
    assert (t_cx <= t0 + 1e-9).all()


def test_point_cost_matrix_includes_covariates():
    data = _dataset(n=4)
    a = star_sample(1, 0, data.x, GAME3)
    b = star_sample(1, 1, data.x, GAME3)
    C = point_cost_matrix(a, b, data.x, MetricConfig(0.5))
    ref = np.linalg.norm(a.u_tilde[:, None] - b.u_tilde[None], axis=2) + 0.5 * covariate_distances(data.x)
    np.testing.assert_allclose(C, ref, atol=1e-14)
