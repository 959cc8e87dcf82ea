import numpy as np
import pytest
from hypothesis import given, strategies as st

from otinfer.entrygame import EntryGame
from otinfer.errors import DimensionMismatch
from otinfer.latent import (SEED_NAMESPACES, derive_seed, draw_uniforms, latent_sample,
                            materialize, sorting_permutation, uniform_open)
from otinfer.normal import norm_ppf
from toymodels import BandModel


def test_derive_seed_is_deterministic_and_separated():
    assert derive_seed(7, "latent", 3) == derive_seed(7, "latent", 3)
    seeds = {derive_seed(7, ns, k) for ns in SEED_NAMESPACES for k in range(20)}
    assert len(seeds) == 20 * len(SEED_NAMESPACES)
    assert derive_seed(7, "dataset", 50, 1) != derive_seed(7, "dataset", 1, 50)
    with pytest.raises(KeyError):
        derive_seed(7, "nope")


def test_uniform_open_extremes():
    raw = np.array([0, 1, 2**64 - 1], dtype=np.uint64)
    u = uniform_open(raw)
    assert (u > 0).all() and (u < 1).all()


def test_draws_are_reproducible_and_streams_differ():
    a = draw_uniforms(11, 0, 20, 3)
    b = draw_uniforms(11, 0, 20, 3)
    c = draw_uniforms(11, 1, 20, 3)
    np.testing.assert_array_equal(a.nu, b.nu)
    assert not np.array_equal(a.nu, c.nu)
    assert (a.seed, a.stream_id, a.n) == (11, 0, 20)


def test_draw_entry_depends_only_on_position():
    small = draw_uniforms(4, 2, 5, 3).nu
    big = draw_uniforms(4, 2, 50, 3).nu
    np.testing.assert_array_equal(small, big[:5])


def test_uniform_mean_and_range():
    nu = draw_uniforms(123, 5, 100_000, 1).nu
    assert abs(nu.mean() - 0.5) < 0.01
    assert (nu > 0).all() and (nu < 1).all()


def test_draw_validation():
    with pytest.raises(ValueError):
        draw_uniforms(1, 0, 0, 2)


def test_sorting_permutation_conventions():
    assert sorting_permutation(np.array([[1.0], [2.0], [3.0]])).tolist() == [0, 1, 2]
    assert sorting_permutation(np.array([[3.0], [2.0], [1.0]])).tolist() == [2, 1, 0]
    assert sorting_permutation(np.array([[1.0], [0.0], [1.0], [0.0]])).tolist() == [1, 3, 0, 2]
    X = np.array([[[1.0, 5.0]], [[1.0, 2.0]], [[0.0, 9.0]]])
    assert sorting_permutation(X).tolist() == [2, 1, 0]


def test_materialize_definition():
    game = EntryGame(n_players=2, d_x=2)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(6, 2, 2))
    draws = draw_uniforms(9, 0, 6, 2)
    lat = materialize(draws, X, None, game)
    for k in range(6):
        i = lat.r[k]
        np.testing.assert_array_equal(lat.u_tilde[i], game.latent_quantile(draws.nu[k], X[i], None))
    keys = [game.covariate_sort_key(X[i]) for i in lat.r]
    assert keys == sorted(keys)


def test_materialize_single_and_identical_covariates():
    game = EntryGame(n_players=2, d_x=1)
    one = draw_uniforms(1, 0, 1, 2)
    lat = materialize(one, np.ones((1, 2, 1)), None, game)
    np.testing.assert_array_equal(lat.u_tilde[0], norm_ppf(one.nu[0]))
    draws = draw_uniforms(1, 0, 4, 2)
    lat = materialize(draws, np.ones((4, 2, 1)), None, game)
    assert lat.r.tolist() == [0, 1, 2, 3]
    np.testing.assert_array_equal(lat.u_tilde, norm_ppf(draws.nu))


def test_materialize_length_mismatch():
    with pytest.raises(DimensionMismatch):
        materialize(draw_uniforms(1, 0, 3, 2), np.ones((4, 2, 1)), None, EntryGame(2, 1))


def test_star_sample_ignores_theta2():
    model = BandModel()
    X = np.arange(5.0).reshape(5, 1)
    a = latent_sample(3, 1, X, np.array([2.0]), model, star=True)
    b = latent_sample(3, 1, X, np.array([-7.0]), model, star=True)
    c = latent_sample(3, 1, X, np.array([2.0]), model)
    np.testing.assert_array_equal(a.u_tilde, b.u_tilde)
    np.testing.assert_allclose(c.u_tilde, a.u_tilde + 2.0)


@given(st.integers(2, 12), st.integers(0, 2**32 - 1), st.randoms(use_true_random=False))
def test_permutation_equivariance(n, seed, rnd):
    game = EntryGame(n_players=2, d_x=2)
    rng = np.random.default_rng(seed)
    X = np.round(rng.normal(size=(n, 2, 2)), 1)  # rounding creates ties
    X[:, :, 0] = 1.0
    sigma = list(range(n))
    rnd.shuffle(sigma)
    a = latent_sample(seed, 0, X, None, game)
    b = latent_sample(seed, 0, X[sigma], None, game)

    def pairs(X, U):
        return sorted(tuple(x.ravel()) + tuple(u) for x, u in zip(X, U))

    assert pairs(X, a.u_tilde) == pairs(X[sigma], b.u_tilde)


def test_marginal_is_standard_normal():
    from scipy.stats import kstest
    game = EntryGame(n_players=3, d_x=2)
    X = np.ones((100_000, 3, 2))
    U = latent_sample(5, 0, X, None, game).u_tilde
    for k in range(3):
        assert kstest(U[:, k], "norm").statistic < 0.01
