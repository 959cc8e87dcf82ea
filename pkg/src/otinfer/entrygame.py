"""Multi-player binary entry game with complete information.

Player ``s`` earns ``1{y_s = 1} (x_s' beta - delta * sum_{s' != s} y_s' + eps_s)``;
observed profiles are pure-strategy Nash equilibria and the shocks are
standard normal. For ``delta >= 0`` an equilibrium always exists, but several
may coexist, which is what makes the model incomplete.

Covariates of one market are an ``S x d_x`` matrix whose first column is
the constant 1.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .errors import DimensionMismatch, TooManyPlayers
from .inference import NCX_BUDGET, column_choices, maximizing_selection
from .latent import STAT_STREAM, LatentSample, latent_sample, philox, uniform_open
from .model import Dataset, MetricConfig, ModelSpec, Theta, check_uniform
from .normal import norm_ppf

MAX_PLAYERS = 20
SELECTION_RULES = ("uniform", "first", "adversarial_greedy", "adversarial")
Selection = Literal["uniform", "first", "adversarial_greedy", "adversarial"]

# Philox streams used by the simulator for a given dataset seed.
_COVARIATE_STREAM, _SHOCK_STREAM, _SELECTION_STREAM = 0, 1, 2


@dataclass(frozen=True, eq=False)
class GameTheta:
    beta: np.ndarray
    delta: float

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        delta = float(self.delta)
        if not (np.isfinite(beta).all() and np.isfinite(delta)):
            raise ValueError("beta and delta must be finite")
        if delta < 0:
            raise ValueError(f"delta must be >= 0 for equilibrium existence, got {delta}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "delta", delta)

    def to_theta(self) -> Theta:
        return Theta(theta1=np.append(self.beta, self.delta))

    @classmethod
    def from_theta(cls, theta: Theta) -> "GameTheta":
        t1 = theta.theta1
        return cls(beta=t1[:-1], delta=t1[-1])


def _game_theta(theta) -> GameTheta:
    return theta if isinstance(theta, GameTheta) else GameTheta.from_theta(theta)


@lru_cache(maxsize=None)
def all_profiles(n_players: int) -> np.ndarray:
    """Every action profile in ``{0,1}^S``, lexicographic order, read-only."""
    if n_players > MAX_PLAYERS:
        raise TooManyPlayers(f"profile enumeration limited to {MAX_PLAYERS} players")
    P = np.array(list(itertools.product((0, 1), repeat=n_players)), dtype=np.int64)
    P.setflags(write=False)
    return P


def _check(y, x, eps, theta: GameTheta):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != len(theta.beta):
        raise DimensionMismatch(f"covariates of shape {x.shape} do not match beta of length {len(theta.beta)}")
    S = x.shape[0]
    if y is not None and np.shape(y) != (S,):
        raise DimensionMismatch(f"profile of shape {np.shape(y)} for {S} players")
    if eps is not None and np.shape(eps) != (S,):
        raise DimensionMismatch(f"shock of shape {np.shape(eps)} for {S} players")
    return x


def box_thresholds(y, x, theta) -> np.ndarray:
    """Thresholds ``t_s = -(x_s' beta - delta * sum_{s' != s} y_s')``.

    The latent section of profile ``y`` is the box with ``eps_s >= t_s``
    where ``y_s = 1`` and ``eps_s <= t_s`` where ``y_s = 0``.
    """
    theta = _game_theta(theta)
    x = _check(y, x, None, theta)
    y = np.asarray(y, dtype=np.float64)
    others = y.sum() - y
    return -(x @ theta.beta - theta.delta * others)


def is_pure_ne(y, x, eps, theta) -> bool:
    """Weak best-response check for every player (boundary profiles accepted)."""
    theta = _game_theta(theta)
    x = _check(y, x, eps, theta)
    y = np.asarray(y)
    others = y.sum() - y
    gain = x @ theta.beta - theta.delta * others + np.asarray(eps, dtype=np.float64)
    return bool(np.all(np.where(y == 1, -gain, gain) <= 0))


def enumerate_ne(x, eps, theta) -> list[tuple[int, ...]]:
    """All pure-strategy equilibria in lexicographic order."""
    theta = _game_theta(theta)
    x = _check(None, x, eps, theta)
    P = all_profiles(x.shape[0])
    mask = _ne_mask(np.asarray(eps, dtype=np.float64)[None], x[None], theta, P)[0]
    return [tuple(int(v) for v in P[k]) for k in np.flatnonzero(mask)]


def game_dist_to_section(eps_tilde, y, x, theta) -> float:
    """Euclidean distance from ``eps_tilde`` to the latent box of ``y``."""
    theta = _game_theta(theta)
    _check(y, x, eps_tilde, theta)
    t = box_thresholds(y, x, theta)
    e = np.asarray(eps_tilde, dtype=np.float64)
    viol = np.maximum(0.0, np.where(np.asarray(y) == 1, t - e, e - t))
    return float(_scaled_norm(viol))


def _scaled_norm(v: np.ndarray) -> np.ndarray:
    # Euclidean norm over the last axis; scaling keeps tiny gaps from squaring to zero
    top = v.max(axis=-1)
    safe = np.where(top > 0, top, 1.0)
    w = v / safe[..., None]
    return top * np.sqrt(np.einsum("...s,...s->...", w, w))


def _ne_mask(U: np.ndarray, X: np.ndarray, theta: GameTheta, P: np.ndarray) -> np.ndarray:
    # (n, 2^S) boolean: profile k is an equilibrium at (U[j], X[j]).
    index = X @ theta.beta                                   # (n, S)
    others = P.sum(axis=1, keepdims=True) - P                # (2^S, S)
    t = -(index[:, None, :] - theta.delta * others[None])    # (n, 2^S, S)
    u = U[:, None, :]
    return np.where(P[None] == 1, u >= t, u <= t).all(axis=2)


def _box_distances(U: np.ndarray, Y: np.ndarray, X: np.ndarray, theta: GameTheta) -> np.ndarray:
    # (n_rows, n_cols) distances from U[i] to the box of (Y[j], X[j]).
    Y = np.asarray(Y, dtype=np.float64)
    others = Y.sum(axis=1, keepdims=True) - Y
    T = -(X @ theta.beta - theta.delta * others)
    diff = U[:, None, :] - T[None, :, :]
    viol = np.maximum(0.0, np.where(Y[None] == 1, -diff, diff))
    return _scaled_norm(viol)


class EntryGame(ModelSpec):
    """Entry game as a pluggable model; ``theta1 = (beta_0..beta_{d_x-1}, delta)``."""

    name = "entry_game"
    star_is_identity = True

    def __init__(self, n_players: int = 6, d_x: int = 2):
        if n_players < 1 or n_players > MAX_PLAYERS:
            raise TooManyPlayers(f"n_players must be in 1..{MAX_PLAYERS}, got {n_players}")
        if d_x < 1:
            raise ValueError("d_x must be >= 1")
        self.n_players = n_players
        self.d_x = d_x
        self.d_u = n_players
        self.param_names = tuple(f"beta{k}" for k in range(d_x)) + ("delta",)

    def __repr__(self):
        return f"EntryGame(n_players={self.n_players}, d_x={self.d_x})"

    def theta_from_vector(self, vec) -> Theta:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.d_x + 1,):
            raise DimensionMismatch(f"expected {self.d_x + 1} parameters, got {vec.shape}")
        return GameTheta(beta=vec[:-1], delta=vec[-1]).to_theta()

    def support_contains(self, y, x, u, theta) -> bool:
        return is_pure_ne(y, x, u, theta)

    def predictions(self, u, x, theta) -> list:
        return enumerate_ne(x, u, theta)

    def dist_u_to_section(self, u, y, x, theta) -> float:
        return game_dist_to_section(u, y, x, theta)

    def latent_quantile(self, nu, x, theta2) -> np.ndarray:
        nu = check_uniform(nu)
        if nu.shape != (self.d_u,):
            raise DimensionMismatch(f"expected {self.d_u} uniforms, got {nu.shape}")
        return norm_ppf(nu)

    # vectorized hooks
    def latent_quantile_rows(self, nu, X, theta2, star=False):
        return norm_ppf(check_uniform(nu))

    def section_distances(self, U, Y, X, theta, star=False):
        return _box_distances(np.asarray(U, dtype=np.float64), np.asarray(Y),
                              np.asarray(X, dtype=np.float64), _game_theta(theta))

    def predict_rows(self, U, X, theta, star=False):
        P = all_profiles(self.n_players)
        mask = _ne_mask(np.asarray(U, dtype=np.float64), np.asarray(X, dtype=np.float64),
                        _game_theta(theta), P)
        rows = [tuple(int(v) for v in p) for p in P]
        return [[rows[k] for k in np.flatnonzero(m)] for m in mask]

    # simulation
    def simulate(self, n: int, theta, selection: Selection = "uniform", seed: int = 0,
                 latent_seed: int | None = None, metric: MetricConfig = MetricConfig()) -> Dataset:
        return simulate_dgp(n, theta, selection, seed, n_players=self.n_players,
                            d_x=self.d_x, latent_seed=latent_seed, metric=metric)


def simulate_dgp(n: int, theta_true, selection: Selection = "uniform", seed: int = 0, *,
                 n_players: int = 6, d_x: int = 2, latent_seed: int | None = None,
                 metric: MetricConfig = MetricConfig(), budget: int = NCX_BUDGET) -> Dataset:
    """Draw ``n`` markets and select one equilibrium per market.

    Covariates are ``(1, X_1s, ...)`` with standard normal non-constant
    entries, shocks are standard normal. Selection rules:

    ``uniform``
        uniformly at random among the equilibria;
    ``first``
        the lexicographically first equilibrium;
    ``adversarial_greedy``
        per market, the equilibrium whose latent box is farthest from the
        Monte Carlo draw the test pairs with that market (stream 0 of
        ``latent_seed``). A per-observation heuristic;
    ``adversarial``
        jointly over markets, the equilibria that maximize the test
        statistic computed with the Monte Carlo rows on stream 0 of
        ``latent_seed`` under ``metric``. The statistic then has the law of
        the non-convexified critical statistic, the least favourable case.
        Found by exhaustive enumeration; ``BudgetExceeded`` when the number
        of joint selections exceeds ``budget``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if selection not in SELECTION_RULES:
        raise ValueError(f"unknown selection rule {selection!r}; expected one of {SELECTION_RULES}")
    theta = _game_theta(theta_true)
    if len(theta.beta) != d_x:
        raise DimensionMismatch(f"beta has length {len(theta.beta)} but d_x={d_x}")
    S = n_players

    def normals(stream, size):
        return norm_ppf(uniform_open(philox(seed, stream).random_raw(size)))

    X = np.ones((n, S, d_x))
    if d_x > 1:
        X[:, :, 1:] = normals(_COVARIATE_STREAM, n * S * (d_x - 1)).reshape(n, S, d_x - 1)
    eps = normals(_SHOCK_STREAM, n * S).reshape(n, S)
    pick = uniform_open(philox(seed, _SELECTION_STREAM).random_raw(n))

    P = all_profiles(S)
    mask = _ne_mask(eps, X, theta, P)
    Y = np.empty((n, S), dtype=np.int64)
    if selection.startswith("adversarial"):
        if latent_seed is None:
            raise ValueError(f"{selection} selection needs latent_seed")
        game = EntryGame(S, d_x)
        th = theta.to_theta()
        rows = latent_sample(latent_seed, STAT_STREAM, X, th.theta2, game)
    if selection == "adversarial":
        truth = LatentSample(u_tilde=eps, r=np.arange(n))
        choices = column_choices(truth, rows, X, th, game, metric)
        _, sel = maximizing_selection(choices, budget)
        for j in range(n):
            Y[j] = choices.outcomes[j][sel[j]]
        return Dataset(y=Y, x=X)

    for j in range(n):
        eq = np.flatnonzero(mask[j])
        if selection == "first" or len(eq) == 1:
            k = eq[0]
        elif selection == "uniform":
            k = eq[min(int(pick[j] * len(eq)), len(eq) - 1)]
        else:
            d = _box_distances(rows.u_tilde[j:j + 1], P[eq], np.repeat(X[j:j + 1], len(eq), axis=0),
                               theta)[0]
            k = eq[int(np.argmax(d))]
        Y[j] = P[k]
    return Dataset(y=Y, x=X)


def write_dataset_csv(path, data: Dataset) -> None:
    """One row per (market, player): ``obs_id, player, y, x_0, ..., x_{d_x-1}``."""
    d_x = data.x.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["obs_id", "player", "y"] + [f"x_{k}" for k in range(d_x)])
        for i in range(data.n):
            for s in range(data.y.shape[1]):
                w.writerow([i, s, int(data.y[i, s])] + [repr(float(v)) for v in data.x[i, s]])


def read_dataset_csv(path) -> Dataset:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty dataset")
    xcols = sorted((c for c in rows[0] if c.startswith("x_")), key=lambda c: int(c[2:]))
    n = max(int(r["obs_id"]) for r in rows) + 1
    S = max(int(r["player"]) for r in rows) + 1
    if len(rows) != n * S:
        raise ValueError(f"{path}: expected {n * S} rows for {n} markets x {S} players, got {len(rows)}")
    Y = np.zeros((n, S), dtype=np.int64)
    X = np.zeros((n, S, len(xcols)))
    for r in rows:
        i, s = int(r["obs_id"]), int(r["player"])
        Y[i, s] = int(r["y"])
        X[i, s] = [float(r[c]) for c in xcols]
    return Dataset(y=Y, x=X)
