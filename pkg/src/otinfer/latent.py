"""Monte Carlo latent samples with reproducible, independent streams.

Uniform draws come from a Philox counter-based generator keyed by
``(seed, stream_id)``; entry ``(row, col)`` of an ``n x d_u`` draw is output
number ``row * d_u + col`` of that stream, so a draw never depends on call
order or thread scheduling.

Stream layout used by the tests of one parameter value: stream ``0`` holds
the latent sample entering the test statistic, streams ``1..S`` the
critical-value samples. The parameter-free outer test reuses the same
streams through the parameter-free quantile map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .model import ModelSpec

STAT_STREAM = 0
_MASK64 = (1 << 64) - 1

# Namespaces for derive_seed; the integer codes are part of the audit trail.
SEED_NAMESPACES = {
    "dataset": 1,
    "latent": 2,
    "replication": 3,
    "selection": 4,
}


def derive_seed(root: int, namespace: str, *index: int) -> int:
    """64-bit child seed for a named substream of ``root``.

    Uses ``numpy.random.SeedSequence(root, spawn_key=(code, *index))`` where
    ``code`` is the integer registered for ``namespace``.
    """
    code = SEED_NAMESPACES[namespace]
    ss = np.random.SeedSequence(int(root) & _MASK64, spawn_key=(code, *map(int, index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def philox(seed: int, stream_id: int) -> np.random.Philox:
    key = np.array([int(seed) & _MASK64, int(stream_id) & _MASK64], dtype=np.uint64)
    return np.random.Philox(key=key)


def uniform_open(raw: np.ndarray) -> np.ndarray:
    """Map raw 64-bit words to doubles strictly inside (0, 1).

    Uses the top 52 bits, ``(k + 0.5) / 2**52``; with 53 bits the largest
    word would round up to exactly 1.
    """
    return ((raw >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0 ** -52


@dataclass(frozen=True, eq=False)
class UniformDraws:
    nu: np.ndarray
    seed: int
    stream_id: int

    @property
    def n(self) -> int:
        return self.nu.shape[0]


@dataclass(frozen=True, eq=False)
class LatentSample:
    """Materialized draws; ``u_tilde[i]`` is paired with covariate ``X[i]``.

    ``r`` is the stable sorting permutation of the covariates and
    ``u_tilde[r[k]] = q(nu[k] | X[r[k]])``: the k-th smallest covariate
    receives the k-th uniform row.
    """

    u_tilde: np.ndarray
    r: np.ndarray
    source: UniformDraws | None = None

    @property
    def n(self) -> int:
        return self.u_tilde.shape[0]


def draw_uniforms(seed: int, stream_id: int, n: int, d_u: int) -> UniformDraws:
    if n < 1 or d_u < 1:
        raise ValueError(f"need n >= 1 and d_u >= 1, got n={n}, d_u={d_u}")
    raw = philox(seed, stream_id).random_raw(n * d_u)
    return UniformDraws(nu=uniform_open(raw).reshape(n, d_u), seed=int(seed),
                        stream_id=int(stream_id))


def sorting_permutation(X, key=None) -> np.ndarray:
    """Stable permutation ``r`` with ``X[r[0]] <= X[r[1]] <= ...``.

    ``key`` defaults to lexicographic order on the flattened covariates.
    """
    if key is None:
        key = lambda x: tuple(np.asarray(x, dtype=np.float64).ravel().tolist())  # noqa: E731
    keys = [key(x) for x in X]
    return np.array(sorted(range(len(keys)), key=keys.__getitem__), dtype=np.int64)


def materialize(draws: UniformDraws, X, theta2, model: ModelSpec,
                star: bool = False) -> LatentSample:
    """Latent sample pairing the k-th smallest covariate with uniform row k.

    Relabelling the observations relabels the latent draws identically, so
    the set of (covariate, latent) pairs does not depend on input order.
    With ``star=True`` the parameter-free quantile map is used and
    ``theta2`` is ignored.
    """
    X = np.asarray(X, dtype=np.float64)
    if draws.n != len(X):
        raise DimensionMismatch(f"{draws.n} uniform rows for {len(X)} covariates")
    r = sorting_permutation(X, model.covariate_sort_key)
    u = np.empty((len(X), draws.nu.shape[1]))
    u[r] = model.latent_quantile_rows(draws.nu, X[r], theta2, star=star)
    return LatentSample(u_tilde=u, r=r, source=draws)


def latent_sample(seed: int, stream_id: int, X, theta2, model: ModelSpec,
                  star: bool = False) -> LatentSample:
    """Draw and materialize in one step."""
    draws = draw_uniforms(seed, stream_id, len(X), model.d_u)
    return materialize(draws, X, theta2, model, star=star)
