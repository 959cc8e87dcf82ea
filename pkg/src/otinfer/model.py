"""Structural model contract consumed by the inference engine.

A model is described by a support restriction on (outcome, covariate,
latent) triples and by a conditional latent distribution given through a
quantile map. The inference code only talks to models through
:class:`ModelSpec`; the batch hooks at the bottom of the class have
loop-based defaults and can be overridden with vectorized versions.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np

from .errors import DimensionMismatch, OutOfDomain
from .normal import norm_ppf

INF = float("inf")


@dataclass(frozen=True, eq=False)
class Theta:
    """Parameter split into support parameters and latent-law parameters."""

    theta1: np.ndarray
    theta2: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        t1 = np.atleast_1d(np.asarray(self.theta1, dtype=np.float64))
        t2 = np.atleast_1d(np.asarray(self.theta2, dtype=np.float64))
        if not (np.isfinite(t1).all() and np.isfinite(t2).all()):
            raise ValueError("theta entries must be finite")
        object.__setattr__(self, "theta1", t1)
        object.__setattr__(self, "theta2", t2)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.theta1, self.theta2])


@dataclass(frozen=True)
class MetricConfig:
    """Weight of the covariate part of ``d((u,x),(u',x')) = |u-u'| + lambda_x |x-x'|``."""

    lambda_x: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.lambda_x) and self.lambda_x >= 0):
            raise ValueError(f"lambda_x must be finite and >= 0, got {self.lambda_x}")


@dataclass(frozen=True, eq=False)
class Observation:
    y: Any
    x: np.ndarray


@dataclass(frozen=True, eq=False)
class Dataset:
    """``n`` observations stored as stacked arrays ``y[i]`` and ``x[i]``."""

    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y)
        x = np.asarray(self.x, dtype=np.float64)
        if len(y) != len(x):
            raise DimensionMismatch(f"{len(y)} outcomes but {len(x)} covariates")
        if not np.isfinite(x).all():
            raise ValueError("covariates must be finite")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @classmethod
    def from_observations(cls, observations: Sequence[Observation]) -> "Dataset":
        return cls(y=np.array([o.y for o in observations]),
                   x=np.array([o.x for o in observations], dtype=np.float64))

    @property
    def n(self) -> int:
        return len(self.y)

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Observation]:
        for y, x in zip(self.y, self.x):
            yield Observation(y=y, x=x)


def covariate_distances(X: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean (Frobenius for matrix covariates) distances."""
    flat = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    diff = flat[:, None, :] - flat[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def check_uniform(nu) -> np.ndarray:
    nu = np.asarray(nu, dtype=np.float64)
    if not ((nu > 0) & (nu < 1)).all():
        raise OutOfDomain("uniform draws must lie strictly inside (0, 1)")
    return nu


def psd_sqrt(cov) -> np.ndarray:
    """Symmetric square root of a positive semidefinite matrix."""
    cov = np.asarray(cov, dtype=np.float64)
    w, v = np.linalg.eigh(cov)
    if w.min() < -1e-12 * max(1.0, abs(w).max()):
        raise ValueError("covariance matrix is not positive semidefinite")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def gaussian_star_transform(u_star, cov) -> np.ndarray:
    """``U = cov^{1/2} U*`` mapping standard normal draws to ``N(0, cov)``.

    Works on a single vector or on rows of a matrix.
    """
    root = psd_sqrt(cov)
    return np.asarray(u_star, dtype=np.float64) @ root.T


class ModelSpec(abc.ABC):
    """Interface for a partially identified structural model.

    Subclasses must be immutable after construction. ``theta`` arguments are
    :class:`Theta` instances; outcome and covariate encodings are model
    specific.
    """

    name: str = "model"
    #: dimension of the latent vector
    d_u: int
    #: names of the entries of ``Theta.vector()``, used by grids and the CLI
    param_names: tuple[str, ...] = ()
    #: whether ``star_transform`` is the identity map
    star_is_identity: bool = True

    # -- parameters -----------------------------------------------------
    def theta_from_vector(self, vec) -> Theta:
        raise NotImplementedError

    def theta_from_dict(self, values: dict[str, float]) -> Theta:
        missing = [k for k in self.param_names if k not in values]
        if missing:
            raise KeyError(f"missing parameters {missing}")
        return self.theta_from_vector([values[k] for k in self.param_names])

    # -- primitives -----------------------------------------------------
    @abc.abstractmethod
    def support_contains(self, y, x, u, theta: Theta) -> bool:
        """Whether ``(y, x, u)`` lies in the (closed) support set."""

    @abc.abstractmethod
    def predictions(self, u, x, theta: Theta) -> list:
        """All outcomes ``y`` with ``(y, x, u)`` in the support, canonical order."""

    @abc.abstractmethod
    def dist_u_to_section(self, u, y, x, theta: Theta) -> float:
        """Euclidean distance from ``u`` to the latent section of ``(y, x)``.

        Returns ``inf`` when no latent value rationalizes ``(y, x)``.
        """

    @abc.abstractmethod
    def latent_quantile(self, nu, x, theta2) -> np.ndarray:
        """Map a uniform vector to a draw from the latent law given ``x``."""

    def star_quantile(self, nu, x) -> np.ndarray:
        """Quantile map of the parameter-free latent law (standard normal)."""
        return norm_ppf(check_uniform(nu))

    def star_transform(self, u_star, x, theta2) -> np.ndarray:
        return np.asarray(u_star, dtype=np.float64)

    def dist_star_to_section(self, u_star, y, x, theta: Theta) -> float:
        """Distance in the parameter-free latent space to ``{u*: h(u*) in section}``."""
        if self.star_is_identity:
            return self.dist_u_to_section(u_star, y, x, theta)
        raise NotImplementedError(
            f"{type(self).__name__} must implement dist_star_to_section")

    def covariate_sort_key(self, x) -> tuple:
        """Lexicographic key on the row-major flattening of ``x``."""
        return tuple(np.asarray(x, dtype=np.float64).ravel().tolist())

    # -- derived --------------------------------------------------------
    def dist_to_gamma_u(self, u_tilde, x_i, y_j, x_j, theta: Theta,
                        m: MetricConfig = MetricConfig()) -> float:
        """Point-to-set distance ``d((u_tilde, x_i), Gamma_u(y_j, x_j))``.

        The additive metric makes this the latent-section distance plus
        ``lambda_x * |x_i - x_j|``.
        """
        du = self.dist_u_to_section(u_tilde, y_j, x_j, theta)
        if not np.isfinite(du):
            return INF
        x_i = np.asarray(x_i, dtype=np.float64)
        x_j = np.asarray(x_j, dtype=np.float64)
        if x_i.shape != x_j.shape:
            raise DimensionMismatch(f"covariate shapes {x_i.shape} and {x_j.shape}")
        return float(du + m.lambda_x * np.linalg.norm((x_i - x_j).ravel()))

    # -- batch hooks (override for speed) -------------------------------
    def latent_quantile_rows(self, nu: np.ndarray, X: np.ndarray, theta2,
                             star: bool = False) -> np.ndarray:
        """Row-wise quantile map: row ``i`` of ``nu`` conditional on ``X[i]``."""
        if star:
            return np.array([self.star_quantile(nu[i], X[i]) for i in range(len(nu))])
        return np.array([self.latent_quantile(nu[i], X[i], theta2) for i in range(len(nu))])

    def section_distances(self, U: np.ndarray, Y, X: np.ndarray, theta: Theta,
                          star: bool = False) -> np.ndarray:
        """Matrix of latent-section distances from ``U[i]`` to section of ``(Y[j], X[j])``."""
        dist = self.dist_star_to_section if star else self.dist_u_to_section
        out = np.empty((len(U), len(Y)))
        for j in range(len(Y)):
            for i in range(len(U)):
                out[i, j] = dist(U[i], Y[j], X[j], theta)
        return out

    def predict_rows(self, U: np.ndarray, X: np.ndarray, theta: Theta,
                     star: bool = False) -> list[list]:
        """``predictions`` for every row ``(U[j], X[j])``."""
        out = []
        for u, x in zip(U, X):
            if star:
                u = self.star_transform(u, x, theta.theta2)
            out.append(self.predictions(u, x, theta))
        return out

