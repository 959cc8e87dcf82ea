"""Confidence regions by test inversion over a rectangular parameter grid.

The parameter-free outer region is computed first (one critical value for
the whole grid); the exact membership test then runs only at points inside
it. Every grid point uses the same latent streams, so the classification of
a point does not depend on which other points are on the grid.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .inference import (CX_MAX_ITER, CX_TOL, mc_membership_test, outer_critical_value,
                        outer_stat, star_sample)
from .latent import STAT_STREAM
from .model import Dataset, MetricConfig, ModelSpec, Theta

#: column order of the region CSV after the parameter columns
REGION_COLUMNS = ("t_star", "in_outer", "t_n", "tau_fraction", "in_exact")


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Order-preserving map, optionally over a thread pool."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class Axis:
    name: str
    lower: float
    upper: float
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError(f"axis {self.name}: count must be >= 1")
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ConfigError(f"axis {self.name}: bounds must be finite")
        if self.lower > self.upper:
            raise ConfigError(f"axis {self.name}: lower bound exceeds upper bound")
        if self.count == 1 and self.lower != self.upper:
            raise ConfigError(f"axis {self.name}: a single point needs lower == upper")

    @classmethod
    def parse(cls, spec: str) -> "Axis":
        """Parse ``name:lo:hi:count``."""
        parts = spec.split(":")
        if len(parts) != 4 or not parts[0]:
            raise ConfigError(f"grid axis {spec!r} is not of the form name:lo:hi:count")
        try:
            return cls(parts[0], float(parts[1]), float(parts[2]), int(parts[3]))
        except ValueError as exc:
            raise ConfigError(f"grid axis {spec!r}: {exc}") from None

    def values(self) -> np.ndarray:
        if self.count == 1:
            return np.array([self.lower])
        k = np.arange(self.count)
        return self.lower + (self.upper - self.lower) * k / (self.count - 1)


@dataclass(frozen=True)
class ParameterGrid:
    """Cartesian grid over ``axes``; parameters not on an axis are held at ``fixed``."""

    axes: tuple[Axis, ...]
    fixed: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        names = [a.name for a in self.axes]
        if not names:
            raise ConfigError("grid needs at least one axis")
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate grid axes in {names}")
        both = set(names) & set(self.fixed)
        if both:
            raise ConfigError(f"parameters {sorted(both)} are both on an axis and fixed")

    @classmethod
    def parse(cls, axes: Iterable[str], fixed: dict[str, float] | None = None) -> "ParameterGrid":
        return cls(tuple(Axis.parse(a) for a in axes), dict(fixed or {}))

    @property
    def size(self) -> int:
        return math.prod(a.count for a in self.axes)

    def points(self, param_names: Sequence[str]) -> np.ndarray:
        """Full parameter vectors, one row per grid point, first axis varying slowest."""
        known = {a.name for a in self.axes} | set(self.fixed)
        unknown = known - set(param_names)
        if unknown:
            raise ConfigError(f"unknown parameters {sorted(unknown)}; model has {list(param_names)}")
        missing = [p for p in param_names if p not in known]
        if missing:
            raise ConfigError(f"parameters {missing} are neither on an axis nor fixed")
        pos = {p: k for k, p in enumerate(param_names)}
        out = np.empty((self.size, len(param_names)))
        for name, v in self.fixed.items():
            out[:, pos[name]] = v
        for row, combo in enumerate(itertools.product(*(a.values() for a in self.axes))):
            for a, v in zip(self.axes, combo):
                out[row, pos[a.name]] = v
        return out


@dataclass
class RegionPoint:
    theta: np.ndarray
    t_star: float
    in_outer: bool
    t_n: float = math.nan
    tau_fraction: float = math.nan
    in_exact: bool = False
    undecided: int = 0


@dataclass
class RegionResult:
    param_names: tuple[str, ...]
    points: list[RegionPoint]
    meta: dict
    #: seconds spent per stage; kept out of the written files so they stay reproducible
    wall_time: dict = field(default_factory=dict)

    def outer_mask(self) -> np.ndarray:
        return np.array([p.in_outer for p in self.points], dtype=bool)

    def exact_mask(self) -> np.ndarray:
        return np.array([p.in_exact for p in self.points], dtype=bool)


def _thetas(grid: ParameterGrid, model: ModelSpec) -> tuple[np.ndarray, list[Theta]]:
    vecs = grid.points(model.param_names)
    thetas = []
    for v in vecs:
        try:
            thetas.append(model.theta_from_vector(v))
        except ValueError as exc:
            raise ConfigError(f"grid point {v.tolist()}: {exc}") from None
    return vecs, thetas


def compute_outer_region(grid: ParameterGrid, data: Dataset, model: ModelSpec,
                         m: MetricConfig = MetricConfig(), S: int = 100, alpha: float = 0.05,
                         seed: int = 0, threads: int = 1) -> RegionResult:
    """``T*_n`` at every grid point against the single critical value ``c^0``."""
    t0 = time.perf_counter()
    vecs, thetas = _thetas(grid, model)
    c0 = outer_critical_value(data.x, model, m, S, alpha, seed)
    rows = star_sample(seed, STAT_STREAM, data.x, model)
    t_star = parallel_map(lambda th: outer_stat(data, th, model, m, latent=rows), thetas, threads)
    points = [RegionPoint(theta=v, t_star=t, in_outer=bool(t <= c0)) for v, t in zip(vecs, t_star)]
    meta = {"n": data.n, "S": S, "alpha": alpha, "seed": seed, "lambda_x": m.lambda_x,
            "c0": c0, "grid": [[a.name, a.lower, a.upper, a.count] for a in grid.axes],
            "fixed": dict(sorted(grid.fixed.items())), "model": model.name}
    return RegionResult(tuple(model.param_names), points, meta,
                        {"outer": time.perf_counter() - t0})


def compute_exact_region(outer: RegionResult, data: Dataset, model: ModelSpec,
                         m: MetricConfig = MetricConfig(), S: int = 100, alpha: float = 0.05,
                         seed: int = 0, method: str = "cx", threads: int = 1,
                         tol: float = CX_TOL, max_iter: int = CX_MAX_ITER,
                         time_cap: float | None = None) -> RegionResult:
    """Run the membership test at the points of the outer region only."""
    t0 = time.perf_counter()
    inside = [k for k, p in enumerate(outer.points) if p.in_outer]

    def run(k: int):
        th = model.theta_from_vector(outer.points[k].theta)
        return mc_membership_test(data, th, model, m, S, alpha, seed, method, tol=tol,
                                  max_iter=max_iter, time_cap=time_cap)

    decisions = parallel_map(run, inside, threads)
    points = [RegionPoint(theta=p.theta, t_star=p.t_star, in_outer=p.in_outer)
              for p in outer.points]
    for k, dec in zip(inside, decisions):
        pt = points[k]
        pt.t_n = dec.t_n
        pt.tau_fraction = dec.tau_fraction
        pt.in_exact = dec.accept
        pt.undecided = dec.undecided
    meta = dict(outer.meta)
    meta.update({"method": method, "exact_evaluated": len(inside),
                 "undecided_draws": int(sum(d.undecided for d in decisions)),
                 "time_cap_secs": time_cap})
    wall = dict(outer.wall_time, exact=time.perf_counter() - t0)
    return RegionResult(outer.param_names, points, meta, wall)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def write_region_csv(path, result: RegionResult) -> None:
    """One row per grid point: parameters, then :data:`REGION_COLUMNS`.

    Flags are written as 0/1; fields that were not evaluated are left empty.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(result.param_names) + list(REGION_COLUMNS))
        for p in result.points:
            w.writerow([_fmt(v) for v in p.theta]
                       + [_fmt(p.t_star), _fmt(p.in_outer), _fmt(p.t_n),
                          _fmt(p.tau_fraction), _fmt(p.in_exact)])


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
