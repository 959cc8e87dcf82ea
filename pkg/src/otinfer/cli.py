"""Command-line front end: ``otinfer {simulate,test,region,coverage,power}``.

Settings come from an optional JSON config (``--config``, must carry
``"schema_version": 1``) and are overridden by flags. All randomness derives
from ``--seed``: replication ``r`` at sample size ``n`` draws its dataset
from ``derive_seed(seed, "dataset", n, r)`` and its Monte Carlo latent
samples from ``derive_seed(seed, "latent", n, r)``; ``simulate``, ``test``
and ``region`` use ``r = 0``. Output files are byte-identical for a given
config and seed at any thread count; wall times only go to
``timings.json`` when ``--timings`` is passed.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .entrygame import SELECTION_RULES, EntryGame, read_dataset_csv, write_dataset_csv
from .errors import ConfigError, OTInferenceError
from .inference import (mc_membership_test, order_statistic, outer_critical_draws, outer_stat,
                        critical_rank)
from .latent import derive_seed
from .model import MetricConfig
from .region import (ParameterGrid, compute_exact_region, compute_outer_region, parallel_map,
                     write_json, write_region_csv)

SCHEMA_VERSION = 1
COMMANDS = ("simulate", "test", "region", "coverage", "power")
METHODS = ("cx", "ncx")
MODELS = {"entry_game": EntryGame}
DEFAULT_THETA = {"beta0": 0.6, "beta1": 0.6, "delta": 0.3}


@dataclass
class RunConfig:
    model: str = "entry_game"
    players: int = 6
    d_x: int = 2
    n: list = field(default_factory=lambda: [50])
    S: int = 100
    alpha: list = field(default_factory=lambda: [0.05])
    seed: int = 0
    grid: list = field(default_factory=list)
    fixed: dict = field(default_factory=dict)
    selection: str = "uniform"
    lambda_x: float = 1.0
    tol: float = 1e-8
    max_iter: int = 500
    R: int = 100
    threads: int = 1
    out: str = "."
    theta: dict = field(default_factory=lambda: dict(DEFAULT_THETA))
    theta_alt: dict | None = None
    methods: list = field(default_factory=lambda: ["cx"])
    data: str | None = None
    time_cap_secs: float | None = None
    timings: bool = False

    def validate(self) -> "RunConfig":
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; available: {sorted(MODELS)}")
        if not self.n or any(int(v) != v or v < 1 for v in self.n):
            raise ConfigError(f"n must be a nonempty list of positive integers, got {self.n}")
        if not self.alpha or any(not 0.0 < a < 1.0 for a in self.alpha):
            raise ConfigError(f"alpha values must lie in (0, 1), got {self.alpha}")
        for name in ("S", "R", "threads", "players", "d_x", "max_iter"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.selection not in SELECTION_RULES:
            raise ConfigError(f"selection must be one of {SELECTION_RULES}, got {self.selection!r}")
        if not (math.isfinite(self.lambda_x) and self.lambda_x >= 0):
            raise ConfigError(f"lambda_x must be finite and >= 0, got {self.lambda_x}")
        if not self.tol > 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ConfigError(f"methods must be drawn from {METHODS}, got {self.methods}")
        if self.time_cap_secs is not None and not self.time_cap_secs > 0:
            raise ConfigError("time_cap_secs must be positive")
        self.n = [int(v) for v in self.n]
        self.alpha = [float(a) for a in self.alpha]
        return self


# ---------------------------------------------------------------------------
# parsing helpers

def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _assignments(text: str) -> dict[str, float]:
    """``name=value,...`` into a dict."""
    out = {}
    for part in text.split(","):
        name, sep, value = part.partition("=")
        if not sep or not name.strip():
            raise argparse.ArgumentTypeError(f"expected name=value pairs, got {text!r}")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{value!r} is not a number") from None
    return out


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    version = doc.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"config schema_version must be {SCHEMA_VERSION}, got {version!r}")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    for key in ("n", "alpha", "methods", "grid"):
        if key in doc and not isinstance(doc[key], list):
            doc[key] = [doc[key]]
    return doc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--config", help="JSON config file; flags override its values")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int)
    g.add_argument("--out", help="output directory")
    g.add_argument("--n", type=_ints, help="sample size(s), comma separated")
    g.add_argument("--S", type=int, dest="S", help="Monte Carlo critical draws")
    g.add_argument("--alpha", type=_floats, help="significance level(s), comma separated")
    g.add_argument("--players", type=int)
    g.add_argument("--selection", choices=SELECTION_RULES)
    g.add_argument("--lambda-x", type=float, dest="lambda_x")
    g.add_argument("--theta", type=_assignments, help="e.g. beta0=0.6,beta1=0.6,delta=0.3")
    g.add_argument("--method", type=lambda s: s.split(","), dest="methods",
                   help="critical statistic(s): cx, ncx")
    g.add_argument("--tol", type=float)
    g.add_argument("--max-iter", type=int, dest="max_iter")
    g.add_argument("--time-cap-secs", type=float, dest="time_cap_secs")
    g.add_argument("--timings", action="store_true", default=None,
                   help="also write wall times to timings.json")

    p = argparse.ArgumentParser(prog="otinfer",
                                description="Finite-sample confidence regions for incomplete models.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate an entry-game dataset")
    t = sub.add_parser("test", parents=[common], help="Monte Carlo membership test at one theta")
    t.add_argument("--data", help="dataset CSV")
    r = sub.add_parser("region", parents=[common], help="outer and exact confidence regions on a grid")
    r.add_argument("--data", help="dataset CSV")
    r.add_argument("--grid", action="append", help="axis name:lo:hi:count (repeatable)")
    r.add_argument("--fixed", type=_assignments, help="parameters held fixed, name=value,...")
    sub.add_parser("coverage", parents=[common], help="coverage of the true parameter")
    pw = sub.add_parser("power", parents=[common], help="rejection rate of the outer test")
    pw.add_argument("--theta-alt", type=_assignments, dest="theta_alt")
    for sp in (sub.choices["coverage"], pw):
        sp.add_argument("--R", type=int, dest="R", help="replications")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = load_config(args.config) if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


# ---------------------------------------------------------------------------
# commands

def _model(cfg: RunConfig):
    return MODELS[cfg.model](cfg.players, cfg.d_x)


def _theta(model, values: dict | None, what: str = "theta"):
    if values is None:
        raise ConfigError(f"{what} is required")
    try:
        return model.theta_from_dict(values)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def _single_n(cfg: RunConfig) -> int:
    if len(cfg.n) != 1:
        raise ConfigError("this command takes a single n")
    return cfg.n[0]


def _stderr(p: float, R: int) -> float:
    return math.sqrt(p * (1.0 - p) / R)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _load_data(cfg: RunConfig, model):
    if not cfg.data:
        raise ConfigError("--data is required")
    data = read_dataset_csv(cfg.data)
    if data.y.shape[1] != model.n_players or data.x.shape[2] != model.d_x:
        raise ConfigError(f"dataset has {data.y.shape[1]} players and {data.x.shape[2]} covariates; "
                          f"config says {model.n_players} and {model.d_x}")
    return data


def _meta(cfg: RunConfig, command: str, **extra) -> dict:
    meta = {"schema_version": SCHEMA_VERSION, "command": command}
    meta.update({k: v for k, v in asdict(cfg).items() if k not in ("threads", "out", "timings")})
    meta.update(extra)
    return meta


def cmd_simulate(cfg: RunConfig, out: Path) -> dict:
    model = _model(cfg)
    theta = _theta(model, cfg.theta)
    n = _single_n(cfg)
    ds, ls = derive_seed(cfg.seed, "dataset", n, 0), derive_seed(cfg.seed, "latent", n, 0)
    data = model.simulate(n, theta, cfg.selection, seed=ds, latent_seed=ls,
                          metric=MetricConfig(cfg.lambda_x))
    write_dataset_csv(out / "dataset.csv", data)
    write_json(out / "dataset.json", _meta(cfg, "simulate", dataset_seed=ds, latent_seed=ls,
                                           theta_true=dict(cfg.theta)))
    return {"rows": data.n * model.n_players}


def cmd_test(cfg: RunConfig, out: Path) -> dict:
    model = _model(cfg)
    theta = _theta(model, cfg.theta)
    data = _load_data(cfg, model)
    ls = derive_seed(cfg.seed, "latent", data.n, 0)
    m = MetricConfig(cfg.lambda_x)
    records = []
    for method in cfg.methods:
        dec = mc_membership_test(data, theta, model, m, cfg.S, cfg.alpha[0], ls, method,
                                 tol=cfg.tol, max_iter=cfg.max_iter, time_cap=cfg.time_cap_secs)
        records.append({
            "method": method, "t_n": dec.t_n, "tau_fraction": dec.tau_fraction,
            "s_evaluated": dec.s_evaluated, "undecided": dec.undecided,
            "ncx_fallbacks": dec.ncx_fallbacks,
            "decisions": [{"alpha": a, "accept": dec.accept_at(a)} for a in cfg.alpha],
        })
    write_json(out / "decision.json", _meta(cfg, "test", n=data.n, latent_seed=ls,
                                            results=records))
    return {"accept": {r["method"]: [d["accept"] for d in r["decisions"]] for r in records}}


def cmd_region(cfg: RunConfig, out: Path) -> dict:
    model = _model(cfg)
    data = _load_data(cfg, model)
    if not cfg.grid:
        raise ConfigError("region needs at least one --grid axis")
    grid = ParameterGrid.parse(cfg.grid, cfg.fixed)
    if len(cfg.alpha) != 1 or len(cfg.methods) != 1:
        raise ConfigError("region takes a single alpha and a single method")
    ls = derive_seed(cfg.seed, "latent", data.n, 0)
    m = MetricConfig(cfg.lambda_x)
    outer = compute_outer_region(grid, data, model, m, cfg.S, cfg.alpha[0], ls, cfg.threads)
    res = compute_exact_region(outer, data, model, m, cfg.S, cfg.alpha[0], ls, cfg.methods[0],
                               cfg.threads, cfg.tol, cfg.max_iter, cfg.time_cap_secs)
    write_region_csv(out / "region.csv", res)
    write_json(out / "region.json", _meta(cfg, "region", latent_seed=ls, c0=res.meta["c0"],
                                          exact_evaluated=res.meta["exact_evaluated"],
                                          undecided_draws=res.meta["undecided_draws"],
                                          csv_columns=list(res.param_names)
                                          + ["t_star", "in_outer", "t_n", "tau_fraction",
                                             "in_exact"]))
    return {"timings": res.wall_time,
            "points": len(res.points), "in_outer": int(res.outer_mask().sum()),
            "in_exact": int(res.exact_mask().sum())}


@dataclass
class CoverageRow:
    n: int
    level: float
    method: str
    coverage: float
    replications: int
    stderr: float
    undecided: int
    ncx_fallbacks: int


@dataclass
class CoverageReport:
    rows: list[CoverageRow]
    wall_time: dict

    HEADER = ["n", "level", "method", "coverage", "replications", "stderr", "undecided",
              "ncx_fallbacks"]

    def table(self) -> list[list]:
        return [[r.n, r.level, r.method, r.coverage, r.replications, r.stderr, r.undecided,
                 r.ncx_fallbacks] for r in self.rows]


def run_coverage(cfg: RunConfig) -> CoverageReport:
    """``R`` replications of simulate-then-test at the configured true theta."""
    model = _model(cfg)
    theta = _theta(model, cfg.theta)
    m = MetricConfig(cfg.lambda_x)
    alpha0 = max(cfg.alpha)
    rows, wall = [], {}
    for n in cfg.n:
        t0 = time.perf_counter()

        def rep(r: int, n=n):
            ds, ls = derive_seed(cfg.seed, "dataset", n, r), derive_seed(cfg.seed, "latent", n, r)
            data = model.simulate(n, theta, cfg.selection, seed=ds, latent_seed=ls, metric=m)
            out = {}
            for method in cfg.methods:
                dec = mc_membership_test(data, theta, model, m, cfg.S, alpha0, ls, method,
                                         tol=cfg.tol, max_iter=cfg.max_iter,
                                         time_cap=cfg.time_cap_secs)
                out[method] = ([dec.accept_at(a) for a in cfg.alpha], dec.undecided,
                               dec.ncx_fallbacks)
            return out

        results = parallel_map(rep, list(range(cfg.R)), cfg.threads)
        wall[str(n)] = time.perf_counter() - t0
        for method in cfg.methods:
            und = sum(res[method][1] for res in results)
            fb = sum(res[method][2] for res in results)
            for k, a in enumerate(cfg.alpha):
                cov = sum(res[method][0][k] for res in results) / cfg.R
                rows.append(CoverageRow(n, round(1.0 - a, 12), method, cov, cfg.R,
                                        _stderr(cov, cfg.R), und, fb))
    return CoverageReport(rows, wall)


def cmd_coverage(cfg: RunConfig, out: Path) -> dict:
    rep = run_coverage(cfg)
    _write_csv(out / "coverage.csv", CoverageReport.HEADER, rep.table())
    write_json(out / "coverage.json", _meta(cfg, "coverage"))
    return {"table": rep.table(), "timings": rep.wall_time}


def run_power(cfg: RunConfig) -> tuple[list[list], dict]:
    """Rejection frequency of ``theta_alt`` by the outer test, per ``n`` and alpha."""
    model = _model(cfg)
    theta = _theta(model, cfg.theta)
    alt = _theta(model, cfg.theta_alt, "theta_alt")
    m = MetricConfig(cfg.lambda_x)
    for a in cfg.alpha:
        critical_rank(cfg.S, a)
    table, wall = [], {}
    for n in cfg.n:
        t0 = time.perf_counter()

        def rep(r: int, n=n):
            ds, ls = derive_seed(cfg.seed, "dataset", n, r), derive_seed(cfg.seed, "latent", n, r)
            data = model.simulate(n, theta, cfg.selection, seed=ds, latent_seed=ls, metric=m)
            draws = outer_critical_draws(data.x, model, m, cfg.S, ls)
            t_star = outer_stat(data, alt, model, m, seed=ls)
            return [t_star > order_statistic(draws, cfg.S, a) for a in cfg.alpha]

        results = parallel_map(rep, list(range(cfg.R)), cfg.threads)
        wall[str(n)] = time.perf_counter() - t0
        for k, a in enumerate(cfg.alpha):
            rej = sum(res[k] for res in results)
            rate = rej / cfg.R
            table.append([n, a, cfg.R, rej, rate, _stderr(rate, cfg.R)])
    return table, wall


def cmd_power(cfg: RunConfig, out: Path) -> dict:
    table, wall = run_power(cfg)
    _write_csv(out / "power.csv", ["n", "alpha", "replications", "rejections", "rate", "stderr"],
               table)
    write_json(out / "power.json", _meta(cfg, "power"))
    return {"table": table, "timings": wall}


HANDLERS = {"simulate": cmd_simulate, "test": cmd_test, "region": cmd_region,
            "coverage": cmd_coverage, "power": cmd_power}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        summary = HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"otinfer: configuration error: {exc}", file=sys.stderr)
        return 2
    except (OTInferenceError, OSError, ValueError, RuntimeError) as exc:
        print(f"otinfer: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    timings = summary.pop("timings", None)
    if cfg.timings and timings is not None:
        write_json(out / "timings.json", timings)
    print(json.dumps(summary, default=lambda o: o.item() if isinstance(o, np.generic) else str(o)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
