"""Command line: ``abem run | rates | verify | list``."""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .adaptive import AdaptiveConfig, adaptive_loop, uniform_sequence
from .assembly import KernelQuadratureConfig
from .benchmarks import BENCHMARKS, get_benchmark
from .errors import AbemError, NumericalError, TooFewRows
from .verify import loglog_slope, run_suite

EXIT_FAILED_CHECK = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    benchmark: str = ""
    mode: str = "adaptive"
    theta: float = 0.5
    max_elements: int = 2000
    max_iterations: int = 100
    levels: int = 8
    variant: Optional[str] = None
    output: Optional[str] = None
    gauss_order: int = 16
    near_singular_subdivision_ratio: float = 0.5
    analytic_distance_threshold: float = 2.0

    def quadrature(self) -> KernelQuadratureConfig:
        return KernelQuadratureConfig(self.gauss_order, self.near_singular_subdivision_ratio,
                                      self.analytic_distance_threshold)


def _load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    flat = dict(data)
    flat.update(flat.pop("quadrature", {}))
    known = {f.name for f in fields(RunConfig)}
    unknown = set(flat) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return flat


def build_run_config(args) -> RunConfig:
    """Defaults, then the TOML file, then explicit flags."""
    values = {}
    if args.config:
        values.update(_load_toml(args.config))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    cfg = RunConfig(**values)
    if cfg.benchmark not in BENCHMARKS:
        raise ConfigError(f"unknown benchmark {cfg.benchmark!r}; choose from {', '.join(BENCHMARKS)}")
    if cfg.mode not in ("uniform", "adaptive"):
        raise ConfigError(f"mode must be uniform or adaptive, not {cfg.mode!r}")
    if cfg.levels < 1:
        raise ConfigError("levels must be >= 1")
    return cfg


def execute_run(cfg: RunConfig):
    problem = get_benchmark(cfg.benchmark)
    quad = cfg.quadrature()
    if cfg.mode == "uniform":
        record, _, _ = uniform_sequence(problem, cfg.levels, quad, variant=cfg.variant)
    else:
        acfg = AdaptiveConfig(cfg.theta, cfg.max_elements, cfg.max_iterations, cfg.variant)
        record = adaptive_loop(problem, acfg, quad)
    return record


def cmd_run(args) -> int:
    try:
        cfg = build_run_config(args)
        cfg.quadrature()
        if cfg.mode == "adaptive":
            AdaptiveConfig(cfg.theta, cfg.max_elements, cfg.max_iterations, cfg.variant)
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        record = execute_run(cfg)
    except (NumericalError, AbemError) as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    text = record.to_csv()
    if cfg.output:
        with open(cfg.output, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def read_table(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def fit_rates(table: dict, tail_fraction: float = 0.5, n_min: float = 0.0,
              n_max: float = np.inf) -> dict:
    """Slopes of log(eta) and log(error) against log(N) over the last rows."""
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError("tail_fraction must lie in (0, 1]")
    n = table.get("N", np.array([]))
    keep = (n >= n_min) & (n <= n_max)
    n = n[keep]
    if len(n) < 4:
        raise TooFewRows(f"need at least 4 rows, have {len(n)}")
    start = len(n) - max(2, int(round(tail_fraction * len(n))))
    out = {}
    for col in ("eta_total", "error_energy"):
        v = table[col][keep][start:]
        out[col] = loglog_slope(n[start:], v) if np.all(np.isfinite(v) & (v > 0)) else float("nan")
    return out


def cmd_rates(args) -> int:
    try:
        table = read_table(args.csv)
    except (OSError, KeyError, ValueError) as exc:
        print(f"config error: cannot read {args.csv}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rates = fit_rates(table, args.tail_fraction, args.n_min, args.n_max)
    except TooFewRows as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"eta_slope,{rates['eta_total']:.17g}")
    print(f"error_slope,{rates['error_energy']:.17g}")
    return 0


def cmd_verify(args) -> int:
    if args.benchmark not in BENCHMARKS:
        print(f"config error: unknown benchmark {args.benchmark!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        checks = run_suite(get_benchmark(args.benchmark), args.levels, args.theta, args.max_elements)
    except TooFewRows as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, AbemError) as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for c in checks:
        print(c.line())
    return 0 if all(c.passed for c in checks) else EXIT_FAILED_CHECK


def cmd_list(args) -> int:
    for name, make in BENCHMARKS.items():
        p = make()
        ref = p.energy_reference
        print(f"{name}: operator={p.operator} initial_N={p.initial_mesh().n_elements} "
              f"uniform_rate={p.expected_uniform_rate:.4g} adaptive_rate={p.expected_adaptive_rate:.4g} "
              f"reference={ref.kind}:{ref.value!r}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="abem", description="Adaptive BEM with averaging estimators.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a benchmark and write the convergence table")
    run.add_argument("benchmark", nargs="?")
    run.add_argument("--config", help="TOML file; flags override its values")
    run.add_argument("--mode", choices=("uniform", "adaptive"))
    run.add_argument("--theta", type=float)
    run.add_argument("--max-elements", dest="max_elements", type=int)
    run.add_argument("--max-iterations", dest="max_iterations", type=int)
    run.add_argument("--levels", type=int, help="number of meshes in uniform mode")
    run.add_argument("--variant", choices=("hyper", "weak"))
    run.add_argument("--output", "-o")
    run.add_argument("--gauss-order", dest="gauss_order", type=int)
    run.add_argument("--subdivision-ratio", dest="near_singular_subdivision_ratio", type=float)
    run.add_argument("--analytic-threshold", dest="analytic_distance_threshold", type=float)
    run.set_defaults(func=cmd_run)

    rates = sub.add_parser("rates", help="fit convergence slopes from a run table")
    rates.add_argument("csv")
    rates.add_argument("--tail-fraction", type=float, default=0.5)
    rates.add_argument("--n-min", type=float, default=0.0)
    rates.add_argument("--n-max", type=float, default=np.inf)
    rates.set_defaults(func=cmd_rates)

    ver = sub.add_parser("verify", help="run the estimator checks on a benchmark")
    ver.add_argument("benchmark")
    ver.add_argument("--levels", type=int, default=6)
    ver.add_argument("--theta", type=float, default=0.5)
    ver.add_argument("--max-elements", type=int, default=1000)
    ver.set_defaults(func=cmd_verify)

    lst = sub.add_parser("list", help="list the benchmarks")
    lst.set_defaults(func=cmd_list)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if args.command == "run" and args.benchmark is None and not args.config:
        print("config error: no benchmark given", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
