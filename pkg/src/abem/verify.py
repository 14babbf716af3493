"""Checks of the estimator theory on concrete runs."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .adaptive import AdaptiveConfig, adaptive_loop, doerfler_mark, estimator_reduction_check, uniform_sequence
from .assembly import DEFAULT_CONFIG
from .benchmarks import BenchmarkProblem
from .errors import TooFewRows
from .estimator import two_level_difference_norm

RATIO_SPREAD = 10.0
DRIFT_TOL = 0.15
EFFICIENCY_BOUND = 10.0


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def loglog_slope(n, values) -> float:
    n, v = np.asarray(n, float), np.asarray(values, float)
    return float(np.polyfit(np.log(n), np.log(v), 1)[0])


def reliability_ratios(results, fathers) -> np.ndarray:
    """``|||u_h - u_2h||| / eta_h`` for consecutive uniform levels."""
    out = []
    for coarse, fine, fat in zip(results[:-1], results[1:], fathers):
        diff = two_level_difference_norm(fine.solution, coarse.solution, fine.matrix, fat)
        out.append(diff / fine.report.total)
    return np.array(out)


def check_reliability(n, ratios) -> CheckResult:
    spread = ratios.max() / ratios.min()
    drift = loglog_slope(n, ratios)
    ok = spread <= RATIO_SPREAD and abs(drift) <= DRIFT_TOL
    return CheckResult("reliability", ok,
                       f"ratios in [{ratios.min():.4g}, {ratios.max():.4g}], spread {spread:.3g}, "
                       f"drift {drift:+.3f}")


def check_efficiency(n, eta, err) -> CheckResult:
    ratio = eta / err
    drift = loglog_slope(n, ratio)
    ok = bool(np.all(np.isfinite(ratio))) and ratio.max() <= EFFICIENCY_BOUND and drift <= DRIFT_TOL
    return CheckResult("efficiency", ok, f"eta/error max {ratio.max():.4g}, drift {drift:+.3f}")


def check_saturation(err) -> CheckResult:
    q = err[1:] / err[:-1]
    return CheckResult("saturation", bool(np.all(q < 1.0)),
                       f"error ratios fine/coarse in [{q.min():.4g}, {q.max():.4g}]")


def check_estimator_reduction(record, theta) -> CheckResult:
    alpha = estimator_reduction_check(record, theta)
    eta = record.column("eta_total")
    quarter = max(1, len(alpha) // 4)
    first, last = alpha[:quarter].mean(), alpha[-quarter:].mean()
    tail = eta[len(eta) // 2:]
    monotone = bool(np.all(np.diff(tail) < 0))
    # alpha identically zero means exact contraction, the limit case of alpha -> 0
    ok = (last < first or last == 0.0) and monotone
    return CheckResult("estimator-reduction", ok,
                       f"mean alpha first quarter {first:.4g}, last quarter {last:.4g}, "
                       f"eta decreasing on second half: {monotone}")


def _minimal_cardinality(eta, theta) -> int:
    total = math.fsum(eta)
    for k in range(1, len(eta) + 1):
        for sub in itertools.combinations(range(len(eta)), k):
            if math.fsum(eta[list(sub)]) >= theta * total:
                return k
    return len(eta)


def check_doerfler(trials: int = 200, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(trials):
        n = int(rng.integers(1, 13))
        eta = rng.random(n) ** 3
        theta = float(rng.uniform(0.05, 0.95))
        if len(doerfler_mark(eta, theta)) != _minimal_cardinality(eta, theta):
            bad += 1
    return CheckResult("doerfler-minimality", bad == 0, f"{trials - bad}/{trials} random vectors match")


def run_suite(problem: BenchmarkProblem, levels: int, theta: float = 0.5, max_elements: int = 1000,
              quad=DEFAULT_CONFIG, estimator=None) -> list[CheckResult]:
    """All checks for one benchmark; ``levels`` uniform meshes are used."""
    if levels < 2:
        raise TooFewRows("need at least two uniform levels")
    record, results, fathers = uniform_sequence(problem, levels, quad, estimator=estimator, keep=True)
    n = record.column("N")
    eta = record.column("eta_total")
    checks = [check_reliability(n[1:], reliability_ratios(results, fathers))]
    if problem.energy_reference is not None:
        err = record.column("error_energy")
        checks.append(check_efficiency(n, eta, err))
        checks.append(check_saturation(err))
    adaptive = adaptive_loop(problem, AdaptiveConfig(theta=theta, max_elements=max_elements), quad,
                             estimator=estimator)
    checks.append(check_estimator_reduction(adaptive, theta))
    checks.append(check_doerfler())
    return checks
