"""Doerfler marking and the solve / estimate / mark / refine loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assembly import DEFAULT_CONFIG, KernelQuadratureConfig, assemble_rhs, assemble_V, assemble_W
from .benchmarks import BenchmarkProblem, energy_error
from .errors import AllIndicatorsZero
from .estimator import EstimatorReport, eta_local
from .geometry import Mesh, mesh_ratio
from .refinement import refine, refine_uniform
from .solve import DiscreteFunction, galerkin_energy, solve_hyper_singular, solve_weakly_singular


@dataclass(frozen=True)
class AdaptiveConfig:
    theta: float = 0.5
    max_elements: int = 2000
    max_iterations: int = 100
    variant: Optional[str] = None  # defaults to the problem's operator

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if self.max_elements < 1 or self.max_iterations < 0:
            raise ValueError("max_elements must be positive, max_iterations non-negative")
        if self.variant not in (None, "hyper", "weak"):
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass(frozen=True)
class LevelRow:
    level: int
    N: int
    eta_total: float
    marked: int
    energy: float
    error: Optional[float]
    kappa: float


CSV_COLUMNS = ("level", "N", "eta_total", "error_energy", "energy", "kappa", "marked")


def _fmt(x) -> str:
    if x is None:
        return "nan"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


@dataclass(eq=False)
class AdaptiveRunRecord:
    problem: str
    rows: list = field(default_factory=list)
    final_mesh: Optional[Mesh] = None
    final_solution: Optional[DiscreteFunction] = None

    def to_csv(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for r in self.rows:
            lines.append(",".join(_fmt(v) for v in (r.level, r.N, r.eta_total, r.error,
                                                      r.energy, r.kappa, r.marked)))
        return "\n".join(lines) + "\n"

    def column(self, name: str) -> np.ndarray:
        key = "error" if name == "error_energy" else name
        return np.array([np.nan if getattr(r, key) is None else getattr(r, key) for r in self.rows],
                        dtype=float)


def doerfler_mark(indicators_sq, theta: float) -> list[int]:
    """Smallest greedy prefix of the descending indicators carrying ``theta`` of the total."""
    eta = np.asarray(indicators_sq, float)
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    if np.any(eta < 0) or not np.all(np.isfinite(eta)):
        raise ValueError("indicators must be finite and non-negative")
    total = math.fsum(eta)
    if total == 0.0:
        raise AllIndicatorsZero("all indicators vanish")
    order = np.lexsort((np.arange(len(eta)), -eta))
    prefix = np.cumsum(eta[order])
    k = int(np.searchsorted(prefix, theta * total, side="left"))
    k = min(k, len(eta) - 1)
    # guard the comparison against summation order
    while math.fsum(eta[order[:k + 1]]) < theta * total and k < len(eta) - 1:
        k += 1
    while k > 0 and math.fsum(eta[order[:k]]) >= theta * total:
        k -= 1
    return sorted(int(i) for i in order[:k + 1])


class Discretization:
    """Galerkin data of one problem on a sequence of meshes.

    Keeps the last matrices so that entries between elements surviving a
    refinement are copied instead of recomputed.
    """

    def __init__(self, problem: BenchmarkProblem, cfg: KernelQuadratureConfig = DEFAULT_CONFIG):
        self.problem = problem
        self.cfg = cfg
        self._mesh = None
        self._V = None
        self._tables = None

    def solve(self, mesh: Mesh):
        """Returns ``(solution, energy matrix)`` on ``mesh``."""
        p, cfg = self.problem, self.cfg
        reuse_v = (self._mesh, self._V) if self._mesh is not None else None
        V = assemble_V(mesh, cfg, reuse=reuse_v)
        reuse_t = (self._mesh, self._tables) if self._tables else None
        load, tables = assemble_rhs(mesh, p.space, p.rhs, cfg, reuse=reuse_t, return_tables=True)
        self._mesh, self._V, self._tables = mesh, V, tables
        if p.operator == "weak":
            return solve_weakly_singular(mesh, cfg=cfg, V=V, load=load), V
        W = assemble_W(mesh, cfg, V=V)
        return solve_hyper_singular(mesh, cfg=cfg, W=W, load=load), W


@dataclass(frozen=True, eq=False)
class LevelResult:
    mesh: Mesh
    solution: DiscreteFunction
    matrix: np.ndarray
    report: EstimatorReport
    energy: float
    error: Optional[float]


def _level(disc: Discretization, mesh: Mesh, variant: str) -> LevelResult:
    u, A = disc.solve(mesh)
    report = eta_local(u, variant)
    energy = galerkin_energy(u, A)
    err = None
    if disc.problem.energy_reference is not None:
        err = energy_error(u, disc.problem, A).value
    return LevelResult(mesh, u, A, report, energy, err)


def _row(level: int, res: LevelResult, marked: int) -> LevelRow:
    return LevelRow(level, res.mesh.n_elements, res.report.total, marked, res.energy, res.error,
                    mesh_ratio(res.mesh))


def adaptive_loop(problem: BenchmarkProblem, cfg: AdaptiveConfig = AdaptiveConfig(),
                  quad: KernelQuadratureConfig = DEFAULT_CONFIG, estimator=None) -> AdaptiveRunRecord:
    """Solve, estimate, mark, refine until the next mesh exceeds ``max_elements``.

    ``estimator(solution, variant) -> EstimatorReport`` replaces the default
    indicators (used to test the verification suite).
    """
    variant = cfg.variant or problem.operator
    est = estimator or eta_local
    disc = Discretization(problem, quad)
    record = AdaptiveRunRecord(problem.name)
    mesh = problem.initial_mesh()
    level = 0
    while True:
        res = _level(disc, mesh, variant)
        if estimator is not None:
            res = LevelResult(res.mesh, res.solution, res.matrix, est(res.solution, variant),
                              res.energy, res.error)
        record.final_mesh, record.final_solution = mesh, res.solution
        if level >= cfg.max_iterations:
            record.rows.append(_row(level, res, 0))
            break
        try:
            marked = doerfler_mark(res.report.local, cfg.theta)
        except AllIndicatorsZero:
            record.rows.append(_row(level, res, 0))
            break
        new = refine(mesh, marked).mesh
        if new.n_elements > cfg.max_elements:
            record.rows.append(_row(level, res, 0))
            break
        record.rows.append(_row(level, res, len(marked)))
        mesh = new
        level += 1
    return record


def uniform_sequence(problem: BenchmarkProblem, levels: int, quad: KernelQuadratureConfig = DEFAULT_CONFIG,
                     variant: Optional[str] = None, estimator=None, keep=False):
    """Uniform refinements of the initial mesh, ``levels`` meshes in total.

    Returns ``(record, results, fathers)``; ``results`` holds the per-level
    data when ``keep`` is set, ``fathers[l]`` maps level ``l + 1`` to ``l``.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    variant = variant or problem.operator
    disc = Discretization(problem, quad)
    record = AdaptiveRunRecord(problem.name)
    results, fathers = [], []
    mesh = problem.initial_mesh()
    for level in range(levels):
        res = _level(disc, mesh, variant)
        if estimator is not None:
            res = LevelResult(res.mesh, res.solution, res.matrix, estimator(res.solution, variant),
                              res.energy, res.error)
        marked = mesh.n_elements if level < levels - 1 else 0
        record.rows.append(_row(level, res, marked))
        record.final_mesh, record.final_solution = mesh, res.solution
        if keep:
            results.append(res)
        if level < levels - 1:
            step = refine_uniform(mesh)
            fathers.append(step.father_of)
            mesh = step.mesh
    return record, results, fathers


def estimator_reduction_check(record: AdaptiveRunRecord, theta: float) -> np.ndarray:
    """``alpha_l = max(0, eta_{l+1} - (1 - theta/2)^(1/2) eta_l)`` per step."""
    eta = record.column("eta_total")
    if len(eta) < 2:
        raise ValueError("need at least two levels")
    q = math.sqrt(1.0 - 0.5 * theta)
    return np.maximum(0.0, eta[1:] - q * eta[:-1])
