"""Galerkin solves in the constrained trial spaces."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .assembly import DEFAULT_CONFIG, KernelQuadratureConfig, RhsSpec, assemble_rhs, assemble_V, assemble_W
from .errors import IncompatibleRhs, NotSPD
from .geometry import Mesh

SPACES = ("P0", "S1_full", "S1_tip_zero", "S1_mean_zero")


@dataclass(frozen=True, eq=False)
class DiscreteFunction:
    """Coefficients on ``mesh``: one per element (P0) or one per node (S1).

    S1 coefficient vectors always cover all nodes; on ``S1_tip_zero`` the
    tip entries are zero.
    """

    mesh: Mesh
    space: str
    coefficients: np.ndarray

    def __post_init__(self):
        if self.space not in SPACES:
            raise ValueError(f"unknown space {self.space!r}")
        n = self.mesh.n_elements if self.space == "P0" else self.mesh.n_nodes
        if len(self.coefficients) != n:
            raise ValueError(f"{self.space} on this mesh needs {n} coefficients")

    @property
    def is_nodal(self) -> bool:
        return self.space != "P0"


@dataclass(frozen=True, eq=False)
class GalerkinSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    constraint: str  # "none" | "tip_rows_removed" | "lagrange_mean_zero"


def _cholesky(A: np.ndarray):
    try:
        return sla.cho_factor(A, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NotSPD(str(exc)) from None


def node_masses(mesh: Mesh) -> np.ndarray:
    """``<phi_i, 1>`` for every hat function."""
    out = np.zeros(mesh.n_nodes)
    half = 0.5 * mesh.lengths
    np.add.at(out, mesh.elements[:, 0], half)
    np.add.at(out, mesh.elements[:, 1], half)
    return out


def solve_weakly_singular(mesh: Mesh, rhs: Optional[RhsSpec] = None,
                          cfg: KernelQuadratureConfig = DEFAULT_CONFIG,
                          V: Optional[np.ndarray] = None,
                          load: Optional[np.ndarray] = None) -> DiscreteFunction:
    """Piecewise-constant Galerkin solution of ``V phi = f``.

    Precomputed ``V`` and ``load`` may be passed to skip assembly.
    """
    if V is None:
        V = assemble_V(mesh, cfg)
    if load is None:
        load = assemble_rhs(mesh, "P0", rhs, cfg)
    x = sla.cho_solve(_cholesky(V), load)
    return DiscreteFunction(mesh, "P0", x)


def solve_hyper_singular(mesh: Mesh, rhs: Optional[RhsSpec] = None,
                         cfg: KernelQuadratureConfig = DEFAULT_CONFIG,
                         W: Optional[np.ndarray] = None,
                         load: Optional[np.ndarray] = None) -> DiscreteFunction:
    """Hat-function Galerkin solution of ``W u = f``.

    Open curves: tip rows and columns are removed. Closed curves: the
    mean-zero constraint enters through one Lagrange multiplier.
    """
    if W is None:
        W = assemble_W(mesh, cfg)
    if load is None:
        load = assemble_rhs(mesh, "S1", rhs, cfg)
    if not mesh.closed:
        free = np.ones(mesh.n_nodes, dtype=bool)
        free[list(mesh.tips)] = False
        x = np.zeros(mesh.n_nodes)
        Wf = W[np.ix_(free, free)]
        x[free] = sla.cho_solve(_cholesky(Wf), load[free])
        return DiscreteFunction(mesh, "S1_tip_zero", x)
    scale = float(np.sum(np.abs(load)))
    if abs(load.sum()) > 1e-8 * scale:
        raise IncompatibleRhs(f"<f, 1> = {load.sum():.3e} on a closed curve")
    x, _ = _solve_mean_zero(W, load, node_masses(mesh))
    return DiscreteFunction(mesh, "S1_mean_zero", x)


def _solve_mean_zero(W, load, c):
    """Saddle system ``[[W, c], [c^T, 0]] [x, lam] = [b, 0]`` by block elimination.

    ``W`` is singular (constants), ``W + c c^T`` is SPD and coincides with
    ``W`` on the constrained subspace.
    """
    fac = _cholesky(W + np.outer(c, c))
    y_b = sla.cho_solve(fac, load)
    y_c = sla.cho_solve(fac, c)
    lam = np.dot(c, y_b) / np.dot(c, y_c)
    return y_b - lam * y_c, lam


def galerkin_energy(u: DiscreteFunction, matrix: np.ndarray) -> float:
    x = u.coefficients
    return float(x @ matrix @ x)


def prolongate(u: DiscreteFunction, fine: Mesh, father_of) -> DiscreteFunction:
    """Represent a coarse discrete function on a refinement of its mesh."""
    father_of = np.asarray(father_of)
    if u.space == "P0":
        return DiscreteFunction(fine, "P0", u.coefficients[father_of])
    coarse = u.mesh
    c = u.coefficients
    x = np.empty(fine.n_nodes)
    for s in range(fine.n_elements):
        f = father_of[s]
        second_son = s > 0 and father_of[s - 1] == f
        a, b = coarse.elements[f]
        x[s] = 0.5 * (c[a] + c[b]) if second_son else c[a]
    if not fine.closed:
        x[-1] = c[-1]
    return DiscreteFunction(fine, u.space, x)
