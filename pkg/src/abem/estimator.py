"""Averaging (ZZ-type) error indicators.

The averaging operator maps piecewise constants to piecewise affine
functions through nodal patch means. The ``"weak"`` variant lets the
average jump at corners of the curve, the ``"hyper"`` variant is
continuous everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import derivative_matrix
from .errors import NotAUniformRefinement
from .geometry import Mesh
from .quadrature import gauss01
from .solve import DiscreteFunction, prolongate

VARIANTS = ("hyper", "weak")


@dataclass(frozen=True, eq=False)
class AveragedFunction:
    """Affine data per element: ``values[i] = (value at start, value at end)``."""

    mesh: Mesh
    values: np.ndarray
    variant: str

    def continuous_at(self) -> np.ndarray:
        """Per interior node (row of ``mesh.neighbour_pairs()``): no jump there."""
        pairs = self.mesh.neighbour_pairs()
        return self.values[pairs[:, 0], 1] == self.values[pairs[:, 1], 0]

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        """Values at local coordinates ``t`` in [0, 1] on every element, shape (N, len(t))."""
        t = np.asarray(t)
        return self.values[:, :1] * (1.0 - t) + self.values[:, 1:] * t


@dataclass(frozen=True, eq=False)
class EstimatorReport:
    local: np.ndarray
    total_sq: float
    variant: str

    @property
    def total(self) -> float:
        return float(np.sqrt(self.total_sq))

    def to_csv(self, mesh: Mesh) -> str:
        lines = ["element,length,indicator_sq"]
        for i, (h, e) in enumerate(zip(mesh.lengths, self.local)):
            lines.append(f"{i},{h:.17g},{e:.17g}")
        return "\n".join(lines) + "\n"


def derivative_P0(u: DiscreteFunction) -> DiscreteFunction:
    """Arclength derivative of a nodal function, element by element."""
    if not u.is_nodal:
        raise ValueError("derivative_P0 needs an S1 function")
    return DiscreteFunction(u.mesh, "P0", derivative_matrix(u.mesh) @ u.coefficients)


def clement_average(v: DiscreteFunction, variant: str) -> AveragedFunction:
    if v.space != "P0":
        raise ValueError("clement_average acts on piecewise constants")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    mesh = v.mesh
    c = v.coefficients
    h = mesh.lengths
    vals = np.column_stack([c, c]).astype(float)  # tips keep the one-element mean
    pairs = mesh.neighbour_pairs()
    i, j = pairs[:, 0], pairs[:, 1]
    avg = (h[i] * c[i] + h[j] * c[j]) / (h[i] + h[j])
    if variant == "weak":
        jump = mesh.corner_nodes()[mesh.elements[i, 1]]
    else:
        jump = np.zeros(len(pairs), dtype=bool)
    vals[i[~jump], 1] = avg[~jump]
    vals[j[~jump], 0] = avg[~jump]
    return AveragedFunction(mesh, vals, variant)


def _indicators(w: DiscreteFunction, averaged: AveragedFunction) -> np.ndarray:
    x, wt = gauss01(2)
    diff = w.coefficients[:, None] - averaged.evaluate(x)
    h = w.mesh.lengths
    return h * h * (diff * diff @ wt)


def eta_local(u_or_phi: DiscreteFunction, variant: str | None = None) -> EstimatorReport:
    """Indicators ``length(T) * ||(1 - A) w||^2_{L2(T)}``.

    ``w`` is the arclength derivative for nodal input, the function itself
    for piecewise constants.
    """
    if variant is None:
        variant = "hyper" if u_or_phi.is_nodal else "weak"
    w = derivative_P0(u_or_phi) if u_or_phi.is_nodal else u_or_phi
    local = _indicators(w, clement_average(w, variant))
    return EstimatorReport(local, float(local.sum()), variant)


def coarse_mean_projection(v: DiscreteFunction, pairing: np.ndarray, coarse: Mesh) -> DiscreteFunction:
    """Length-weighted mean of the two sons of every coarse element."""
    if v.space != "P0":
        raise ValueError("coarse_mean_projection acts on piecewise constants")
    pairing = np.asarray(pairing)
    if pairing.shape != (coarse.n_elements, 2) or v.mesh.n_elements != 2 * coarse.n_elements:
        raise NotAUniformRefinement("pairing does not match the meshes")
    h = v.mesh.lengths
    s0, s1 = pairing[:, 0], pairing[:, 1]
    c = v.coefficients
    vals = (h[s0] * c[s0] + h[s1] * c[s1]) / (h[s0] + h[s1])
    return DiscreteFunction(coarse, "P0", vals)


def two_level_difference_norm(u_h: DiscreteFunction, u_2h: DiscreteFunction,
                              fine_matrix: np.ndarray, father_of) -> float:
    """Energy norm of ``u_h - u_2h`` evaluated with the fine Galerkin matrix."""
    coarse_on_fine = prolongate(u_2h, u_h.mesh, father_of)
    d = u_h.coefficients - coarse_on_fine.coefficients
    if fine_matrix.shape != (len(d), len(d)):
        raise ValueError("matrix does not match the fine space")
    return float(np.sqrt(max(d @ fine_matrix @ d, 0.0)))
