"""Bisection with generation balancing.

Closure rule: an element may only be bisected if none of its neighbours
has a smaller generation; offending neighbours are bisected as well. This
keeps neighbouring generations within one of each other, hence
``mesh_ratio(refined) <= 2 * mesh_ratio(initial)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import NotAUniformRefinement
from .geometry import Mesh, _assemble


@dataclass(frozen=True, eq=False)
class RefinementResult:
    mesh: Mesh
    father_of: np.ndarray
    refined_set: frozenset


def _closure(mesh: Mesh, marked: Iterable[int]) -> set[int]:
    gen = mesh.generation
    todo = list(dict.fromkeys(int(i) for i in marked))
    out = set(todo)
    while todo:
        i = todo.pop()
        for j in (mesh.left(i), mesh.right(i)):
            if j >= 0 and j not in out and gen[j] < gen[i]:
                out.add(j)
                todo.append(j)
    return out


def _bisect(mesh: Mesh, refine: set[int]) -> RefinementResult:
    coords, arcl, nv, gen, edge, father = [], [], [], [], [], []
    total = mesh.curve.length
    for i in range(mesh.n_elements):
        a, b = mesh.elements[i]
        coords.append(mesh.coords[a])
        arcl.append(mesh.arclength[a])
        nv.append(mesh.node_vertex[a])
        if i in refine:
            s_end = mesh.arclength[b] if b != 0 or not mesh.closed else total
            coords.append(0.5 * (mesh.coords[a] + mesh.coords[b]))
            arcl.append(0.5 * (mesh.arclength[a] + s_end))
            nv.append(-1)
            gen += [mesh.generation[i] + 1] * 2
            edge += [mesh.edge[i]] * 2
            father += [i, i]
        else:
            gen.append(mesh.generation[i])
            edge.append(mesh.edge[i])
            father.append(i)
    if not mesh.closed:
        last = mesh.n_nodes - 1
        coords.append(mesh.coords[last])
        arcl.append(mesh.arclength[last])
        nv.append(mesh.node_vertex[last])
    new = _assemble(mesh.curve, coords, arcl, nv, gen, edge)
    father_of = np.array(father, dtype=np.int64)
    father_of.setflags(write=False)
    return RefinementResult(new, father_of, frozenset(refine))


def refine(mesh: Mesh, marked: Iterable[int]) -> RefinementResult:
    """Bisect ``marked`` plus whatever the generation closure requires."""
    marked = list(marked)
    if not marked:
        raise ValueError("marked set is empty")
    bad = [i for i in marked if not 0 <= int(i) < mesh.n_elements]
    if bad:
        raise IndexError(f"invalid element ids {bad}")
    return _bisect(mesh, _closure(mesh, marked))


def refine_uniform(mesh: Mesh) -> RefinementResult:
    return _bisect(mesh, set(range(mesh.n_elements)))


def coarse_fine_pairing(coarse: Mesh, fine: Mesh, father_of) -> np.ndarray:
    """Return an (N_coarse, 2) array with the two sons of each coarse element."""
    father_of = np.asarray(father_of)
    if fine.n_elements != 2 * coarse.n_elements or len(father_of) != fine.n_elements:
        raise NotAUniformRefinement("fine mesh does not have twice as many elements")
    order = np.argsort(father_of, kind="stable")
    sons = order.reshape(-1, 2)
    if not np.array_equal(father_of[sons[:, 0]], np.arange(coarse.n_elements)) \
            or not np.array_equal(father_of[sons[:, 1]], np.arange(coarse.n_elements)):
        raise NotAUniformRefinement("some coarse element does not have exactly two sons")
    h = fine.lengths
    if not np.allclose(h[sons[:, 0]] + h[sons[:, 1]], coarse.lengths, rtol=1e-12, atol=0) \
            or not np.allclose(h[sons[:, 0]], h[sons[:, 1]], rtol=1e-12, atol=0):
        raise NotAUniformRefinement("sons are not halves of their father")
    return sons
