"""Polygonal curves and their partitions into affine segments.

A :class:`Mesh` stores its elements in curve order, so the neighbours of
element ``i`` are ``i - 1`` and ``i + 1`` (cyclically on closed curves).
Meshes are immutable; refinement returns a new mesh.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DegenerateCurve, GeometryError, SmoothComponentTooCoarse

CORNER_ANGLE_TOL = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if v == 0 else (1 if v > 0 else -1)

    def on_segment(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on_segment(p1, p2, q1)) or (o2 == 0 and on_segment(p1, p2, q2))
            or (o3 == 0 and on_segment(q1, q2, p1)) or (o4 == 0 and on_segment(q1, q2, p2)))


@dataclass(frozen=True, eq=False)
class Curve:
    """Simple polyline; closed curves are oriented by their vertex order.

    ``corners`` holds the vertex indices at which the tangent jumps. It is
    detected automatically; ``extra_corners`` may declare further ones.
    """

    vertices: np.ndarray
    closed: bool
    corners: frozenset = field(default=frozenset())

    def __init__(self, vertices, closed: bool, extra_corners: Sequence[int] = ()):
        v = _frozen(vertices)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 2:
            raise GeometryError("vertices must be a (K, 2) array with K >= 2")
        if not np.all(np.isfinite(v)):
            raise GeometryError("non-finite vertex coordinates")
        if closed and len(v) < 3:
            raise GeometryError("a closed curve needs at least 3 vertices")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "closed", bool(closed))
        lengths = self.edge_lengths
        if np.any(lengths == 0.0):
            raise DegenerateCurve("zero-length edge")
        self._check_simple()
        corners = set(int(c) for c in extra_corners)
        corners.update(self._detect_corners())
        object.__setattr__(self, "corners", frozenset(corners))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.vertices) if self.closed else len(self.vertices) - 1

    def edge(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices[k], self.vertices[(k + 1) % self.n_vertices]

    @property
    def edge_lengths(self) -> np.ndarray:
        v = self.vertices
        w = np.roll(v, -1, axis=0) if self.closed else v[1:]
        return np.hypot(*(w - v[: len(w)]).T)

    @property
    def length(self) -> float:
        return float(self.edge_lengths.sum())

    def _check_simple(self) -> None:
        m = self.n_edges
        for i in range(m):
            p1, p2 = self.edge(i)
            for j in range(i + 1, m):
                adjacent = j == i + 1 or (self.closed and i == 0 and j == m - 1)
                q1, q2 = self.edge(j)
                if adjacent:
                    # adjacent edges may only share their common vertex
                    d1, d2 = p2 - p1, q2 - q1
                    if i == 0 and j == m - 1 and self.closed:
                        d1, d2 = d2, d1
                    cross = d1[0] * d2[1] - d1[1] * d2[0]
                    if cross == 0 and np.dot(d1, d2) < 0:
                        raise GeometryError(f"edges {i} and {j} fold back onto each other")
                    continue
                if _segments_intersect(p1, p2, q1, q2):
                    raise GeometryError(f"curve is not simple: edges {i} and {j} intersect")

    def _detect_corners(self) -> list[int]:
        v = self.vertices
        k = len(v)
        inner = range(k) if self.closed else range(1, k - 1)
        out = []
        for i in inner:
            d_in = v[i] - v[i - 1]
            d_out = v[(i + 1) % k] - v[i]
            ang = np.arctan2(d_in[0] * d_out[1] - d_in[1] * d_out[0], np.dot(d_in, d_out))
            if abs(ang) >= CORNER_ANGLE_TOL:
                out.append(i)
        return out

    def to_text(self) -> str:
        lines = [f"{'closed' if self.closed else 'open'} {self.n_vertices}"]
        for i, (x, y) in enumerate(self.vertices):
            tag = " corner" if i in self.corners else ""
            lines.append(f"{float(x)!r} {float(y)!r}{tag}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Curve":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        kind, count = lines[0].split()
        if kind not in ("open", "closed"):
            raise GeometryError(f"bad curve header {lines[0]!r}")
        verts, corners = [], []
        for i, ln in enumerate(lines[1:1 + int(count)]):
            parts = ln.split()
            verts.append((float(parts[0]), float(parts[1])))
            if len(parts) > 2 and parts[2] == "corner":
                corners.append(i)
        return cls(verts, kind == "closed", extra_corners=corners)


@dataclass(frozen=True, eq=False)
class Patch:
    center: int
    members: tuple


@dataclass(frozen=True, eq=False)
class Mesh:
    """Partition of a :class:`Curve` into segments, stored in curve order.

    ``node_vertex[k]`` is the curve vertex that node ``k`` sits on, or -1.
    ``edge[i]`` is the curve edge that element ``i`` lies in.
    """

    curve: Curve
    coords: np.ndarray
    arclength: np.ndarray
    node_vertex: np.ndarray
    elements: np.ndarray
    generation: np.ndarray
    edge: np.ndarray

    def __post_init__(self):
        for name, dt in (("coords", float), ("arclength", float), ("node_vertex", np.int64),
                         ("elements", np.int64), ("generation", np.int64), ("edge", np.int64)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dt))
        a, b = self.coords[self.elements[:, 0]], self.coords[self.elements[:, 1]]
        object.__setattr__(self, "_start", _frozen(a))
        object.__setattr__(self, "_end", _frozen(b))
        lengths = np.hypot(*(b - a).T)
        if np.any(lengths <= 0):
            raise DegenerateCurve("mesh contains a zero-length element")
        object.__setattr__(self, "_lengths", _frozen(lengths))

    @property
    def closed(self) -> bool:
        return self.curve.closed

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def lengths(self) -> np.ndarray:
        return self._lengths

    @property
    def start(self) -> np.ndarray:
        return self._start

    @property
    def end(self) -> np.ndarray:
        return self._end

    @property
    def tangents(self) -> np.ndarray:
        return (self.end - self.start) / self.lengths[:, None]

    @property
    def normals(self) -> np.ndarray:
        """Unit normals; outward for counter-clockwise closed curves."""
        t = self.tangents
        return np.column_stack([t[:, 1], -t[:, 0]])

    @property
    def tips(self) -> tuple[int, ...]:
        return () if self.closed else (0, self.n_nodes - 1)

    def left(self, i: int) -> int:
        if i > 0:
            return i - 1
        return self.n_elements - 1 if self.closed else -1

    def right(self, i: int) -> int:
        if i < self.n_elements - 1:
            return i + 1
        return 0 if self.closed else -1

    def neighbour_pairs(self) -> np.ndarray:
        """(i, i+1) pairs of neighbouring elements, one row per interior node."""
        n = self.n_elements
        i = np.arange(n if self.closed else n - 1)
        return np.column_stack([i, (i + 1) % n])

    def corner_nodes(self) -> np.ndarray:
        """Boolean mask of nodes sitting on a corner of the curve."""
        corners = np.array(sorted(self.curve.corners), dtype=np.int64)
        return np.isin(self.node_vertex, corners) & (self.node_vertex >= 0)

    def smooth_components(self) -> list[list[int]]:
        """Maximal runs of elements between corners and tips."""
        n = self.n_elements
        cut = self.corner_nodes()
        # node shared by elements i and i+1 is elements[i, 1]
        breaks = [i for i in range(n if self.closed else n - 1) if cut[self.elements[i, 1]]]
        if not self.closed:
            comps, cur = [], [0]
            for i in range(1, n):
                if (i - 1) in breaks:
                    comps.append(cur)
                    cur = []
                cur.append(i)
            comps.append(cur)
            return comps
        if not breaks:
            return [list(range(n))]
        comps = []
        for a, b in zip(breaks, breaks[1:] + [breaks[0] + n]):
            comps.append([(k % n) for k in range(a + 1, b + 1)])
        return comps

    def to_text(self) -> str:
        lines = [self.curve.to_text().rstrip("\n"), f"mesh {self.n_nodes} {self.n_elements}"]
        for s, (x, y), v in zip(self.arclength, self.coords, self.node_vertex):
            lines.append(f"{float(s)!r} {float(x)!r} {float(y)!r} {int(v)}")
        for g, e in zip(self.generation, self.edge):
            lines.append(f"{int(g)} {int(e)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Mesh":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        k = int(lines[0].split()[1])
        curve = Curve.from_text("\n".join(lines[: k + 1]))
        _, m, n = lines[k + 1].split()
        m, n = int(m), int(n)
        nodes = [ln.split() for ln in lines[k + 2: k + 2 + m]]
        elems = [ln.split() for ln in lines[k + 2 + m: k + 2 + m + n]]
        return _assemble(curve,
                         coords=[(float(p[1]), float(p[2])) for p in nodes],
                         arclength=[float(p[0]) for p in nodes],
                         node_vertex=[int(p[3]) for p in nodes],
                         generation=[int(e[0]) for e in elems],
                         edge=[int(e[1]) for e in elems])


def _assemble(curve, coords, arclength, node_vertex, generation, edge) -> Mesh:
    n = len(generation)
    i = np.arange(n)
    elements = np.column_stack([i, (i + 1) % n if curve.closed else i + 1])
    return Mesh(curve, np.asarray(coords, float), np.asarray(arclength, float),
                np.asarray(node_vertex), elements, np.asarray(generation), np.asarray(edge))


def build_mesh(curve: Curve, elements_per_edge: Union[int, Sequence[int]],
               min_component_elements: int = 2) -> Mesh:
    """Uniformly subdivide every curve edge.

    ``elements_per_edge`` is either one count for all edges or one per edge.
    Every smooth component must carry ``min_component_elements`` elements;
    the jump-aware averaging of the weakly-singular estimator needs two.
    """
    m = curve.n_edges
    counts = [elements_per_edge] * m if np.isscalar(elements_per_edge) else list(elements_per_edge)
    if len(counts) != m or any(int(c) < 1 for c in counts):
        raise GeometryError("elements_per_edge must be >= 1 for each edge")
    coords, arcl, nv, edge = [], [], [], []
    s0 = 0.0
    for k, c in enumerate(counts):
        a, b = curve.edge(k)
        length = float(np.hypot(*(b - a)))
        for j in range(int(c)):
            t = j / c
            coords.append(a + t * (b - a) if j else a.copy())
            arcl.append(s0 + t * length)
            nv.append(k if j == 0 else -1)
            edge.append(k)
        s0 += length
    if not curve.closed:
        coords.append(curve.vertices[-1].copy())
        arcl.append(s0)
        nv.append(curve.n_vertices - 1)
    mesh = _assemble(curve, coords, arcl, nv, [0] * len(edge), edge)
    too_small = [c for c in mesh.smooth_components() if len(c) < min_component_elements]
    if too_small:
        raise SmoothComponentTooCoarse(
            f"{len(too_small)} smooth component(s) with fewer than {min_component_elements} elements")
    return mesh


def mesh_ratio(mesh: Mesh) -> float:
    """Largest length ratio between neighbouring elements."""
    pairs = mesh.neighbour_pairs()
    if len(pairs) == 0:
        return 1.0
    h = mesh.lengths
    a, b = h[pairs[:, 0]], h[pairs[:, 1]]
    return float(np.max(np.maximum(a / b, b / a)))


def element_patch(mesh: Mesh, i: int) -> Patch:
    members = [j for j in (mesh.left(i), i, mesh.right(i)) if j >= 0]
    return Patch(i, tuple(dict.fromkeys(members)))


def node_patch(mesh: Mesh, k: int) -> Patch:
    members = np.flatnonzero((mesh.elements[:, 0] == k) | (mesh.elements[:, 1] == k))
    return Patch(k, tuple(int(j) for j in members))
