"""Galerkin matrices and load vectors for the single-layer and hyper-singular operators.

Entries are computed pair by pair. Touching and nearby pairs use closed-form
or semi-analytic integration, remote pairs tensor Gauss rules whose order
follows from the separation. Every entry depends only on the two elements
involved, so matrices of an adaptively refined mesh can reuse all entries
between elements that survived refinement (``reuse=``).
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import QuadratureNonConvergence
from .geometry import Mesh
from .quadrature import gauss01, graded_rule, order_for_separation

PARALLEL_TOL = 1e-10
GENERAL_FORMULA_MIN_SIN = 1e-3
CHUNK = 200_000


@dataclass(frozen=True)
class KernelQuadratureConfig:
    gauss_order: int = 16
    near_singular_subdivision_ratio: float = 0.5
    analytic_distance_threshold: float = 2.0

    def __post_init__(self):
        if self.gauss_order < 2:
            raise ValueError("gauss_order must be >= 2")
        if not 0.0 < self.near_singular_subdivision_ratio < 1.0:
            raise ValueError("near_singular_subdivision_ratio must lie in (0, 1)")
        if self.analytic_distance_threshold <= 0.0:
            raise ValueError("analytic_distance_threshold must be positive")


DEFAULT_CONFIG = KernelQuadratureConfig()


@dataclass(frozen=True)
class RhsSpec:
    """Right-hand side description.

    ``direct_density``: ``func(points) -> f`` is the load itself.
    ``dirichlet_trace``: ``func(points) -> g``, load ``(K + 1/2) g``.
    ``neumann_flux``: ``func(points, normals) -> psi``, load ``(1/2 - K') psi``.
    ``singular_points`` lists points where the data is singular; quadrature on
    elements touching them is graded.
    """

    kind: str
    func: Callable
    singular_points: tuple = field(default=())

    KINDS = ("direct_density", "dirichlet_trace", "neumann_flux")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown rhs kind {self.kind!r}")

    @classmethod
    def direct_density(cls, f, singular_points=()):
        return cls("direct_density", f, tuple(map(tuple, singular_points)))

    @classmethod
    def dirichlet_trace(cls, g, singular_points=()):
        return cls("dirichlet_trace", g, tuple(map(tuple, singular_points)))

    @classmethod
    def neumann_flux(cls, psi, singular_points=()):
        return cls("neumann_flux", psi, tuple(map(tuple, singular_points)))

    def evaluate(self, points, normals):
        if self.kind == "neumann_flux":
            return np.asarray(self.func(points, normals), float)
        return np.asarray(self.func(points), float)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ABEM_THREADS", "0")) or (os.cpu_count() or 1))
    except ValueError:
        return os.cpu_count() or 1


def _map_chunks(fn, n: int) -> None:
    """Call ``fn(lo, hi)`` on disjoint index chunks, possibly in threads."""
    bounds = [(lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]
    workers = min(_threads(), len(bounds))
    if workers <= 1:
        for lo, hi in bounds:
            fn(lo, hi)
        return
    with ThreadPoolExecutor(workers) as ex:
        list(ex.map(lambda b: fn(*b), bounds))


# ---------------------------------------------------------------------------
# geometry helpers


def _point_segment_distance(p, a, b):
    d = b - a
    t = np.clip(np.sum((p - a) * d, axis=-1) / np.sum(d * d, axis=-1), 0.0, 1.0)
    return np.hypot(*np.moveaxis(p - a - t[..., None] * d, -1, 0))


def segment_separation(a0, a1, b0, b1):
    """Distance between segments ``[a0, a1]`` and ``[b0, b1]`` (vectorized).

    Crossing segments are not detected here; see :func:`_crossing`.
    """
    return np.minimum.reduce([
        _point_segment_distance(a0, b0, b1), _point_segment_distance(a1, b0, b1),
        _point_segment_distance(b0, a0, a1), _point_segment_distance(b1, a0, a1),
    ])


def separation_bound(a0, a1, b0, b1):
    """Cheap lower bound of the segment distance: centre distance minus half-lengths."""
    ca, cb = 0.5 * (a0 + a1), 0.5 * (b0 + b1)
    la = np.hypot(*np.moveaxis(a1 - a0, -1, 0))
    lb = np.hypot(*np.moveaxis(b1 - b0, -1, 0))
    dc = np.hypot(*np.moveaxis(ca - cb, -1, 0))
    return np.maximum(dc - 0.5 * (la + lb), 0.0), np.maximum(la, lb)


def _scalar_separation(a0, a1, b0, b1) -> float:
    def psd(p, a, b):
        dx, dy = b[0] - a[0], b[1] - a[1]
        t = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)
        t = min(max(t, 0.0), 1.0)
        return math.hypot(p[0] - a[0] - t * dx, p[1] - a[1] - t * dy)
    return min(psd(a0, b0, b1), psd(a1, b0, b1), psd(b0, a0, a1), psd(b1, a0, a1))


def _cross(u, v):
    return u[0] * v[1] - u[1] * v[0]


def _crossing(a0, a1, b0, b1) -> Optional[float]:
    """Parameter in [0, 1] along ``a`` where the open segments cross, if they do."""
    da, db = a1 - a0, b1 - b0
    den = _cross(da, db)
    if den == 0.0:
        return None
    s = _cross(b0 - a0, db) / den
    t = _cross(b0 - a0, da) / den
    if 0.0 < s < 1.0 and 0.0 < t < 1.0:
        return s
    return None


def _closest_parameter(a0, a1, b0, b1) -> float:
    """Parameter in [0, 1] of the point on ``a`` closest to segment ``b``."""
    da = a1 - a0
    cands = [0.0, 1.0]
    for q in (b0, b1):
        cands.append(float(np.clip(np.dot(q - a0, da) / np.dot(da, da), 0.0, 1.0)))
    pts = [a0 + c * da for c in cands]
    dist = [float(_point_segment_distance(p, b0, b1)) for p in pts]
    return cands[int(np.argmin(dist))]


def _seg(a0, a1):
    d = a1 - a0
    ln = float(np.hypot(*d))
    return d / ln, ln


# ---------------------------------------------------------------------------
# single-layer pair integrals


def _log_pair(a0, a1, b0, b1, cfg: KernelQuadratureConfig) -> float:
    """Double integral of ``log|x - y|`` over two segments."""
    a0, a1, b0, b1 = (np.asarray(v, float) for v in (a0, a1, b0, b1))
    e1, l1 = _seg(a0, a1)
    e2, l2 = _seg(b0, b1)
    bound, lmax = separation_bound(a0, a1, b0, b1)
    r = float(bound / lmax)
    if r >= cfg.analytic_distance_threshold:
        q = int(order_for_separation(r, cfg.gauss_order))
        return float(_tensor_gauss(a0, e1 * l1, b0, e2 * l2, q))
    return _log_pair_near(a0, a1, b0, b1, cfg)


def _log_pair_near(a0, a1, b0, b1, cfg: KernelQuadratureConfig) -> float:
    e1, l1 = _seg(a0, a1)
    e2, l2 = _seg(b0, b1)
    sep = _scalar_separation(a0, a1, b0, b1)
    cross_at = _crossing(a0, a1, b0, b1)
    if cross_at is not None:
        sep = 0.0
    sin = _cross(e1, e2)
    if abs(sin) < PARALLEL_TOL:
        if np.dot(e1, e2) < 0:
            b0, e2 = b1, -e2
        off = a0 - b0
        return float(kernels.log_pair_parallel(np.dot(off, e1), _cross(off, e1), l1, l2))
    touching = sep == 0.0 and cross_at is None
    if touching and abs(sin) >= GENERAL_FORMULA_MIN_SIN:
        return float(kernels.log_pair_general(a0, e1, l1, b0, e2, l2))
    # semi-analytic: closed-form inner integral, graded outer rule
    s_star = cross_at if cross_at is not None else _closest_parameter(a0, a1, b0, b1)
    base, off, w = graded_rule(l1, [(s_star * l1, sep)], cfg.gauss_order,
                               cfg.near_singular_subdivision_ratio)
    anchor, step = _anchored(a0, a1, e1, l1, base, off)
    inner = kernels.log_segment_integral(anchor - b0 + step, anchor - b1 + step, e2)
    return float(np.dot(w, inner))


def _anchored(a0, a1, e, length, base, off):
    """Split rule nodes ``base + off`` on a segment into anchor point and small step."""
    anchor = np.where((base == 0.0)[:, None], a0,
                      np.where((base == length)[:, None], a1, a0 + base[:, None] * e))
    return anchor, off[:, None] * e


def _tensor_gauss(a0, da, b0, db, q):
    x, w = gauss01(q)
    xp = a0[..., None, :] + x[:, None] * da[..., None, :]
    yq = b0[..., None, :] + x[:, None] * db[..., None, :]
    dx = xp[..., :, None, 0] - yq[..., None, :, 0]
    dy = xp[..., :, None, 1] - yq[..., None, :, 1]
    dx *= dx
    dy *= dy
    dx += dy
    lg = np.log(dx, out=dx)
    la = np.hypot(*np.moveaxis(da, -1, 0))
    lb = np.hypot(*np.moveaxis(db, -1, 0))
    return 0.5 * la * lb * np.einsum("...pq,p,q->...", lg, w, w)


def slp_pair_integral(seg_j, seg_k, cfg: KernelQuadratureConfig = DEFAULT_CONFIG) -> float:
    """Double integral of ``-log|x - y| / (2 pi)`` over two segments ``(start, end)``."""
    return -kernels.INV_2PI * _log_pair(seg_j[0], seg_j[1], seg_k[0], seg_k[1], cfg)


# ---------------------------------------------------------------------------
# reuse across refinement


def element_keys(mesh: Mesh) -> list[bytes]:
    both = np.ascontiguousarray(np.hstack([mesh.start, mesh.end]))
    return [row.tobytes() for row in both]


def reuse_map(mesh: Mesh, old: Optional[Mesh]) -> np.ndarray:
    """For each element of ``mesh``, its index in ``old`` or -1."""
    if old is None:
        return np.full(mesh.n_elements, -1, dtype=np.int64)
    lookup = {k: i for i, k in enumerate(element_keys(old))}
    return np.array([lookup.get(k, -1) for k in element_keys(mesh)], dtype=np.int64)


def _pairs_to_compute(prev: np.ndarray, symmetric: bool):
    """Index pairs whose entries cannot be copied from the previous matrix."""
    n = len(prev)
    fresh = prev < 0
    if symmetric:
        mask = np.triu(fresh[:, None] | fresh[None, :])
    else:
        mask = fresh[:, None] | fresh[None, :]
    return np.nonzero(mask)


def _copy_old(new: np.ndarray, old: np.ndarray, prev: np.ndarray) -> None:
    kept = np.flatnonzero(prev >= 0)
    if len(kept):
        new[np.ix_(kept, kept)] = old[np.ix_(prev[kept], prev[kept])]


def assemble_V(mesh: Mesh, cfg: KernelQuadratureConfig = DEFAULT_CONFIG,
               reuse: Optional[tuple] = None) -> np.ndarray:
    """Single-layer Galerkin matrix for the piecewise-constant basis.

    ``reuse=(old_mesh, old_V)`` copies entries of surviving element pairs.
    """
    n = mesh.n_elements
    V = np.zeros((n, n))
    prev = reuse_map(mesh, reuse[0] if reuse else None)
    if reuse:
        _copy_old(V, reuse[1], prev)
    I, J = _pairs_to_compute(prev, symmetric=True)
    if len(I) == 0:
        return V
    a, b = mesh.start, mesh.end
    bound, lmax = separation_bound(a[I], b[I], a[J], b[J])
    r = bound / lmax
    near = r < cfg.analytic_distance_threshold
    vals = np.empty(len(I))
    for m in np.flatnonzero(near):
        i, j = I[m], J[m]
        vals[m] = _log_pair_near(a[i], b[i], a[j], b[j], cfg)
    far = np.flatnonzero(~near)
    q_far = order_for_separation(r[far], cfg.gauss_order)
    for q in np.unique(q_far):
        sel = far[q_far == q]
        ii, jj = I[sel], J[sel]

        def work(lo, hi, sel=sel, ii=ii, jj=jj, q=int(q)):
            vals[sel[lo:hi]] = _tensor_gauss(a[ii[lo:hi]], (b - a)[ii[lo:hi]],
                                             a[jj[lo:hi]], (b - a)[jj[lo:hi]], q)
        _map_chunks(work, len(sel))
    vals *= -kernels.INV_2PI
    V[I, J] = vals
    V[J, I] = vals
    return V


def derivative_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Sparse map from nodal values to element-wise arclength derivatives."""
    n = mesh.n_elements
    inv = 1.0 / mesh.lengths
    rows = np.repeat(np.arange(n), 2)
    cols = mesh.elements.ravel()
    data = np.column_stack([-inv, inv]).ravel()
    return sp.csr_matrix((data, (rows, cols)), shape=(n, mesh.n_nodes))


def assemble_W(mesh: Mesh, cfg: KernelQuadratureConfig = DEFAULT_CONFIG,
               V: Optional[np.ndarray] = None, reuse: Optional[tuple] = None) -> np.ndarray:
    """Hyper-singular Galerkin matrix on all hat functions, ``W = B^T V B``.

    Uses the integration-by-parts identity ``<W u, v> = <V u', v'>``.
    """
    if V is None:
        V = assemble_V(mesh, cfg, reuse=reuse)
    B = derivative_matrix(mesh)
    W = np.asarray((B.T @ (B.T @ V).T))
    return 0.5 * (W + W.T)


def write_matrix(path, A: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(f"{A.shape[0]}\n")
        for row in A:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


# ---------------------------------------------------------------------------
# right-hand sides


def _touches(mesh: Mesh, points) -> np.ndarray:
    """(N, 2) booleans: element start / end coincides with one of ``points``."""
    out = np.zeros((mesh.n_elements, 2), dtype=bool)
    for p in points:
        p = np.asarray(p, float)
        out[:, 0] |= np.all(mesh.start == p, axis=1)
        out[:, 1] |= np.all(mesh.end == p, axis=1)
    return out


def _element_rule(mesh: Mesh, i: int, touch: np.ndarray, cfg, extra=()):
    """Rule on element ``i`` graded at singular endpoints and ``extra`` targets.

    Returns ``(anchor, step, weights)``; nodes are ``anchor + step``.
    """
    h = mesh.lengths[i]
    targets = list(extra)
    if touch[i, 0]:
        targets.append((0.0, 0.0))
    if touch[i, 1]:
        targets.append((h, 0.0))
    base, off, w = graded_rule(h, targets, cfg.gauss_order, cfg.near_singular_subdivision_ratio)
    anchor, step = _anchored(mesh.start[i], mesh.end[i], mesh.tangents[i], h, base, off)
    return anchor, step, w


def _gauss_points(mesh: Mesh, q: int):
    x, w = gauss01(q)
    pts = mesh.start[:, None, :] + x[None, :, None] * (mesh.end - mesh.start)[:, None, :]
    return pts, mesh.lengths[:, None] * w[None, :]


def _mass_terms(mesh: Mesh, rhs: RhsSpec, cfg):
    """Integrals of the data against 1 and against the local coordinate t / L."""
    touch = _touches(mesh, rhs.singular_points)
    m0 = np.empty(mesh.n_elements)
    m1 = np.empty(mesh.n_elements)
    normals = mesh.normals
    for i in range(mesh.n_elements):
        anchor, step, w = _element_rule(mesh, i, touch, cfg)
        pts = anchor + step
        f = rhs.evaluate(pts, np.broadcast_to(normals[i], pts.shape))
        t = np.hypot(*(pts - mesh.start[i]).T) / mesh.lengths[i]
        m0[i] = np.dot(w, f)
        m1[i] = np.dot(w, f * t)
    return m0, m1


def _collinear(mesh: Mesh, I, J):
    """Element J lies on the line through element I."""
    e = mesh.tangents[I]
    h0 = _cross((mesh.start[J] - mesh.start[I]).T, e.T)
    h1 = _cross((mesh.end[J] - mesh.start[I]).T, e.T)
    scale = 1e-13 * np.maximum(mesh.lengths[I], mesh.lengths[J])
    return (np.abs(h0) <= scale) & (np.abs(h1) <= scale)


def _pair_tables(mesh: Mesh, rhs: RhsSpec, cfg, kernel, n_out: int, reuse=None):
    """Tables ``C[k][T, T'] = int_{T'} data(y) kernel_k(T; y) dy``.

    ``kernel(points, normals_at_points, elem_idx)`` returns a tuple of
    ``n_out`` arrays shaped like the points' leading dimensions.
    """
    n = mesh.n_elements
    tables = [np.zeros((n, n)) for _ in range(n_out)]
    prev = reuse_map(mesh, reuse[0] if reuse else None)
    if reuse:
        for t, old in zip(tables, reuse[1]):
            _copy_old(t, old, prev)
    I, J = _pairs_to_compute(prev, symmetric=False)
    if len(I) == 0:
        return tables
    normals = mesh.normals
    touch = _touches(mesh, rhs.singular_points)
    singular = touch.any(axis=1)
    a, b, h = mesh.start, mesh.end, mesh.lengths
    keep = ~_collinear(mesh, I, J)
    I, J = I[keep], J[keep]
    bound, lmax = separation_bound(a[I], b[I], a[J], b[J])
    r = bound / lmax
    near = r < cfg.analytic_distance_threshold
    special = near | singular[J]

    cache = {}
    for m in np.flatnonzero(special):
        i, j = int(I[m]), int(J[m])
        if near[m]:
            s_star = _closest_parameter(a[j], b[j], a[i], b[i])
            sep = _scalar_separation(a[j], b[j], a[i], b[i])
            anchor, step, w = _element_rule(mesh, j, touch, cfg, ((s_star * h[j], sep),))
            f = rhs.evaluate(anchor + step, np.broadcast_to(normals[j], anchor.shape))
        else:
            if j not in cache:
                anchor, step, w = _element_rule(mesh, j, touch, cfg)
                cache[j] = (anchor, step, w,
                            rhs.evaluate(anchor + step, np.broadcast_to(normals[j], anchor.shape)))
            anchor, step, w, f = cache[j]
        vals = kernel(anchor, step, np.broadcast_to(normals[j], anchor.shape), i)
        for t, v in zip(tables, vals):
            t[i, j] = np.dot(w * f, v)

    regular = np.flatnonzero(~special)
    q_reg = order_for_separation(r[regular], cfg.gauss_order)
    for q in np.unique(q_reg):
        sel = regular[q_reg == q]
        pts, w = _gauss_points(mesh, int(q))
        f = rhs.evaluate(pts, np.broadcast_to(normals[:, None, :], pts.shape))
        wf = w * f
        ii_all, jj_all = I[sel], J[sel]

        def work(lo, hi, ii_all=ii_all, jj_all=jj_all, pts=pts, wf=wf):
            ii, jj = ii_all[lo:hi], jj_all[lo:hi]
            p = pts[jj]
            vals = kernel(p, 0.0, np.broadcast_to(normals[jj][:, None, :], p.shape), ii[:, None])
            for t, v in zip(tables, vals):
                t[ii, jj] = np.einsum("pq,pq->p", wf[jj], v)
        _map_chunks(work, len(sel))
    return tables


def _dirichlet_kernel(mesh: Mesh):
    a, b, e = mesh.start, mesh.end, mesh.tangents

    def kernel(anchor, step, nrm, i):
        i = np.asarray(i)
        d0 = anchor - a[i] + step
        d1 = anchor - b[i] + step
        return (kernels.adjoint_double_layer_kernel(d0, d1, nrm, e[i]),)
    return kernel


def _neumann_kernel(mesh: Mesh):
    a, b, e, h = mesh.start, mesh.end, mesh.tangents, mesh.lengths

    def kernel(anchor, step, nrm, i):
        i = np.asarray(i)
        d0 = anchor - a[i] + step
        d1 = anchor - b[i] + step
        return kernels.double_layer_moments(d0, d1, e[i], h[i])
    return kernel


def assemble_rhs(mesh: Mesh, space: str, rhs: RhsSpec,
                 cfg: KernelQuadratureConfig = DEFAULT_CONFIG, reuse=None,
                 return_tables: bool = False):
    """Load vector ``<f, basis_i>`` for ``space`` in {"P0", "S1"}.

    For the boundary-integral kinds ``reuse=(old_mesh, old_tables)`` copies
    pair contributions of surviving elements; pass ``return_tables=True``
    to obtain ``(vector, tables)`` for the next call.
    """
    if space not in ("P0", "S1"):
        raise ValueError(f"unknown space {space!r}")
    m0, m1 = _mass_terms(mesh, rhs, cfg)
    tables = ()
    if rhs.kind == "direct_density":
        if space == "P0":
            vec = m0
        else:
            vec = _scatter_nodes(mesh, m0 - m1, m1)
    elif rhs.kind == "dirichlet_trace":
        if space != "P0":
            raise ValueError("dirichlet_trace data is tested against P0")
        tables = _pair_tables(mesh, rhs, cfg, _dirichlet_kernel(mesh), 1, reuse)
        vec = 0.5 * m0 + tables[0].sum(axis=1)
    else:
        if space != "S1":
            raise ValueError("neumann_flux data is tested against S1")
        tables = _pair_tables(mesh, rhs, cfg, _neumann_kernel(mesh), 2, reuse)
        k0, k1 = tables[0].sum(axis=1), tables[1].sum(axis=1)
        # <psi, v/2 - K v> on the hat basis
        vec = _scatter_nodes(mesh, 0.5 * (m0 - m1) - (k0 - k1), 0.5 * m1 - k1)
    if not np.all(np.isfinite(vec)):
        raise QuadratureNonConvergence("non-finite load vector entries")
    return (vec, tables) if return_tables else vec


def _scatter_nodes(mesh: Mesh, at_start, at_end) -> np.ndarray:
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.elements[:, 0], at_start)
    np.add.at(out, mesh.elements[:, 1], at_end)
    return out
