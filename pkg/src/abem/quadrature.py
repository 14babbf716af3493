"""Gauss-Legendre rules on [0, 1] and geometrically graded composites."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import QuadratureNonConvergence

MAX_LEVELS = 200


@lru_cache(maxsize=None)
def gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def order_for_separation(r, max_order: int, tol: float = 1e-16) -> np.ndarray:
    """Smallest Gauss order resolving a log singularity at relative distance ``r``.

    ``r`` is the separation divided by the larger element length. The
    Bernstein-ellipse parameter of the singularity is at least
    ``c + sqrt(c^2 - 1)`` with ``c = 1 + 2r``.
    """
    c = 1.0 + 2.0 * np.maximum(np.asarray(r, float), 0.0)
    rho = c + np.sqrt(c * c - 1.0)
    q = np.ceil(-np.log(tol) / (2.0 * np.log(np.maximum(rho, 1.0 + 1e-12))))
    return np.clip(q, 2, max_order).astype(np.int64)


def _graded_towards_left(a: float, b: float, stop: float, ratio: float, n: int):
    """Composite rule on [a, b] refined geometrically towards ``a``."""
    x, w = gauss01(n)
    pts, wts = [], []
    hi = b - a
    levels = 0
    while hi * ratio > stop and levels < MAX_LEVELS:
        lo = hi * ratio
        pts.append(a + lo + (hi - lo) * x)
        wts.append((hi - lo) * w)
        hi = lo
        levels += 1
    if levels >= MAX_LEVELS:
        raise QuadratureNonConvergence(f"graded rule needs more than {MAX_LEVELS} levels")
    pts.append(a + hi * x)
    wts.append(hi * w)
    return np.concatenate(pts), np.concatenate(wts)


def graded_rule(length: float, targets, n: int, ratio: float = 0.5,
                floor: float = 2.0 ** -60):
    """Quadrature on [0, length] graded towards each ``(position, distance)`` target.

    Grading towards a target stops once the innermost piece is no longer
    than the target's distance to the singularity (or ``floor * length``).
    Returns ``(base, offset, weights)``; the nodes are ``base + offset`` with
    ``base`` a target position, so tiny offsets stay exact.
    """
    if not targets:
        x, w = gauss01(n)
        return np.zeros(n), length * x, length * w
    targets = sorted((min(max(p, 0.0), length), d) for p, d in targets)
    cuts = [0.0] + [0.5 * (targets[i][0] + targets[i + 1][0]) for i in range(len(targets) - 1)] + [length]
    base, off, wts = [], [], []
    for (p, d), lo, hi in zip(targets, cuts[:-1], cuts[1:]):
        stop = max(d, floor * length)
        for span, sign in ((p - lo, -1.0), (hi - p, 1.0)):
            if span > 0:
                s, w = _graded_towards_left(0.0, span, stop, ratio, n)
                base.append(np.full(len(s), p))
                off.append(sign * s)
                wts.append(w)
    return np.concatenate(base), np.concatenate(off), np.concatenate(wts)
