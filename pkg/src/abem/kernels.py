"""Closed-form integrals of the 2D Laplace kernels over straight segments.

Segments are given by a unit direction and a length; evaluation points
enter as offsets ``d = p - start`` so that callers can form them without
cancellation. All functions broadcast over leading array dimensions.
"""
from __future__ import annotations

import numpy as np
from scipy.special import xlogy

INV_2PI = 1.0 / (2.0 * np.pi)


def _local(d0, d1, e):
    """Coordinates of a point given its offsets ``d0``, ``d1`` from both segment ends.

    Returns ``(along0, along1, normal)``: tangential coordinates relative to
    start and end (``along0 - along1`` is the length) and the signed normal
    coordinate taken from the nearer end.
    """
    d0, d1, e = np.asarray(d0), np.asarray(d1), np.asarray(e)
    along0 = d0[..., 0] * e[..., 0] + d0[..., 1] * e[..., 1]
    along1 = d1[..., 0] * e[..., 0] + d1[..., 1] * e[..., 1]
    n0 = d0[..., 0] * e[..., 1] - d0[..., 1] * e[..., 0]
    n1 = d1[..., 0] * e[..., 1] - d1[..., 1] * e[..., 0]
    normal = np.where(np.abs(along0) <= np.abs(along1), n0, n1)
    return along0, along1, normal


def _log_antiderivative(tau, h):
    """d/dtau of the result is log(sqrt(tau^2 + h^2)); ``h >= 0``."""
    return xlogy(tau, np.hypot(tau, h)) - tau + h * np.arctan2(tau, h)


def log_segment_integral(d0, d1, e):
    """Integral of ``log|p - y|`` over a segment; ``d0``, ``d1`` are ``p`` minus its ends."""
    along0, along1, normal = _local(d0, d1, e)
    h = np.abs(normal)
    return _log_antiderivative(-along1, h) - _log_antiderivative(-along0, h)


def _second_antiderivative(tau, beta):
    """Twice-integrated log(sqrt(tau^2 + beta^2)); ``beta >= 0``."""
    r2 = tau * tau + beta * beta
    return (xlogy(0.25 * (tau * tau - beta * beta), r2) - 0.75 * tau * tau
            + beta * tau * np.arctan2(tau, beta))


def log_pair_parallel(offset_along, offset_normal, len1, len2):
    """Double integral of ``log|x - y|`` for parallel segments.

    ``x = a + s e`` with ``s in [0, len1]``, ``y = b + t e`` with ``t in [0, len2]``
    and ``a - b = offset_along * e + offset_normal * n``.
    """
    al, b = offset_along, np.abs(offset_normal)
    f = _second_antiderivative
    return f(al + len1, b) - f(al, b) - f(al + len1 - len2, b) + f(al - len2, b)


def log_pair_general(a, e1, len1, b, e2, len2):
    """Double integral of ``log|x - y|`` for non-parallel segments.

    The difference ``w = x - y`` sweeps a parallelogram; by the divergence
    theorem with ``div(w (log|w|/2 - 1/4)) = log|w|`` the area integral
    reduces to four point-segment integrals.
    """
    a, b, e1, e2 = (np.asarray(v, float) for v in (a, b, e1, e2))
    sin = e1[0] * e2[1] - e1[1] * e2[0]
    p0 = a - b
    corners = [p0, p0 + len1 * e1, p0 + len1 * e1 - len2 * e2, p0 - len2 * e2]
    if sin > 0:  # the corner loop is clockwise, reverse it
        corners = corners[::-1]
    total = 0.0
    for q0, q1 in zip(corners, corners[1:] + corners[:1]):
        d = q1 - q0
        ln = float(np.hypot(*d))
        u = d / ln
        outward = q0[0] * u[1] - q0[1] * u[0]
        if outward == 0.0:
            continue
        edge_log = log_segment_integral(-q0, -q1, u)
        total += outward * (0.5 * edge_log - 0.25 * ln)
    return total / abs(sin)


def subtended_angle(along0, along1, normal):
    """Signed angle under which a segment is seen; equals the integral of
    ``h / ((t - a)^2 + h^2)`` along the segment."""
    return np.arctan2(normal * (along0 - along1), normal * normal + along0 * along1)


def log_ratio(along0, along1, normal):
    """``log(|p - end|^2 / |p - start|^2)``."""
    h2 = normal * normal
    return np.log(along1 * along1 + h2) - np.log(along0 * along0 + h2)


def double_layer_moments(d0, d1, e, length):
    """Integrals over ``x`` in the segment of ``dG/dn(x)(p - x)`` against 1 and ``t/L``.

    ``n`` is the segment normal ``(e_y, -e_x)``. Points on the segment's
    own line give the principal value zero.
    """
    along0, along1, normal = _local(d0, d1, e)
    on_line = normal == 0.0
    m0 = INV_2PI * np.where(on_line, 0.0, subtended_angle(along0, along1, normal))
    lr = np.where(on_line, 0.0, log_ratio(along0, along1, np.where(on_line, 1.0, normal)))
    m1 = along0 / length * m0 + normal / (2.0 * length) * INV_2PI * lr
    return m0, m1


def adjoint_double_layer_kernel(d0, d1, normal_p, e):
    """Integral over ``x`` in the segment of ``dG/dn(p)(x - p)``, normal taken at ``p``."""
    along0, along1, normal = _local(d0, d1, e)
    np_ = np.asarray(normal_p)
    n_dot_e = np_[..., 0] * e[..., 0] + np_[..., 1] * e[..., 1]
    n_dot_n = np_[..., 0] * e[..., 1] - np_[..., 1] * e[..., 0]
    on_line = normal == 0.0
    ang = np.where(on_line, 0.0, subtended_angle(along0, along1, normal))
    safe = (along0 != 0.0) & (along1 != 0.0) | ~on_line
    lr = np.where(safe, log_ratio(np.where(safe, along0, 1.0), np.where(safe, along1, 1.0), normal), 0.0)
    return INV_2PI * (0.5 * n_dot_e * lr - n_dot_n * ang)
