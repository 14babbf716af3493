import math

import numpy as np
import pytest
from scipy.integrate import quad

from abem import assembly, kernels
from abem.assembly import (DEFAULT_CONFIG, KernelQuadratureConfig, RhsSpec, assemble_rhs, assemble_V,
                           assemble_W, slp_pair_integral, write_matrix)
from abem.benchmarks import SLIT, get_benchmark
from abem.geometry import Curve, build_mesh
from abem.quadrature import gauss01, graded_rule, order_for_separation
from abem.refinement import refine, refine_uniform

from oracles import hypersingular_oracle, log_pair_oracle

SQUARE = Curve([(0, 0), (1, 0), (1, 1), (0, 1)], closed=True)


def seg(a, b):
    return np.array(a, float), np.array(b, float)


# --- kernels -----------------------------------------------------------------

def test_identical_unit_segment():
    v = slp_pair_integral(seg((0, 0), (1, 0)), seg((0, 0), (1, 0)))
    assert v == pytest.approx(3.0 / (4.0 * math.pi), abs=1e-15)
    assert v == pytest.approx(log_pair_oracle((0, 0), (1, 0), (0, 0), (1, 0)), abs=1e-12)


@pytest.mark.parametrize("pair", [
    ((0, 0), (1, 0), (1, 0), (1.3, 0.7)),
    ((0, 0), (1, 0), (1, 0), (2, 0)),
    ((0, 0), (1, 0), (0, 0.3), (1, 0.3)),
    ((0, 0), (1, 0), (1.0, 0.0), (0.5, 0.001)),
    ((0, 0), (1, 0), (0.2, 0.3), (0.9, 0.5)),
    ((0, 0), (1, 0), (1.1, -0.2), (1.2, 0.5)),
    ((0, 0), (1, 0), (10, 3), (11, 3.5)),
])
def test_pair_integral_against_oracle(pair):
    a0, a1, b0, b1 = pair
    v = slp_pair_integral(seg(a0, a1), seg(b0, b1))
    assert v == pytest.approx(log_pair_oracle(a0, a1, b0, b1), abs=1e-12)
    assert slp_pair_integral(seg(b0, b1), seg(a0, a1)) == pytest.approx(v, abs=1e-15)


def test_far_pair_matches_tensor_gauss():
    x, w = np.polynomial.legendre.leggauss(40)
    x, w = 0.5 * (x + 1), 0.5 * w
    a0, a1 = np.array([0.0, 0.0]), np.array([0.3, 0.1])
    b0, b1 = np.array([4.0, 2.0]), np.array([4.5, 2.5])
    P = a0 + x[:, None] * (a1 - a0)
    Q = b0 + x[:, None] * (b1 - b0)
    d = np.hypot(*(P[:, None, :] - Q[None, :, :]).transpose(2, 0, 1))
    ref = -np.einsum("i,j,ij->", w, w, np.log(d)) * np.hypot(*(a1 - a0)) * np.hypot(*(b1 - b0)) / (2 * np.pi)
    assert slp_pair_integral((a0, a1), (b0, b1)) == pytest.approx(ref, abs=1e-14)


def test_log_segment_integral():
    e = np.array([1.0, 0.0])
    for p in ([0.3, 0.2], [0.5, 0.0], [2.0, -1.0], [1.0, 0.0]):
        p = np.array(p)
        a, b = np.array([0.0, 0.0]), np.array([1.0, 0.0])
        ref = quad(lambda t: math.log(math.hypot(p[0] - t, p[1])), 0, 1,
                   points=[min(max(p[0], 0), 1)] if 0 < p[0] < 1 else None, limit=200)[0]
        assert kernels.log_segment_integral(p - a, p - b, e) == pytest.approx(ref, abs=1e-13)


def test_double_layer_moments():
    a, b = np.array([0.2, 0.1]), np.array([1.0, 0.7])
    L = float(np.hypot(*(b - a)))
    e = (b - a) / L
    n = np.array([e[1], -e[0]])
    for p in ([0.1, 1.0], [2.0, 0.0], [0.6, 0.4 + 1e-3]):
        p = np.array(p)
        # dG/dn_y (p - y) = (1/2pi) (p - y).n / |p - y|^2
        ker = lambda t: np.dot(p - (a + t * e), n) / np.dot(p - (a + t * e), p - (a + t * e)) / (2 * np.pi)
        m0 = quad(ker, 0, L, limit=200, epsabs=1e-14)[0]
        m1 = quad(lambda t: ker(t) * t / L, 0, L, limit=200, epsabs=1e-14)[0]
        got = kernels.double_layer_moments(p - a, p - b, e, L)
        assert got[0] == pytest.approx(m0, abs=1e-13)
        assert got[1] == pytest.approx(m1, abs=1e-13)


def test_adjoint_kernel():
    a, b = np.array([0.0, 0.0]), np.array([1.0, 0.5])
    L = float(np.hypot(*(b - a)))
    e = (b - a) / L
    p, nu = np.array([0.4, 1.1]), np.array([0.6, 0.8])
    ker = lambda t: -np.dot(p - (a + t * e), nu) / np.dot(p - (a + t * e), p - (a + t * e)) / (2 * np.pi)
    ref = quad(ker, 0, L, epsabs=1e-14)[0]
    assert kernels.adjoint_double_layer_kernel(p - a, p - b, nu, e) == pytest.approx(ref, abs=1e-13)


# --- quadrature ----------------------------------------------------------------

def test_gauss_exactness():
    x, w = gauss01(5)
    for k in range(10):
        assert np.dot(w, x ** k) == pytest.approx(1.0 / (k + 1), rel=1e-14)


def test_graded_rule_resolves_log():
    base, off, w = graded_rule(1.0, [(0.3, 0.0)], 8)
    ref = 0.3 * (math.log(0.3) - 1) + 0.7 * (math.log(0.7) - 1)
    assert np.all(base == 0.3)
    assert np.dot(w, np.log(np.abs(off))) == pytest.approx(ref, abs=1e-13)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)


def test_order_for_separation_monotone():
    q = order_for_separation(np.array([0.0, 0.5, 2.0, 10.0, 100.0]), 16)
    assert np.all(np.diff(q) <= 0) and q[0] == 16 and q[-1] >= 2


def test_config_validation():
    with pytest.raises(ValueError):
        KernelQuadratureConfig(gauss_order=1)
    with pytest.raises(ValueError):
        KernelQuadratureConfig(near_singular_subdivision_ratio=1.0)


# --- V and W -------------------------------------------------------------------

def test_V_slit_spd_and_symmetric():
    V = assemble_V(build_mesh(SLIT, 4))
    assert np.array_equal(V, V.T)
    np.linalg.cholesky(V)


def test_V_single_element():
    curve = Curve([(0.0, 0.0), (0.5, 0.0)], closed=False)
    V = assemble_V(build_mesh(curve, 1, min_component_elements=1))
    assert V.shape == (1, 1)
    assert V[0, 0] == pytest.approx(slp_pair_integral(seg((0, 0), (0.5, 0)), seg((0, 0), (0.5, 0))), abs=0)


def test_V_scaling_law():
    V1 = assemble_V(build_mesh(SLIT, 8))
    half = Curve(0.5 * SLIT.vertices, closed=False)
    Vh = assemble_V(build_mesh(half, 8))
    s = 0.5
    h = build_mesh(SLIT, 8).lengths
    predicted = s * s * V1 - s * s * math.log(s) / (2 * math.pi) * np.outer(h, h)
    np.testing.assert_allclose(Vh, predicted, rtol=0, atol=1e-14)


def test_V_additive_over_sons():
    coarse = get_benchmark("lshape-dirichlet").initial_mesh()
    res = refine_uniform(coarse)
    P = np.zeros((res.mesh.n_elements, coarse.n_elements))
    P[np.arange(res.mesh.n_elements), res.father_of] = 1.0
    lhs = P.T @ assemble_V(res.mesh) @ P
    Vc = assemble_V(coarse)
    assert np.max(np.abs(lhs - Vc)) <= 1e-12 * np.max(np.abs(Vc))


def test_V_reuse_matches_fresh_assembly():
    mesh = get_benchmark("zshape-neumann").initial_mesh()
    V0 = assemble_V(mesh)
    fine = refine(mesh, [0, 4]).mesh
    np.testing.assert_allclose(assemble_V(fine, reuse=(mesh, V0)), assemble_V(fine), rtol=1e-14, atol=1e-16)


def test_V_independent_of_threads(monkeypatch):
    mesh = refine_uniform(build_mesh(SLIT, 64)).mesh
    monkeypatch.setattr(assembly, "CHUNK", 500)
    monkeypatch.setenv("ABEM_THREADS", "1")
    V1 = assemble_V(mesh)
    monkeypatch.setenv("ABEM_THREADS", "4")
    V4 = assemble_V(mesh)
    assert np.array_equal(V1, V4)


def test_V_spd_on_lshape():
    mesh = refine_uniform(get_benchmark("lshape-dirichlet").initial_mesh()).mesh
    np.linalg.cholesky(assemble_V(mesh))


def test_V_on_zshape_elliptic_only_on_mean_zero():
    # diam > 1: V has a negative direction, but never on mean-zero densities
    mesh = refine_uniform(get_benchmark("zshape-neumann").initial_mesh()).mesh
    V = assemble_V(mesh)
    assert np.linalg.eigvalsh(V).min() < 0
    h = mesh.lengths
    Q = np.linalg.qr(np.column_stack([h, np.eye(len(h))[:, :-1]]))[0][:, 1:]
    assert np.linalg.eigvalsh(Q.T @ V @ Q).min() > 0


@pytest.mark.parametrize("nodes,closed", [
    ([(-1, 0), (0, 0), (1, 0)], False),
    ([(0, 0), (1, 0), (1.4, 0.6), (1.0, 1.5)], False),
    ([(0, 0), (1, 0), (0.3, 0.8)], True),
])
def test_W_against_oracle(nodes, closed):
    curve = Curve(nodes, closed=closed)
    mesh = build_mesh(curve, 1, min_component_elements=1)
    W = assemble_W(mesh)
    np.testing.assert_allclose(W, hypersingular_oracle(nodes, closed), rtol=0, atol=1e-8)


def test_W_kills_constants_on_closed_curve():
    mesh = build_mesh(SQUARE, 3)
    W = assemble_W(mesh)
    assert np.max(np.abs(W @ np.ones(mesh.n_nodes))) <= 1e-12 * np.max(np.abs(W))
    assert np.array_equal(W, W.T)


def test_W_slit_hat_positive():
    W = assemble_W(build_mesh(SLIT, 4))
    assert np.all(np.diag(W)[1:-1] > 0)
    np.linalg.cholesky(W[1:-1, 1:-1])


def test_write_matrix(tmp_path):
    A = np.array([[1.0, 1 / 3], [1 / 3, 2.0]])
    write_matrix(tmp_path / "m.txt", A)
    lines = (tmp_path / "m.txt").read_text().splitlines()
    assert lines[0] == "2"
    assert np.array_equal(np.array([[float(x) for x in ln.split()] for ln in lines[1:]]), A)


# --- loads -----------------------------------------------------------------------

def test_direct_density_constant():
    mesh = build_mesh(SLIT, 4)
    one = RhsSpec.direct_density(lambda p: np.ones(np.shape(p)[:-1]))
    np.testing.assert_allclose(assemble_rhs(mesh, "P0", one), mesh.lengths, rtol=1e-15)
    s1 = assemble_rhs(mesh, "S1", one)
    np.testing.assert_allclose(s1, [0.25, 0.5, 0.5, 0.5, 0.25], rtol=1e-15)


def test_dirichlet_constant_gives_zero():
    mesh = build_mesh(SQUARE, 4)
    b = assemble_rhs(mesh, "P0", RhsSpec.dirichlet_trace(lambda p: np.ones(np.shape(p)[:-1])))
    assert np.max(np.abs(b)) < 1e-10


def _linear_u(p):
    return np.asarray(p)[..., 0] + 0.5 * np.asarray(p)[..., 1]


@pytest.mark.parametrize("name", ["square", "lshape-dirichlet"])
def test_dirichlet_load_matches_calderon(name):
    mesh = build_mesh(SQUARE, 3) if name == "square" else get_benchmark(name).initial_mesh()
    # u = x + y/2: flux is piecewise constant, V flux = (K + 1/2) trace
    b = assemble_rhs(mesh, "P0", RhsSpec.dirichlet_trace(_linear_u))
    flux = mesh.normals @ np.array([1.0, 0.5])
    V = assemble_V(mesh)
    assert np.max(np.abs(b - V @ flux)) < 1e-11


@pytest.mark.parametrize("name", ["square", "zshape-neumann"])
def test_neumann_load_matches_calderon(name):
    mesh = build_mesh(SQUARE, 3) if name == "square" else get_benchmark(name).initial_mesh()
    rhs = RhsSpec.neumann_flux(lambda p, n: n[..., 0] + 0.5 * n[..., 1])
    b = assemble_rhs(mesh, "S1", rhs)
    # trace of u = x + y/2 is exactly representable by hats
    W = assemble_W(mesh)
    assert np.max(np.abs(b - W @ _linear_u(mesh.coords))) < 1e-11
    assert abs(b.sum()) < 1e-13


def test_rhs_reuse_matches_fresh():
    p = get_benchmark("lshape-dirichlet")
    mesh = p.initial_mesh()
    b0, tables = assemble_rhs(mesh, "P0", p.rhs, return_tables=True)
    fine = refine(mesh, [0, 15]).mesh
    b1 = assemble_rhs(fine, "P0", p.rhs, reuse=(mesh, tables))
    np.testing.assert_allclose(b1, assemble_rhs(fine, "P0", p.rhs), rtol=1e-13, atol=1e-16)


def test_rhs_space_checks():
    mesh = build_mesh(SQUARE, 2)
    with pytest.raises(ValueError):
        assemble_rhs(mesh, "S1", RhsSpec.dirichlet_trace(_linear_u))
    with pytest.raises(ValueError):
        assemble_rhs(mesh, "P1", RhsSpec.dirichlet_trace(_linear_u))
