import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abem.benchmarks import SLIT, get_benchmark
from abem.errors import NotAUniformRefinement
from abem.geometry import build_mesh, mesh_ratio
from abem.refinement import coarse_fine_pairing, refine, refine_uniform


def _generation_gap(mesh):
    pairs = mesh.neighbour_pairs()
    g = mesh.generation
    return np.abs(g[pairs[:, 0]] - g[pairs[:, 1]]).max()


def test_uniform_marking_doubles():
    mesh = build_mesh(SLIT, 4)
    res = refine(mesh, range(4))
    assert res.mesh.n_elements == 8
    assert mesh_ratio(res.mesh) == 1.0


def test_repeated_single_marking_keeps_generations_balanced():
    mesh = build_mesh(SLIT, 8)
    for _ in range(3):
        target = int(np.argmin(np.abs(0.5 * (mesh.start[:, 0] + mesh.end[:, 0]) - 0.1)))
        mesh = refine(mesh, [target]).mesh
        assert _generation_gap(mesh) <= 1
        assert mesh_ratio(mesh) <= 2.0


def test_tip_marking():
    mesh = build_mesh(SLIT, 4)
    res = refine(mesh, [0])
    assert res.refined_set >= {0}
    assert res.refined_set == {0}
    assert res.mesh.n_elements == 5


def test_closure_propagates():
    mesh = build_mesh(SLIT, 4)
    for _ in range(4):
        mesh = refine(mesh, [0]).mesh
    assert _generation_gap(mesh) <= 1
    assert mesh.generation[0] == 4


def test_refine_errors():
    mesh = build_mesh(SLIT, 4)
    with pytest.raises(ValueError):
        refine(mesh, [])
    with pytest.raises(IndexError):
        refine(mesh, [7])


def test_refine_uniform():
    mesh = get_benchmark("zshape-neumann").initial_mesh()
    res = refine_uniform(mesh)
    assert res.mesh.n_elements == 2 * mesh.n_elements
    np.testing.assert_allclose(res.mesh.lengths, 0.5 * mesh.lengths[res.father_of], rtol=1e-15)
    assert mesh_ratio(res.mesh) == pytest.approx(mesh_ratio(mesh), rel=1e-14)
    assert np.all(res.mesh.generation == 1)


def test_sons_and_unrefined_elements():
    mesh = build_mesh(SLIT, 4)
    res = refine(mesh, [1])
    fine = res.mesh
    for s in range(fine.n_elements):
        f = res.father_of[s]
        if f in res.refined_set:
            assert fine.lengths[s] == 0.5 * mesh.lengths[f]
            assert fine.generation[s] == mesh.generation[f] + 1
        else:
            assert np.array_equal(fine.start[s], mesh.start[f])
            assert np.array_equal(fine.end[s], mesh.end[f])


def test_closed_curve_arclength_monotone():
    mesh = get_benchmark("lshape-dirichlet").initial_mesh()
    fine = refine(mesh, [15, 0]).mesh
    assert np.all(np.diff(fine.arclength) > 0)
    assert fine.arclength[-1] < mesh.curve.length


def test_pairing():
    coarse = build_mesh(SLIT, 4)
    res = refine_uniform(coarse)
    sons = coarse_fine_pairing(coarse, res.mesh, res.father_of)
    assert sons.shape == (4, 2)
    assert sorted(sons.ravel()) == list(range(8))
    np.testing.assert_allclose(res.mesh.lengths[sons].sum(axis=1), coarse.lengths)


def test_pairing_rejects_non_child():
    coarse = build_mesh(SLIT, 4)
    res = refine(coarse, [0])
    with pytest.raises(NotAUniformRefinement):
        coarse_fine_pairing(coarse, res.mesh, res.father_of)
    other = refine_uniform(build_mesh(SLIT, 4))
    with pytest.raises(NotAUniformRefinement):
        coarse_fine_pairing(coarse, other.mesh, np.zeros(8, int))


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["slit-hyp", "zshape-neumann", "lshape-dirichlet"]),
       st.lists(st.lists(st.floats(0, 1, exclude_max=True), min_size=1, max_size=4), min_size=1, max_size=8))
def test_kappa_bound_random_sequences(name, picks):
    mesh = get_benchmark(name).initial_mesh()
    k0 = mesh_ratio(mesh)
    for pick in picks:
        marked = {int(p * mesh.n_elements) for p in pick}
        res = refine(mesh, marked)
        assert res.refined_set >= marked
        mesh = res.mesh
        assert _generation_gap(mesh) <= 1
        assert mesh_ratio(mesh) <= 2.0 * k0 * (1 + 1e-12)
        assert mesh.lengths.sum() == pytest.approx(mesh.curve.length, rel=1e-12)
