import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradctl.geometry import (DIRICHLET, NEUMANN, assemble_mass, assemble_matrix,
                              assemble_stiffness, build_mesh, check_coefficient, element_mean,
                              lumped_mass, nodal_gradient, stiffness_local)


def test_1d_counts_and_tags():
    m = build_mesh(1, [2.0], 4, dirichlet_sides={"left"})
    assert m.n_nodes == 5 and m.n_elements == 4
    assert np.allclose(m.measures, 0.5)
    assert m.tags[0] == DIRICHLET and m.tags[-1] == NEUMANN
    assert list(m.free) == [1, 2, 3, 4]


def test_2d_counts_and_corner_tags():
    m = build_mesh(2, [1.0, 2.0], 3, 4, dirichlet_sides={"bottom"})
    assert m.n_nodes == 20 and m.n_elements == 24
    assert np.isclose(m.measures.sum(), 2.0)
    # corners on the bottom side are Dirichlet, the top corners Neumann
    assert m.tags[0] == DIRICHLET and m.tags[3] == DIRICHLET
    assert m.tags[-1] == NEUMANN


@pytest.mark.parametrize("args", [
    dict(dimension=3, extents=[1.0], nx=2),
    dict(dimension=1, extents=[-1.0], nx=2),
    dict(dimension=1, extents=[1.0], nx=0),
    dict(dimension=2, extents=[1.0, 1.0], nx=2),
    dict(dimension=1, extents=[1.0], nx=2, dirichlet_sides={"top"}),
])
def test_build_mesh_rejects(args):
    with pytest.raises(ValueError):
        build_mesh(**args)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_gradient_exact_on_affine(a, b, c):
    m = build_mesh(2, [1.0, 0.7], 3, 2)
    y = a + b * m.nodes[:, 0] + c * m.nodes[:, 1]
    g = nodal_gradient(m, y)
    assert np.allclose(g, [b, c], atol=1e-10)


def test_basis_gradients_sum_to_zero():
    m = build_mesh(2, [1.0, 1.0], 4, 3)
    assert np.allclose(m.basis_grads.sum(axis=1), 0.0, atol=1e-12)


def test_1d_matrices_match_hand_formulas():
    n, L = 6, 1.5
    h = L / n
    m = build_mesh(1, [L], n)
    K = assemble_stiffness(m, free_only=False).toarray()
    M = assemble_mass(m).toarray()
    K_ref = (2 * np.eye(n + 1) - np.eye(n + 1, k=1) - np.eye(n + 1, k=-1)) / h
    K_ref[0, 0] = K_ref[-1, -1] = 1 / h
    M_ref = h / 6 * (4 * np.eye(n + 1) + np.eye(n + 1, k=1) + np.eye(n + 1, k=-1))
    M_ref[0, 0] = M_ref[-1, -1] = h / 3
    assert np.allclose(K, K_ref, rtol=1e-13)
    assert np.allclose(M, M_ref, rtol=1e-13)


def test_2d_stiffness_is_five_point_stencil():
    n = 4
    m = build_mesh(2, [1.0, 1.0], n, n)
    K = assemble_stiffness(m, free_only=False).toarray()
    centre = 2 * (n + 1) + 2
    row = K[centre]
    assert np.isclose(row[centre], 4.0)
    for nb in (centre - 1, centre + 1, centre - (n + 1), centre + (n + 1)):
        assert np.isclose(row[nb], -1.0)
    assert np.isclose(np.abs(row).sum(), 8.0)


def test_stiffness_kills_constants_and_mass_integrates():
    m = build_mesh(2, [2.0, 1.0], 3, 5)
    K = assemble_stiffness(m, coeff=np.array([[2.0, 0.3], [0.3, 1.0]]), free_only=False)
    assert np.allclose(K @ np.ones(m.n_nodes), 0.0, atol=1e-12)
    M = assemble_mass(m)
    assert np.isclose(np.ones(m.n_nodes) @ M @ np.ones(m.n_nodes), 2.0)
    assert np.allclose(lumped_mass(m), np.asarray(M.sum(axis=1)).ravel())


def test_free_only_assembly_matches_slicing():
    m = build_mesh(2, [1.0, 1.0], 3, 3, dirichlet_sides={"left", "top"})
    local = np.random.default_rng(0).standard_normal((m.n_elements, 3, 3))
    full = assemble_matrix(m, local).toarray()
    free = assemble_matrix(m, local, free_only=True).toarray()
    assert np.allclose(free, full[np.ix_(m.free, m.free)])


def test_stiffness_energy_equals_gradient_integral():
    m = build_mesh(2, [1.0, 1.0], 4, 4)
    y = np.random.default_rng(1).standard_normal(m.n_nodes)
    K = assemble_stiffness(m, free_only=False)
    g = nodal_gradient(m, y)
    assert np.isclose(y @ K @ y, np.sum(m.measures * np.sum(g * g, axis=1)))


def test_coefficient_checks():
    check_coefficient(np.zeros((3, 2, 2)))
    with pytest.raises(ValueError):
        check_coefficient(np.array([[[1.0, 0.5], [0.0, 1.0]]]))
    with pytest.raises(ValueError):
        check_coefficient(np.array([[[-1.0, 0.0], [0.0, 1.0]]]))


def test_element_mean_and_local_stiffness_shape():
    m = build_mesh(1, [1.0], 3)
    y = np.array([0.0, 1.0, 2.0, 3.0])
    assert np.allclose(element_mean(m, y), [0.5, 1.5, 2.5])
    assert stiffness_local(m, np.ones((3, 1, 1))).shape == (3, 2, 2)
