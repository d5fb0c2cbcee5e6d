import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from twoscale.errors import AssemblyError, SolverError
from twoscale.fem import (DofMap, Factorization, StiffnessPattern, assemble_edge_mass,
                          assemble_gradient_load, assemble_interface_mass, assemble_mass,
                          assemble_stiffness, constrain, p1_gradients, pcg, solve_linear)
from twoscale.mesh import Mesh, build_cell_mesh, build_macro_mesh, build_strip_cell_mesh


@pytest.fixture(scope="module")
def square():
    return build_macro_mesh(1.0, 1.0, 6, 6)


@pytest.fixture(scope="module")
def cell():
    return build_cell_mesh(0.4, 64, 0.05)


def single_triangle():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return Mesh(nodes, np.array([[0, 1, 2]]), np.array([[0, 1], [1, 2], [2, 0]]),
                ("n", "n", "n"), np.zeros(3, np.int8))


def test_single_triangle_stiffness():
    K = assemble_stiffness(single_triangle()).toarray()
    expected = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
    assert np.allclose(K, expected, atol=1e-15)


def test_gradients_sum_to_zero(square):
    area, G = p1_gradients(square.nodes, square.triangles)
    assert np.allclose(G.sum(axis=1), 0.0, atol=1e-12)
    assert np.allclose(area, 1.0 / 72)


def test_stiffness_kernel_and_symmetry(square):
    K = assemble_stiffness(square)
    assert np.abs(K @ np.ones(square.n_nodes)).max() <= 1e-12
    assert abs(K - K.T).max() <= 1e-14


def test_stiffness_linear_in_coefficient(square):
    K1 = assemble_stiffness(square, 1.0)
    K2 = assemble_stiffness(square, 2.0)
    assert abs(K2 - 2 * K1).max() == 0.0


def test_stiffness_psd_rayleigh(square):
    rng = np.random.default_rng(0)
    C = np.array([[2.0, 0.3], [0.3, 0.5]])
    K = assemble_stiffness(square, C)
    for _ in range(20):
        x = rng.standard_normal(square.n_nodes)
        assert x @ K @ x >= -1e-12


def test_stiffness_additive(square):
    idx = np.arange(square.n_triangles)
    a, b = idx[idx % 3 == 0], idx[idx % 3 != 0]
    full = assemble_stiffness(square, 1.5)
    parts = assemble_stiffness(square, 1.5, a) + assemble_stiffness(square, 1.5, b)
    assert abs(full - parts).max() <= 1e-15


@pytest.mark.parametrize("coeff", [np.array([[1.0, 2.0], [2.0, 1.0]]), np.array([[1.0, 0.1], [0.0, 1.0]]),
                                   -1.0])
def test_stiffness_rejects_bad_coefficient(square, coeff):
    with pytest.raises(AssemblyError):
        assemble_stiffness(square, coeff)


def test_pattern_matches_direct_assembly(square):
    rng = np.random.default_rng(1)
    ne = square.n_triangles
    c11 = 1 + rng.random(ne)
    c22 = 1 + rng.random(ne)
    c12 = 0.3 * rng.random(ne)
    C = np.stack([np.stack([c11, c12], -1), np.stack([c12, c22], -1)], -2)
    K = assemble_stiffness(square, C)
    Kp = StiffnessPattern(square).assemble(c11, c12, c22)
    assert abs(K - Kp).max() <= 1e-14


def test_mass_measure(square):
    one = np.ones(square.n_nodes)
    M = assemble_mass(square)
    assert one @ M @ one == pytest.approx(1.0, abs=1e-12)
    ML = assemble_mass(square, lumped=True)
    assert np.allclose(ML.diagonal(), np.asarray(M.sum(axis=1)).ravel())


def test_mass_piecewise_gives_heat_capacity(cell):
    c = np.where(cell.region == 0, 1.57e-3, 0.69)
    one = np.ones(cell.n_nodes)
    val = one @ assemble_mass(cell, c) @ one
    assert val == pytest.approx(1.57e-3 * cell.gas_area + 0.69 * cell.solid_area, rel=1e-12)


def test_edge_mass_local():
    nodes = np.array([[0.0, 0.0], [3.0, 4.0]])
    M = assemble_edge_mass(nodes, [[0, 1]]).toarray()
    assert np.allclose(M, 5.0 / 6.0 * np.array([[2, 1], [1, 2]]))


def test_interface_mass_perimeter(cell):
    M = assemble_interface_mass(cell)
    one = np.ones(cell.n_nodes)
    assert one @ M @ one == pytest.approx(64 * 2 * 0.4 * np.sin(np.pi / 64), abs=1e-12)
    on_gamma = np.zeros(cell.n_nodes, bool)
    on_gamma[cell.interface_edges.ravel()] = True
    rows = np.unique(M.nonzero()[0])
    assert np.all(on_gamma[rows])


def test_interface_mass_empty_for_full_gas():
    m = build_strip_cell_mesh(4, 1.0)
    assert assemble_interface_mass(m).nnz == 0


def test_gradient_load_periodic_constant(cell):
    mp = DofMap.periodic(cell)
    for j in (0, 1):
        b = mp.reduce_vector(assemble_gradient_load(cell, 2.0, j))
        assert np.abs(b).max() <= 1e-12


def test_gradient_load_laminate_concentrated():
    m = build_strip_cell_mesh(8)
    lam = np.where(m.region == 0, 2.38e-4, 7e-4)
    mp = DofMap.periodic(m)
    b = mp.expand(mp.reduce_vector(assemble_gradient_load(m, lam, 0)))
    x = m.nodes[:, 0]
    jump = np.isclose(x, 0.5) | np.isclose(x, 0.0) | np.isclose(x, 1.0)
    assert np.abs(b[~jump]).max() <= 1e-15
    assert np.abs(b[jump]).max() > 1e-5
    assert np.abs(assemble_gradient_load(m, 0.0, 1)).max() == 0.0


def test_periodic_map_merges_corners(cell):
    mp = DofMap.periodic(cell)
    corners = np.flatnonzero(np.all(np.isin(cell.nodes, (0.0, 1.0)), axis=1))
    assert len(set(mp.node_to_dof[corners].tolist())) == 1
    one = np.ones(cell.n_nodes)
    M = assemble_mass(cell)
    Mr = mp.reduce_matrix(M)
    ones = np.ones(mp.n_dofs)
    assert ones @ Mr @ ones == pytest.approx(one @ M @ one, rel=1e-14)


def test_solve_small_system():
    A = sp.csr_matrix([[2.0, 1.0], [1.0, 3.0]])
    for method in ("direct", "cg"):
        res = solve_linear(A, np.array([3.0, 5.0]), method=method)
        assert np.allclose(res.x, [0.8, 1.4], atol=1e-12)
        assert res.residual <= 1e-10


def test_identity_solve():
    b = np.arange(5.0)
    assert np.array_equal(solve_linear(sp.identity(5), b).x, b)


def test_singular_stiffness_fails(square):
    K = assemble_stiffness(square)
    b = np.random.default_rng(0).standard_normal(square.n_nodes)
    with pytest.raises(SolverError):
        solve_linear(K, b)


def test_cg_reports_nonconvergence(square):
    K = assemble_stiffness(square) + sp.identity(square.n_nodes)
    b = np.ones(square.n_nodes)
    b[0] = 5
    with pytest.raises(SolverError) as info:
        pcg(K, b, maxiter=2, rtol=1e-14)
    assert info.value.residual > 0


def test_factorization_multiple_rhs():
    A = sp.csr_matrix([[4.0, 1.0, 0], [1.0, 3.0, 1.0], [0, 1.0, 2.0]])
    B = np.eye(3)
    x = Factorization(A).solve(B).x
    assert np.allclose(A @ x, B)


def test_dirichlet_elimination(square):
    K = assemble_stiffness(square) + assemble_mass(square)
    b = np.zeros(square.n_nodes)
    dm = DofMap.from_mesh(square)
    sys_ = constrain(K, b, dm, dirichlet_values=5.0)
    x = sys_.recover(solve_linear(sys_.matrix, sys_.rhs).x)
    assert np.all(x[square.dirichlet_nodes()] == 5.0)


def test_zero_mean_constraint(cell):
    mp = DofMap.periodic(cell)
    lam = np.where(cell.region == 0, 2.38e-4, 7e-4)
    K = mp.reduce_matrix(assemble_stiffness(cell, lam))
    b = -mp.reduce_vector(assemble_gradient_load(cell, lam, 0))
    w = mp.reduce_vector(cell.lumped_mass)
    sys_ = constrain(K, b, zero_mean=w)
    x = sys_.recover(solve_linear(sys_.matrix, sys_.rhs).x)
    assert abs(w @ x) <= 1e-12
    assert np.abs(K @ x - b).max() <= 1e-10 * np.abs(b).max()


def test_constrain_requires_one_treatment(square):
    K = assemble_stiffness(square)
    b = np.zeros(square.n_nodes)
    with pytest.raises(ValueError):
        constrain(K, b)
    with pytest.raises(ValueError):
        constrain(K, b, DofMap.from_mesh(square), dirichlet_values=1.0, zero_mean=np.ones(square.n_nodes))


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2 ** 31 - 1))
def test_cg_matches_direct_on_spd(n, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    A = sp.csr_matrix(B @ B.T + n * np.eye(n))
    b = rng.standard_normal(n)
    x1 = solve_linear(A, b, "cg", rtol=1e-12).x
    x2 = solve_linear(A, b, "direct", rtol=1e-12).x
    assert np.allclose(x1, x2, rtol=1e-8, atol=1e-10)
