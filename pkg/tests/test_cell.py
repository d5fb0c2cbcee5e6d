import numpy as np
import pytest
import scipy.sparse as sp

from twoscale.cell import CellMaterials, CellProblem, cell_residual, solve_cell
from twoscale.errors import SolverError
from twoscale.fem import DofMap, assemble_gradient_load, assemble_stiffness, constrain, solve_linear
from twoscale.kinetics import Kinetics
from twoscale.mesh import GAS, build_cell_mesh, build_strip_cell_mesh
from twoscale.tensors import effective_lambda

KIN = Kinetics(5.0, 2.5, 2.5)
MAT = CellMaterials()


@pytest.fixture(scope="module")
def mesh():
    return build_cell_mesh(0.4, 64, 0.05)


@pytest.fixture(scope="module")
def problem(mesh):
    return CellProblem(mesh, MAT, KIN)


def classical_corrector(mesh, coeff, elements, mask, j):
    """Periodic corrector of -div(c (e_j + grad w)) = 0 with zero mean, assembled directly."""
    mp = DofMap.periodic(mesh, mask)
    K = mp.reduce_matrix(assemble_stiffness(mesh, coeff, elements=elements))
    b = -mp.reduce_vector(assemble_gradient_load(mesh, coeff, j, elements=elements))
    w = mp.reduce_vector(np.bincount(mesh.triangles[elements].ravel(),
                                     np.repeat(mesh.areas[elements] / 3, 3), minlength=mesh.n_nodes))
    s = constrain(K, b, zero_mean=w)
    return mp.expand(s.recover(solve_linear(s.matrix, s.rhs).x))


@pytest.mark.parametrize("kin", [Kinetics(5.0, 2.5, 0.0), Kinetics(0.0, 2.5, 2.5)])
def test_no_reaction_decouples(mesh, kin):
    sol = solve_cell(3.0, 0.5, mesh, MAT, kin)
    assert not sol.reactive
    lam = np.where(mesh.region == GAS, MAT.lambda_g, MAT.lambda_s)
    gas = np.flatnonzero(mesh.region == GAS)
    for j in (0, 1):
        chi = classical_corrector(mesh, lam, np.arange(mesh.n_triangles), None, j)
        om = classical_corrector(mesh, MAT.D, gas, mesh.gas_nodes, j)
        assert np.allclose(sol.chi[j], chi, atol=1e-10)
        assert np.allclose(sol.omega[j][mesh.gas_nodes], om[mesh.gas_nodes], atol=1e-10)


def test_homogeneous_conductivity_gives_zero_chi(mesh):
    mat = CellMaterials(lambda_g=5e-4, lambda_s=5e-4)
    sol = solve_cell(-1.0, 0.3, mesh, mat, KIN)
    assert np.abs(sol.chi).max() <= 1e-10


def test_full_gas_cell_zero_correctors():
    m = build_strip_cell_mesh(6, 1.0)
    sol = solve_cell(3.0, 0.5, m, MAT, KIN)
    assert np.abs(sol.chi).max() <= 1e-12
    assert np.abs(sol.omega).max() <= 1e-12


@pytest.mark.parametrize("state", [(0.0, 0.0), (2.0, 0.3), (5.0, 0.05), (5.0, 0.0), (0.5, 1.0)])
def test_residual_and_gauge(problem, state):
    sol = problem.solve(*state)
    assert sol.residual <= 1e-9
    assert np.abs(sol.chi_dofs @ problem.mean_chi).max() <= 1e-12


def test_periodic_values_shared(problem, mesh):
    sol = problem.solve(4.0, 0.2)
    for a, b in mesh.periodic_pairs:
        assert sol.chi[0, a] == sol.chi[0, b]
        assert sol.omega[1, a] == sol.omega[1, b]


def test_residual_detects_perturbation(problem):
    sol = problem.solve(3.0, 0.4)
    chi = sol.chi.copy()
    chi[:, 100] += 1.0
    assert cell_residual(sol, chi=chi) > 1e3 * sol.residual


def test_residual_of_zero_solution_is_one(problem):
    sol = problem.solve(0.0, 0.0)
    z = np.zeros_like(sol.chi)
    assert cell_residual(sol, chi=z, omega=z) == pytest.approx(1.0, rel=1e-12)


def test_kernel_of_reactive_operator(problem):
    s, r = 3.0, 0.4
    A, _, reactive = problem.operator(s, r)
    assert reactive
    one_c, one_w = np.ones(problem.n_chi), np.ones(problem.n_omega)
    k = np.concatenate([s * s / KIN.u_a * one_c, -r * one_w])
    scale = sp.linalg.norm(A)
    assert np.linalg.norm(A @ k) <= 1e-12 * scale * np.linalg.norm(k)
    # constant test functions: every column of A sums to zero over (chi, omega) rows
    assert np.linalg.norm(A.T @ np.concatenate([one_c, one_w])) <= 1e-12 * scale
    # equal shifts are not in the kernel once the reaction is on
    assert np.linalg.norm(A @ np.concatenate([one_c, one_w])) > 1e-3 * scale


def test_rotation_symmetry(problem, mesh):
    sol = problem.solve(4.0, 0.3)
    from scipy.spatial import cKDTree
    _, swap = cKDTree(mesh.nodes).query(mesh.nodes[:, ::-1])
    assert np.allclose(sol.chi[1], sol.chi[0][swap], atol=1e-9)
    assert np.allclose(sol.omega[1], sol.omega[0][swap], atol=1e-9)


def test_q0_chi1_antisymmetric_about_midline(mesh):
    sol = solve_cell(5.0, 0.05, mesh, MAT, Kinetics(5.0, 2.5, 0.0))
    from scipy.spatial import cKDTree
    _, mirror = cKDTree(mesh.nodes).query(np.column_stack([1 - mesh.nodes[:, 0], mesh.nodes[:, 1]]))
    # chi_1 is odd about x = 1/2 up to the periodic identification of x = 0 and x = 1
    interior = (mesh.nodes[:, 0] > 1e-12) & (mesh.nodes[:, 0] < 1 - 1e-12)
    assert np.abs(sol.chi[0][interior] + sol.chi[0][mirror][interior]).max() <= 1e-6


def test_printed_sign_gives_negative_conductivity(mesh):
    prob = CellProblem(mesh, MAT, KIN, sign=+1)
    sol = prob.solve(0.5, 0.0)
    assert effective_lambda(sol, 0.5, 0.0)[0, 0] < 0
    default = CellProblem(mesh, MAT, KIN).solve(0.5, 0.0)
    assert effective_lambda(default, 0.5, 0.0)[0, 0] > 0


def test_invalid_sign(mesh):
    with pytest.raises(ValueError):
        CellProblem(mesh, MAT, KIN, sign=2)


def test_materials_validation():
    with pytest.raises(ValueError):
        CellMaterials(lambda_g=0.0)


def test_solver_failure_is_reported(problem, monkeypatch):
    import twoscale.cell as cell_mod
    monkeypatch.setattr(cell_mod, "cell_residual", lambda sol: 1.0)
    with pytest.raises(SolverError):
        problem.solve(1.0, 0.1)
