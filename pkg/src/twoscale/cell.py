"""Coupled corrector cell problem with Arrhenius interface reaction.

For a macroscopic state (s, r) = (temperature, concentration) and each
direction j the unknowns are the thermal corrector chi_j on the whole cell
and the mass corrector omega_j on the gas part, both periodic.  The
discrete weak form, tested with (phi, psi), reads

    (lam (e_j + grad chi), grad phi)_Y + Q (D (e_j + grad omega), grad psi)_Yg
      + sigma Q f(s) <r chi + s^2/u_a omega, phi - psi>_Gamma = 0,

which is linear in (chi, omega) for fixed (s, r).  The exchange sign
sigma = -1 is what integrating the interface conditions by parts gives
when heat is released into the cell and oxidizer is drawn from the gas
(normal pointing from solid into gas).  sigma = +1 is available for
comparison; it gives indefinite effective tensors for the reference data.

The system is singular by one dimension: (s^2/u_a, -r) times the constant
is annihilated by the reaction term.  It is closed by a zero-mean
condition on chi.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import SolverError
from .fem import (DofMap, Factorization, assemble_gradient_load, assemble_interface_mass,
                  assemble_stiffness, constrain, p1_gradients)
from .kinetics import Kinetics, arrhenius_f
from .mesh import GAS

# reaction couplings below this fraction of the diffusive scale are treated
# as absent; keeps the bordered system well conditioned as f(s) -> 0
_COUPLING_FLOOR = 1e-14


@dataclass(frozen=True)
class CellMaterials:
    """Constant material data of the cell (defaults: the reference parameter table)."""

    lambda_g: float = 2.38e-4
    lambda_s: float = 7e-4
    D: float = 0.25
    c_g: float = 1.57e-3
    c_s: float = 0.69

    def __post_init__(self):
        for name in ("lambda_g", "lambda_s", "D", "c_g", "c_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


def reaction_strength(s, r, kin, materials):
    """Q f(s) if the interface coupling is numerically active at (s, r), else 0."""
    qf = kin.Q * arrhenius_f(s, kin)
    scale = max(materials.lambda_g, materials.lambda_s, kin.Q * materials.D)
    if qf * max(abs(r), s * s / kin.u_a) <= _COUPLING_FLOOR * scale:
        return 0.0
    return qf


@dataclass(eq=False)
class CellSolution:
    """Correctors chi_j (all nodes) and omega_j (zero off the gas nodes) at one state.

    ``chi`` and ``omega`` have shape (2, n_nodes); ``*_dofs`` hold the
    periodic unknowns they were expanded from.  ``reactive`` records
    whether the interface coupling was switched on.
    """

    state: tuple
    chi: np.ndarray
    omega: np.ndarray
    chi_dofs: np.ndarray
    omega_dofs: np.ndarray
    residual: float
    reactive: bool
    problem: "CellProblem" = field(repr=False)

    @property
    def mesh(self):
        return self.problem.mesh

    @property
    def omega_mask(self):
        return self.problem.omega_map.node_to_dof >= 0


class CellProblem:
    """Assembled, state-independent blocks of the cell problem on one mesh.

    Only the scalar reaction coefficients change with (s, r), so repeated
    solves reuse every matrix and load vector built here.
    """

    def __init__(self, mesh, materials=None, kin=None, sign=-1):
        if sign not in (-1, 1):
            raise ValueError(f"sign must be -1 or +1, got {sign}")
        self.sign = sign
        self.mesh = mesh
        self.materials = materials or CellMaterials()
        self.kin = kin or Kinetics()
        mat = self.materials
        gas = np.flatnonzero(mesh.region == GAS)
        self.gas_elements = gas
        self.lam_elem = np.where(mesh.region == GAS, mat.lambda_g, mat.lambda_s)

        self.chi_map = DofMap.periodic(mesh)
        self.omega_map = DofMap.periodic(mesh, mesh.gas_nodes)
        Pc, Pw = self.chi_map.prolongation, self.omega_map.prolongation

        K_lam = assemble_stiffness(mesh, self.lam_elem)
        K_D = assemble_stiffness(mesh, mat.D, elements=gas)
        M = assemble_interface_mass(mesh)
        self.interface_mass = M
        self.K_cc = (Pc.T @ K_lam @ Pc).tocsr()
        self.K_ww = (Pw.T @ K_D @ Pw).tocsr()
        self.M_cc = (Pc.T @ M @ Pc).tocsr()
        self.M_cw = (Pc.T @ M @ Pw).tocsr()
        self.M_wc = (Pw.T @ M @ Pc).tocsr()
        self.M_ww = (Pw.T @ M @ Pw).tocsr()
        self.load_chi = np.column_stack(
            [Pc.T @ assemble_gradient_load(mesh, self.lam_elem, j) for j in (0, 1)])
        self.load_omega = np.column_stack(
            [Pw.T @ assemble_gradient_load(mesh, mat.D, j, elements=gas) for j in (0, 1)])
        lumped = mesh.lumped_mass
        gas_lumped = np.bincount(mesh.triangles[gas].ravel(),
                                 weights=np.repeat(mesh.areas[gas] / 3.0, 3),
                                 minlength=mesh.n_nodes)
        self.mean_chi = Pc.T @ lumped
        self.mean_omega = Pw.T @ gas_lumped
        self.n_chi = self.chi_map.n_dofs
        self.n_omega = self.omega_map.n_dofs

    def operator(self, s, r):
        """Unconstrained block matrix, right-hand sides (two columns) and reaction flag."""
        kin = self.kin
        qf = reaction_strength(s, r, kin, self.materials)
        a = s * s / kin.u_a
        if qf > 0 and len(self.mesh.interface_edges) == 0:
            # no interface: nothing couples the two problems
            qf = 0.0
        if qf > 0:
            qf = self.sign * qf
            A = sp.bmat([
                [self.K_cc + (qf * r) * self.M_cc, (qf * a) * self.M_cw],
                [(-qf * r) * self.M_wc, kin.Q * self.K_ww - (qf * a) * self.M_ww],
            ], format="csr")
            rhs = -np.vstack([self.load_chi, kin.Q * self.load_omega])
        else:
            # no interface exchange: two classical periodic problems
            A = sp.block_diag([self.K_cc, self.K_ww], format="csr")
            rhs = -np.vstack([self.load_chi, self.load_omega])
        return A, rhs, qf != 0

    def constraints(self, reactive):
        zc = np.zeros(self.n_chi)
        zw = np.zeros(self.n_omega)
        chi_mean = np.concatenate([self.mean_chi, zw])
        if reactive:
            return [chi_mean]
        return [chi_mean, np.concatenate([zc, self.mean_omega])]

    def solve(self, s, r, rtol=1e-10):
        """Solve both directional problems at (s, r) with one factorization."""
        s, r = float(s), float(r)
        A, rhs, reactive = self.operator(s, r)
        system = constrain(A, rhs, zero_mean=self.constraints(reactive))
        result = Factorization(system.matrix).solve(system.rhs, rtol=rtol)
        x = system.recover(result.x)
        chi_dofs = x[: self.n_chi].T.copy()
        omega_dofs = x[self.n_chi:].T.copy()
        chi = np.vstack([self.chi_map.expand(c) for c in chi_dofs])
        omega = np.vstack([self.omega_map.expand(w) for w in omega_dofs])
        sol = CellSolution((s, r), chi, omega, chi_dofs, omega_dofs, 0.0, reactive, self)
        sol.residual = cell_residual(sol)
        if not sol.residual <= 1e-9:
            raise SolverError("cell solution fails the weak-form residual check", sol.residual)
        return sol


def solve_cell(s, r, cellmesh, materials=None, kin=None, rtol=1e-10, sign=-1):
    """Correctors (chi_j, omega_j), j = 1, 2, at the macroscopic state (s, r).

    Builds a :class:`CellProblem`; prefer the class directly when solving
    at many states on the same mesh.
    """
    return CellProblem(cellmesh, materials, kin, sign).solve(s, r, rtol=rtol)


# three-point Gauss-Legendre rule on [0, 1]
_GL_X = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
_GL_W = np.array([5.0, 8.0, 5.0]) / 18.0


def cell_residual(sol, chi=None, omega=None):
    """Relative weak-form residual of a cell solution.

    Re-evaluates every term of the weak form element by element (volume
    terms exactly, interface terms with 3-point Gauss quadrature on each
    edge), independently of the assembled matrices, and returns
    max_j ||R_j|| / ||L_j||, where L_j collects the e_j source terms.
    ``chi``/``omega`` override the nodal fields of ``sol`` (shape (2, n)).
    """
    prob = sol.problem
    mesh, mat, kin = prob.mesh, prob.materials, prob.kin
    s, r = sol.state
    chi = sol.chi if chi is None else np.asarray(chi)
    omega = sol.omega if omega is None else np.asarray(omega)
    qf = reaction_strength(s, r, kin, mat)
    a = s * s / kin.u_a
    q_omega = kin.Q if qf > 0 else 1.0

    tri = mesh.triangles
    area, G = p1_gradients(mesh.nodes, tri)
    gas = mesh.region == GAS
    lam = np.where(gas, mat.lambda_g, mat.lambda_s)
    e = mesh.interface_edges
    d = mesh.nodes[e[:, 1]] - mesh.nodes[e[:, 0]]
    length = np.hypot(d[:, 0], d[:, 1])
    worst = 0.0
    for j in (0, 1):
        ej = np.eye(2)[j]
        grad_chi = np.einsum("ek,ekb->eb", chi[j][tri], G)
        grad_omega = np.einsum("ek,ekb->eb", omega[j][tri], G)
        flux_c = (lam * area)[:, None] * (ej + grad_chi)
        flux_w = (q_omega * mat.D * area * gas)[:, None] * (ej + grad_omega)
        src_c = (lam * area)[:, None] * ej
        src_w = (q_omega * mat.D * area * gas)[:, None] * ej
        n = mesh.n_nodes
        Rc = np.bincount(tri.ravel(), np.einsum("eb,ekb->ek", flux_c, G).ravel(), minlength=n)
        Rw = np.bincount(tri.ravel(), np.einsum("eb,ekb->ek", flux_w, G).ravel(), minlength=n)
        Lc = np.bincount(tri.ravel(), np.einsum("eb,ekb->ek", src_c, G).ravel(), minlength=n)
        Lw = np.bincount(tri.ravel(), np.einsum("eb,ekb->ek", src_w, G).ravel(), minlength=n)
        if qf > 0 and len(e):
            for x, w in zip(_GL_X, _GL_W):
                shape = np.array([1.0 - x, x])
                c_q = chi[j][e] @ shape
                w_q = omega[j][e] @ shape
                flux = prob.sign * qf * (r * c_q + a * w_q) * w * length
                contrib = flux[:, None] * shape
                Rc += np.bincount(e.ravel(), contrib.ravel(), minlength=n)
                Rw -= np.bincount(e.ravel(), contrib.ravel(), minlength=n)
        # homogeneous cells have a vanishing periodic load; fall back to the unreduced scale
        floor = 1e-12 * np.sqrt(Lc @ Lc + Lw @ Lw)
        Rc = prob.chi_map.reduce_vector(Rc)
        Rw = prob.omega_map.reduce_vector(Rw)
        Lc = prob.chi_map.reduce_vector(Lc)
        Lw = prob.omega_map.reduce_vector(Lw)
        num = np.sqrt(Rc @ Rc + Rw @ Rw)
        den = np.sqrt(Lc @ Lc + Lw @ Lw)
        worst = max(worst, num / den if den > floor else num / max(floor * 1e12, 1e-300))
    return float(worst)
