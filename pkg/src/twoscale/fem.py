"""P1 assembly, degree-of-freedom maps, constraints and linear solvers.

All assembly routines work in node space (one row per mesh node) and
return ``scipy.sparse.csr_matrix`` objects with duplicates summed.  A
:class:`DofMap` then restricts/merges node space onto the unknowns of a
particular problem (periodic identification, Dirichlet elimination).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import AssemblyError, SolverError


def p1_gradients(nodes, triangles):
    """Areas (ne,) and constant basis-function gradients (ne, 3, 2)."""
    p = nodes[triangles]
    x, y = p[..., 0], p[..., 1]
    # gradient of the barycentric coordinate k is (y_{k+1}-y_{k+2}, x_{k+2}-x_{k+1}) / (2A)
    dy = np.roll(y, -1, axis=1) - np.roll(y, -2, axis=1)
    dx = np.roll(x, -2, axis=1) - np.roll(x, -1, axis=1)
    twice_area = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    grads = np.stack([dy, dx], axis=2) / twice_area[:, None, None]
    return 0.5 * twice_area, grads


def _coeff_tensor(coeff, ne):
    """Broadcast a scalar, (ne,), (2,2) or (ne,2,2) coefficient to (ne,2,2)."""
    c = np.asarray(coeff, dtype=float)
    if c.ndim == 0:
        return np.broadcast_to(c * np.eye(2), (ne, 2, 2))
    if c.shape == (ne,):
        return c[:, None, None] * np.eye(2)
    if c.shape == (2, 2):
        return np.broadcast_to(c, (ne, 2, 2))
    if c.shape == (ne, 2, 2):
        return c
    raise AssemblyError(f"coefficient of shape {c.shape} does not match {ne} elements")


def _check_spd(c):
    if not np.all(np.isfinite(c)):
        raise AssemblyError("non-finite element coefficient")
    sym = np.abs(c[:, 0, 1] - c[:, 1, 0])
    scale = np.abs(c).max(axis=(1, 2))
    if np.any(sym > 1e-12 * np.maximum(scale, 1e-300)):
        k = int(np.argmax(sym))
        raise AssemblyError(f"element coefficient #{k} is not symmetric")
    det = c[:, 0, 0] * c[:, 1, 1] - c[:, 0, 1] * c[:, 1, 0]
    bad = np.flatnonzero(~((c[:, 0, 0] > 0) & (det > 0)))
    if bad.size:
        raise AssemblyError(f"element coefficient #{bad[0]} is not positive definite")


def _select(mesh, elements):
    tri = mesh.triangles
    if elements is None:
        return tri
    return tri[np.asarray(elements)]


def _to_csr(rows, cols, vals, n):
    A = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def assemble_stiffness(mesh, coeff=1.0, elements=None):
    """Stiffness matrix of the form  sum_e  C_e grad(phi_j) . grad(phi_i) |e|.

    Parameters
    ----------
    mesh : Mesh
    coeff : float or array
        Per-element symmetric positive-definite tensor: scalar, (ne,), (2,2)
        or (ne,2,2), where ne counts the selected elements.
    elements : array of int or bool, optional
        Subset of triangles to assemble over (default all).
    """
    tri = _select(mesh, elements)
    area, G = p1_gradients(mesh.nodes, tri)
    C = _coeff_tensor(coeff, len(tri))
    _check_spd(C)
    CG = np.einsum("eab,ekb->eka", C, G)
    Ke = area[:, None, None] * np.einsum("eia,eja->eij", CG, G)
    rows = np.repeat(tri[:, :, None], 3, axis=2)
    cols = np.repeat(tri[:, None, :], 3, axis=1)
    return _to_csr(rows, cols, Ke, mesh.n_nodes)


def assemble_mass(mesh, coeff=1.0, lumped=False, elements=None):
    """Consistent (or row-sum lumped) mass matrix with a per-element scalar weight."""
    tri = _select(mesh, elements)
    area, _ = p1_gradients(mesh.nodes, tri)
    c = np.broadcast_to(np.asarray(coeff, dtype=float), (len(tri),))
    w = c * area
    if lumped:
        d = np.bincount(tri.ravel(), weights=np.repeat(w / 3.0, 3), minlength=mesh.n_nodes)
        return sp.diags(d, format="csr")
    local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    Me = w[:, None, None] * local
    rows = np.repeat(tri[:, :, None], 3, axis=2)
    cols = np.repeat(tri[:, None, :], 3, axis=1)
    return _to_csr(rows, cols, Me, mesh.n_nodes)


def assemble_edge_mass(nodes, edges, n_nodes=None):
    """Mass matrix of P1 line elements: L/6 [[2,1],[1,2]] per edge."""
    n = len(nodes) if n_nodes is None else n_nodes
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        return sp.csr_matrix((n, n))
    d = nodes[edges[:, 1]] - nodes[edges[:, 0]]
    L = np.hypot(d[:, 0], d[:, 1])
    Me = L[:, None, None] * (np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0)
    rows = np.repeat(edges[:, :, None], 2, axis=2)
    cols = np.repeat(edges[:, None, :], 2, axis=1)
    return _to_csr(rows, cols, Me, n)


def assemble_interface_mass(cellmesh):
    """Matrix of the integrals of phi_i phi_j over the gas-solid interface."""
    return assemble_edge_mass(cellmesh.nodes, cellmesh.interface_edges, cellmesh.n_nodes)


def assemble_gradient_load(mesh, coeff, direction, elements=None):
    """Vector with entries  integral of (C e_j) . grad(phi_i)  (j = direction, 0-based)."""
    if direction not in (0, 1):
        raise ValueError(f"direction must be 0 or 1, got {direction}")
    tri = _select(mesh, elements)
    area, G = p1_gradients(mesh.nodes, tri)
    C = _coeff_tensor(coeff, len(tri))
    flux = C[:, :, direction]  # C e_j
    be = area[:, None] * np.einsum("ekb,eb->ek", G, flux)
    return np.bincount(tri.ravel(), weights=be.ravel(), minlength=mesh.n_nodes)


class StiffnessPattern:
    """Pre-computed sparsity and gradient products for repeated stiffness assembly.

    For a tensor coefficient C the element matrix is
    C11 B11 + C12 (B12 + B21) + C22 B22 with B_ab = |e| G[:, a] G[:, b]^T,
    so each reassembly is a weighted sum written straight into CSR data.
    """

    def __init__(self, mesh):
        tri = mesh.triangles
        self.n = mesh.n_nodes
        area, G = p1_gradients(mesh.nodes, tri)
        gx, gy = G[:, :, 0], G[:, :, 1]
        a = area[:, None, None]
        self.b11 = (a * gx[:, :, None] * gx[:, None, :]).reshape(len(tri), 9)
        self.b22 = (a * gy[:, :, None] * gy[:, None, :]).reshape(len(tri), 9)
        self.b12 = (a * (gx[:, :, None] * gy[:, None, :] + gy[:, :, None] * gx[:, None, :])).reshape(len(tri), 9)
        rows = np.repeat(tri[:, :, None], 3, axis=2).ravel()
        cols = np.repeat(tri[:, None, :], 3, axis=1).ravel()
        template = sp.coo_matrix((np.arange(1, rows.size + 1, dtype=float), (rows, cols)),
                                 shape=(self.n, self.n)).tocsr()
        # position of every (element, local i, local j) entry inside CSR data
        key = rows * self.n + cols
        csr_rows = np.repeat(np.arange(self.n), np.diff(template.indptr))
        csr_key = csr_rows * self.n + template.indices
        self.slot = np.searchsorted(csr_key, key)
        self.indptr = template.indptr
        self.indices = template.indices
        self.nnz = template.nnz

    def assemble(self, c11, c12, c22):
        vals = (np.asarray(c11)[:, None] * self.b11
                + np.asarray(c12)[:, None] * self.b12
                + np.asarray(c22)[:, None] * self.b22)
        data = np.bincount(self.slot, weights=vals.ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


# ---------------------------------------------------------------------------
# dof maps

@dataclass(frozen=True, eq=False)
class DofMap:
    """Map from mesh nodes to unknowns.

    ``node_to_dof[i]`` is the unknown carried by node i, or -1 when the node
    carries none.  Several nodes may share a dof (periodic images).
    ``dirichlet`` flags dofs whose values are prescribed.
    """

    node_to_dof: np.ndarray
    n_dofs: int
    dirichlet: np.ndarray

    @classmethod
    def identity(cls, n_nodes, dirichlet_nodes=()):
        flags = np.zeros(n_nodes, dtype=bool)
        flags[np.asarray(dirichlet_nodes, dtype=np.int64)] = True
        return cls(np.arange(n_nodes), n_nodes, flags)

    @classmethod
    def from_mesh(cls, mesh):
        """Identity map with the mesh's DIRICHLET nodes flagged."""
        return cls.identity(mesh.n_nodes, mesh.dirichlet_nodes())

    @classmethod
    def periodic(cls, cellmesh, node_mask=None):
        """Merge periodic images; restrict to nodes whose class meets ``node_mask``."""
        master = cellmesh.master
        keep = np.ones(cellmesh.n_nodes, dtype=bool) if node_mask is None else np.asarray(node_mask)
        active_masters = np.unique(master[keep])
        lookup = np.full(cellmesh.n_nodes, -1, dtype=np.int64)
        lookup[active_masters] = np.arange(len(active_masters))
        return cls(lookup[master], len(active_masters), np.zeros(len(active_masters), dtype=bool))

    @property
    def prolongation(self):
        """Sparse (n_nodes x n_dofs) 0/1 matrix P with node values = P @ dofs."""
        n = len(self.node_to_dof)
        on = np.flatnonzero(self.node_to_dof >= 0)
        return sp.csr_matrix((np.ones(len(on)), (on, self.node_to_dof[on])), shape=(n, self.n_dofs))

    def reduce_matrix(self, A, cols=None):
        P = self.prolongation
        Q = P if cols is None else cols.prolongation
        return (P.T @ A @ Q).tocsr()

    def reduce_vector(self, b):
        return self.prolongation.T @ b

    def expand(self, x, fill=0.0):
        out = np.full(len(self.node_to_dof), fill, dtype=float)
        on = self.node_to_dof >= 0
        out[on] = np.asarray(x)[self.node_to_dof[on]]
        return out


# ---------------------------------------------------------------------------
# constraints

@dataclass
class ReducedSystem:
    """Constrained linear system and the recipe to recover full dof vectors."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray | None = None
    fixed_values: np.ndarray | None = None
    n_dofs: int = 0
    n_multipliers: int = 0

    def recover(self, y):
        """Full dof vector(s) from a solution of the reduced system."""
        y = np.asarray(y)
        if self.free is None:
            return y[: self.n_dofs]
        shape = (self.n_dofs,) + y.shape[1:]
        out = np.empty(shape)
        out[self.free] = y
        out[~self.free] = self.fixed_values.reshape((-1,) + (1,) * (y.ndim - 1))
        return out


def constrain(A, b, dofmap=None, dirichlet_values=None, zero_mean=None):
    """Close a singular or boundary-value system.

    Exactly one treatment is applied.  With ``dirichlet_values`` the
    flagged dofs of ``dofmap`` are eliminated and their contributions moved
    to the right-hand side.  With ``zero_mean`` (one weight vector, or a
    list of them) each vector w adds a Lagrange multiplier enforcing
    w . x = 0.
    """
    if (dirichlet_values is None) == (zero_mean is None):
        raise ValueError("select exactly one of dirichlet_values or zero_mean")
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if dirichlet_values is not None:
        if dofmap is None:
            raise ValueError("Dirichlet elimination needs a dofmap")
        fixed = np.asarray(dofmap.dirichlet, dtype=bool)
        free = ~fixed
        g = np.broadcast_to(np.asarray(dirichlet_values, dtype=float), (int(fixed.sum()),)).copy()
        A_ff = A[free][:, free]
        A_fd = A[free][:, fixed]
        rhs = b[free] - (A_fd @ g if b.ndim == 1 else (A_fd @ g)[:, None])
        return ReducedSystem(A_ff.tocsr(), rhs, free=free, fixed_values=g, n_dofs=n)
    weights = [zero_mean] if np.ndim(zero_mean[0]) == 0 else list(zero_mean)
    W = sp.csr_matrix(np.vstack([np.asarray(w, dtype=float) for w in weights]))
    k = W.shape[0]
    bordered = sp.bmat([[A, W.T], [W, None]], format="csr")
    pad = np.zeros((k,) + b.shape[1:])
    return ReducedSystem(bordered, np.concatenate([b, pad]), n_dofs=n, n_multipliers=k)


# ---------------------------------------------------------------------------
# solvers

@dataclass
class SolveResult:
    x: np.ndarray
    residual: float
    iterations: int = 0


def _relative_residual(A, x, b):
    r = A @ x - b
    nb = np.linalg.norm(b)
    nr = np.linalg.norm(r)
    return nr / nb if nb > 0 else nr


def pcg(A, b, x0=None, rtol=1e-10, maxiter=None):
    """Jacobi-preconditioned conjugate gradients for SPD ``A``.

    Returns (x, iterations).  Raises SolverError on breakdown or when the
    residual does not drop below rtol * ||b|| within ``maxiter`` steps.
    """
    n = A.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError("CG needs a positive diagonal", iterations=0)
    inv_d = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    nb = np.linalg.norm(b)
    target = rtol * nb
    if nb == 0.0:
        return np.zeros(n), 0
    if np.linalg.norm(r) <= target:
        return x, 0
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    for k in range(1, maxiter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if not pAp > 0:
            raise SolverError("CG breakdown: direction of non-positive curvature",
                              np.linalg.norm(r) / nb, k)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= target:
            return x, k
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError("CG did not converge", np.linalg.norm(r) / nb, maxiter)


class Factorization:
    """Sparse LU factorization reusable across right-hand sides."""

    def __init__(self, A):
        self.A = sp.csc_matrix(A)
        try:
            self._lu = splu(self.A)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc

    def solve(self, b, rtol=1e-10):
        b = np.asarray(b, dtype=float)
        x = self._lu.solve(b)
        cols = x.reshape(len(x), -1)
        bs = b.reshape(len(b), -1)
        worst = 0.0
        for k in range(cols.shape[1]):
            res = _relative_residual(self.A, cols[:, k], bs[:, k])
            if not np.isfinite(res) or res > rtol:
                raise SolverError("direct solve missed tolerance", res)
            worst = max(worst, res)
        return SolveResult(x, worst)


def solve_linear(A, b, method="direct", rtol=1e-10, maxiter=None, x0=None):
    """Solve A x = b and verify ||A x - b|| <= rtol ||b||.

    ``method`` is ``"direct"`` (sparse LU, any square matrix) or ``"cg"``
    (Jacobi-preconditioned CG, SPD only).  ``b`` may hold several columns
    for the direct method.  Returns a SolveResult with the achieved
    relative residual; raises SolverError otherwise.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"incompatible shapes {A.shape} and {b.shape}")
    if method == "direct":
        return Factorization(A).solve(b, rtol=rtol)
    if method == "cg":
        x, its = pcg(A, b, x0=x0, rtol=rtol, maxiter=maxiter)
        return SolveResult(x, _relative_residual(A, x, b), its)
    raise ValueError(f"unknown solver method {method!r}")
