"""Effective conductivity and diffusivity tensors and their (u, v) lookup table."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cell import CellMaterials, CellProblem, reaction_strength
from .errors import TableBuildError
from .fem import p1_gradients
from .kinetics import Kinetics, arrhenius_f


@dataclass(frozen=True)
class EffectiveTensors:
    lam: np.ndarray
    D: np.ndarray
    state: tuple = (math.nan, math.nan)


@dataclass(frozen=True)
class EffectiveScalars:
    theta: float
    c: float


def porosity(cellmesh):
    """Gas volume fraction of the unit cell."""
    return cellmesh.gas_area


def heat_capacity(cellmesh, c_g, c_s):
    """Area-weighted heat capacity  c_g |Y_g| + c_s |Y_s|."""
    if not (c_g >= 0 and c_s >= 0):
        raise ValueError("heat capacities must be non-negative")
    return math.fsum([c_g * cellmesh.gas_area, c_s * cellmesh.solid_area])


def effective_scalars(cellmesh, materials):
    return EffectiveScalars(porosity(cellmesh), heat_capacity(cellmesh, materials.c_g, materials.c_s))


def _check_state(sol, s, r):
    if (float(s), float(r)) != tuple(sol.state):
        raise ValueError(f"cell solution was computed at {sol.state}, not at {(s, r)}")


def _volume_term(mesh, field, coeff, elements):
    tri = mesh.triangles[elements]
    area, G = p1_gradients(mesh.nodes, tri)
    grads = np.einsum("jek,ekb->jeb", field[:, tri], G)  # (2, ne, 2)
    shifted = grads + np.eye(2)[:, None, :]
    w = coeff * area
    return np.einsum("e,ieb,jeb->ij", w, shifted, shifted)


def _surface(M, a, b):
    """Matrix of interface integrals  <a_i, b_j>  for node fields a, b of shape (2, n)."""
    return a @ (M @ b.T)


def effective_lambda(sol, s, r):
    """Effective conductivity: volume energy of (e_i + grad chi_i) plus the reaction surface term.

    Surface term:  Q f(s) int_Gamma [ r chi_i chi_j + s^2/(2 u_a) (omega_j chi_i + omega_i chi_j) ].
    """
    _check_state(sol, s, r)
    prob = sol.problem
    mesh, mat, kin = prob.mesh, prob.materials, prob.kin
    vol = _volume_term(mesh, sol.chi, prob.lam_elem, np.arange(mesh.n_triangles))
    qf = reaction_strength(s, r, kin, mat)
    if qf == 0.0:
        return vol
    M = prob.interface_mass
    cc = _surface(M, sol.chi, sol.chi)
    wc = _surface(M, sol.chi, sol.omega)  # wc[i, j] = <chi_i, omega_j>
    a = s * s / kin.u_a
    return vol + qf * (r * cc + 0.5 * a * (wc + wc.T))


def effective_D(sol, s, r):
    """Effective diffusivity: gas-phase energy of (e_i + grad omega_i) minus the surface term.

    Surface term:  f(s) int_Gamma [ s^2/u_a omega_i omega_j + r/2 (omega_i chi_j + omega_j chi_i) ].
    """
    _check_state(sol, s, r)
    prob = sol.problem
    mesh, mat, kin = prob.mesh, prob.materials, prob.kin
    vol = _volume_term(mesh, sol.omega, mat.D, prob.gas_elements)
    if reaction_strength(s, r, kin, mat) == 0.0:
        return vol
    f = arrhenius_f(s, kin)
    M = prob.interface_mass
    ww = _surface(M, sol.omega, sol.omega)
    wc = _surface(M, sol.omega, sol.chi)
    a = s * s / kin.u_a
    return vol - f * (a * ww + 0.5 * r * (wc + wc.T))


def tensors_at(problem, s, r):
    sol = problem.solve(s, r)
    return EffectiveTensors(effective_lambda(sol, s, r), effective_D(sol, s, r), (float(s), float(r)))


def min_eigenvalue(T):
    T = np.asarray(T)
    # ((a - d)/2)^2 + bc avoids the cancellation in tr^2/4 - det for near-isotropic tensors
    half_gap = 0.5 * (T[..., 0, 0] - T[..., 1, 1])
    disc = np.sqrt(np.maximum(half_gap * half_gap + T[..., 0, 1] * T[..., 1, 0], 0.0))
    return 0.5 * (T[..., 0, 0] + T[..., 1, 1]) - disc


# ---------------------------------------------------------------------------
# table

@dataclass(eq=False)
class TensorTable:
    """Tensors on a rectangular (u, v) grid with bilinear interpolation.

    ``lam`` and ``D`` have shape (nu, nv, 2, 2).  Queries outside the grid
    are clamped to it; ``clamped`` counts clamped query points.
    """

    u_grid: np.ndarray
    v_grid: np.ndarray
    lam: np.ndarray
    D: np.ndarray
    clamped: int = field(default=0, compare=False)

    def __post_init__(self):
        self.u_grid = np.asarray(self.u_grid, dtype=float)
        self.v_grid = np.asarray(self.v_grid, dtype=float)
        for g in (self.u_grid, self.v_grid):
            if g.ndim != 1 or len(g) < 2 or not np.all(np.diff(g) > 0):
                raise ValueError("table grids need at least two strictly ascending values")
        # private copies: the table freezes its arrays
        self.lam = np.array(self.lam, dtype=float)
        self.D = np.array(self.D, dtype=float)
        shape = (len(self.u_grid), len(self.v_grid), 2, 2)
        if self.lam.shape != shape or self.D.shape != shape:
            raise ValueError(f"table arrays must have shape {shape}")
        self.lam.setflags(write=False)
        self.D.setflags(write=False)

    def _locate(self, grid, x):
        xc = np.clip(x, grid[0], grid[-1])
        k = np.clip(np.searchsorted(grid, xc, side="right") - 1, 0, len(grid) - 2)
        t = (xc - grid[k]) / (grid[k + 1] - grid[k])
        return k, t, xc != x

    def lookup(self, s, r):
        """Bilinear (lam, D, n_clamped) at arrays of states, without touching the counter."""
        s = np.asarray(s, dtype=float)
        r = np.asarray(r, dtype=float)
        i, a, ci = self._locate(self.u_grid, s)
        j, b, cj = self._locate(self.v_grid, r)
        a = a[..., None, None]
        b = b[..., None, None]
        out = []
        for T in (self.lam, self.D):
            out.append((1 - a) * (1 - b) * T[i, j] + a * (1 - b) * T[i + 1, j]
                       + (1 - a) * b * T[i, j + 1] + a * b * T[i + 1, j + 1])
        return out[0], out[1], int(np.count_nonzero(ci | cj))

    def interpolate(self, s, r):
        """Bilinear (lam, D) at arrays of states; returns arrays of shape (..., 2, 2)."""
        lam, D, n_clamped = self.lookup(s, r)
        self.clamped += n_clamped
        return lam, D

    def eval(self, s, r):
        lam, D = self.interpolate(s, r)
        return EffectiveTensors(lam, D, (float(s), float(r)))


def _solve_row(args):
    mesh, materials, kin, sign, u, v_grid = args
    prob = CellProblem(mesh, materials, kin, sign)
    lam = np.empty((len(v_grid), 2, 2))
    D = np.empty((len(v_grid), 2, 2))
    for k, v in enumerate(v_grid):
        t = tensors_at(prob, u, v)
        lam[k], D[k] = t.lam, t.D
    return lam, D


def build_table(u_grid, v_grid, cellmesh, materials=None, kin=None, workers=1, check=True,
                sign=-1):
    """Solve the cell problem at every grid point and tabulate (lam, D).

    Rows of constant u are distributed over ``workers`` processes; each
    grid point is an independent solve, so the result does not depend on
    the worker count.  With ``check`` every entry must be symmetric and
    positive definite, otherwise TableBuildError names the first offender.
    """
    materials = materials or CellMaterials()
    kin = kin or Kinetics()
    u_grid = np.asarray(u_grid, dtype=float)
    v_grid = np.asarray(v_grid, dtype=float)
    jobs = [(cellmesh, materials, kin, sign, float(u), v_grid) for u in u_grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_solve_row, jobs))
    else:
        rows = [_solve_row(j) for j in jobs]
    lam = np.stack([r[0] for r in rows])
    D = np.stack([r[1] for r in rows])
    if check:
        for name, T in (("lambda", lam), ("D", D)):
            eig = min_eigenvalue(T)
            bad = np.argwhere(~(eig > 0))
            if len(bad):
                i, j = bad[0]
                raise TableBuildError(
                    f"{name} is not positive definite at (u, v) = ({u_grid[i]:g}, {v_grid[j]:g}); "
                    f"min eigenvalue {eig[i, j]:.6g}", point=(u_grid[i], v_grid[j]))
    # symmetric by construction up to roundoff
    lam = 0.5 * (lam + np.swapaxes(lam, -1, -2)) if check else lam
    D = 0.5 * (D + np.swapaxes(D, -1, -2)) if check else D
    return TensorTable(u_grid, v_grid, lam, D)


def tabulate_csv_rows(table):
    rows = []
    for i, u in enumerate(table.u_grid):
        for j, v in enumerate(table.v_grid):
            L, D = table.lam[i, j], table.D[i, j]
            rows.append((u, v, L[0, 0], L[0, 1], L[1, 1], D[0, 0], D[0, 1], D[1, 1]))
    return rows


TABLE_COLUMNS = ("u", "v", "l11", "l12", "l22", "d11", "d12", "d22")


def table_from_rows(rows):
    """Inverse of :func:`tabulate_csv_rows`."""
    arr = np.asarray(rows, dtype=float)
    u = np.unique(arr[:, 0])
    v = np.unique(arr[:, 1])
    lam = np.empty((len(u), len(v), 2, 2))
    D = np.empty_like(lam)
    iu = np.searchsorted(u, arr[:, 0])
    iv = np.searchsorted(v, arr[:, 1])
    lam[iu, iv] = np.stack([np.stack([arr[:, 2], arr[:, 3]], -1), np.stack([arr[:, 3], arr[:, 4]], -1)], -2)
    D[iu, iv] = np.stack([np.stack([arr[:, 5], arr[:, 6]], -1), np.stack([arr[:, 6], arr[:, 7]], -1)], -2)
    return TensorTable(u, v, lam, D)

