"""Semi-implicit Euler stepping of the homogenized heat and oxidizer equations.

On the macro rectangle the scheme advances

    (c/dt) M_L (u^{n+1} - u^n) + K(lam(u^n, v^n)) u^{n+1} = 0,
    (theta/dt) M_L (v^{n+1} - v^n) + K(D(u^n, v^n)) v^{n+1} = 0,

with the lumped mass M_L, tensors evaluated per element at the centroid
values of the previous state, Dirichlet data on x_1 = 0 and zero flux on
the rest of the boundary.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .cell import CellMaterials, CellProblem
from .errors import SolverError, TwoScaleError
from .fem import StiffnessPattern, solve_linear
from .kinetics import Kinetics
from .mesh import build_cell_mesh, build_macro_mesh
from .tensors import build_table, effective_scalars, tensors_at


def _as_field(value):
    """Constant or callable (x, y, t) -> values, as a callable."""
    if callable(value):
        return value
    c = float(value)
    if not math.isfinite(c):
        raise ValueError(f"field value must be finite, got {value}")
    return lambda x, y, t: np.full(np.shape(x), c)


@dataclass(frozen=True)
class MacroConfig:
    """Everything a macroscopic run needs.

    ``u_I``, ``v_I``, ``u_D`` and ``v_D`` are constants or callables
    ``(x, y, t)`` returning nodal values.  ``c`` and ``theta`` default to the
    effective scalars of the cell; ``stop_rel > 0`` ends the run once
    ``|u_avg - u_D| <= stop_rel |u_D|`` (constant ``u_D`` only).
    """

    Lx: float = 5.0
    Ly: float = 2.5
    nx: int = 100
    ny: int = 50
    dt: float = 0.01
    t_end: float = 3.2
    u_I: object = 1.7
    v_I: object = 0.1
    u_D: object = 5.0
    v_D: object = 0.05
    kinetics: Kinetics = field(default_factory=Kinetics)
    materials: CellMaterials = field(default_factory=CellMaterials)
    r: float = 0.4
    n_circle: int = 64
    h_cell: float = 0.05
    tensor_source: str = "table"
    u_grid: tuple = (0.0, 5.5, 33)
    v_grid: tuple = (0.0, 1.2, 33)
    output_times: tuple = (0.0, 0.8, 1.6, 2.4, 3.2)
    stop_rel: float = 0.0
    c: float | None = None
    theta: float | None = None
    solver: str = "cg"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_end >= 0:
            raise ValueError(f"t_end must be >= 0, got {self.t_end}")
        if not (self.Lx > 0 and self.Ly > 0):
            raise ValueError("domain lengths must be positive")
        if int(self.nx) < 1 or int(self.ny) < 1:
            raise ValueError("nx and ny must be at least 1")
        if self.tensor_source not in ("table", "direct"):
            raise ValueError(f"tensor_source must be 'table' or 'direct', got {self.tensor_source!r}")
        if not 0 < self.r < 0.5:
            raise ValueError(f"inclusion radius must lie in (0, 0.5), got {self.r}")
        if self.stop_rel < 0:
            raise ValueError("stop_rel must be >= 0")
        for name in ("u_D", "v_D", "u_I", "v_I"):
            _as_field(getattr(self, name))

    def grids(self):
        return np.linspace(*self.u_grid[:2], int(self.u_grid[2])), \
            np.linspace(*self.v_grid[:2], int(self.v_grid[2]))


@dataclass
class MacroState:
    t: float
    u: np.ndarray
    v: np.ndarray


# ---------------------------------------------------------------------------
# tensor providers: callables (u_centroid, v_centroid) -> (lam, D), each (ne, 2, 2)

class ConstantTensors:
    """Spatially and state independent tensors."""

    def __init__(self, lam, D):
        self.lam = np.asarray(lam, dtype=float).reshape(2, 2)
        self.D = np.asarray(D, dtype=float).reshape(2, 2)

    def __call__(self, uc, vc):
        n = len(uc)
        return np.broadcast_to(self.lam, (n, 2, 2)), np.broadcast_to(self.D, (n, 2, 2))


class TableTensors:
    """Bilinear table lookup, optionally split over threads.

    Each element is interpolated independently, so the chunking has no
    influence on the result.
    """

    def __init__(self, table, threads=1):
        self.table = table
        self.threads = max(1, int(threads))
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def __call__(self, uc, vc):
        if self._pool is None:
            lam, D, n_clamped = self.table.lookup(uc, vc)
        else:
            parts = np.array_split(np.arange(len(uc)), self.threads)
            res = list(self._pool.map(lambda idx: self.table.lookup(uc[idx], vc[idx]), parts))
            lam = np.concatenate([p[0] for p in res])
            D = np.concatenate([p[1] for p in res])
            n_clamped = sum(p[2] for p in res)
        self.table.clamped += n_clamped
        return lam, D

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


class DirectTensors:
    """Cell solve per distinct element state, cached.  Meant for small meshes."""

    def __init__(self, problem):
        self.problem = problem
        self.cache = {}

    def __call__(self, uc, vc):
        lam = np.empty((len(uc), 2, 2))
        D = np.empty((len(uc), 2, 2))
        for k, key in enumerate(zip(uc.tolist(), vc.tolist())):
            if key not in self.cache:
                t = tensors_at(self.problem, *key)
                self.cache[key] = (t.lam, t.D)
            lam[k], D[k] = self.cache[key]
        return lam, D


def make_tensors(config, threads=1):
    """Tensor provider and effective scalars (c, theta) for a run."""
    cellmesh = build_cell_mesh(config.r, config.n_circle, config.h_cell)
    scalars = effective_scalars(cellmesh, config.materials)
    if config.tensor_source == "direct":
        provider = DirectTensors(CellProblem(cellmesh, config.materials, config.kinetics))
    else:
        ug, vg = config.grids()
        table = build_table(ug, vg, cellmesh, config.materials, config.kinetics, workers=threads)
        provider = TableTensors(table, threads)
    return provider, scalars


# ---------------------------------------------------------------------------
# stepping

class MacroOperators:
    """Mesh-dependent pieces reused by every step."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.pattern = StiffnessPattern(mesh)
        self.mass = mesh.lumped_mass
        self.fixed = mesh.dirichlet_nodes()
        free = np.ones(mesh.n_nodes, dtype=bool)
        free[self.fixed] = False
        self.free = np.flatnonzero(free)
        self.x = mesh.nodes[:, 0]
        self.y = mesh.nodes[:, 1]

    def centroid_values(self, w):
        return w[self.mesh.triangles].mean(axis=1)

    def implicit_solve(self, T, cap, dt, w_old, g, source=None, solver="direct"):
        """Solve (cap/dt) M_L (w - w_old) + K(T) w = M_L source with w = g on the fixed nodes."""
        K = self.pattern.assemble(T[:, 0, 0], 0.5 * (T[:, 0, 1] + T[:, 1, 0]), T[:, 1, 1])
        m = cap / dt * self.mass
        rhs = m * w_old
        if source is not None:
            rhs = rhs + self.mass * source
        w = np.empty_like(w_old)
        w[self.fixed] = g
        f, d = self.free, self.fixed
        A = K[f][:, f]
        A = A + sp.diags(m[f], format="csr")
        b = rhs[f] - K[f][:, d] @ g
        if len(f):
            res = solve_linear(A, b, method=solver, rtol=1e-11, x0=w_old[f])
            w[f] = res.x
        return w


def init(config, mesh=None):
    """Initial state: u_I, v_I everywhere, then Dirichlet nodes set to u_D, v_D at t = 0."""
    mesh = mesh or build_macro_mesh(config.Lx, config.Ly, config.nx, config.ny)
    if mesh.n_nodes == 0:
        raise ValueError("macro mesh has no nodes")
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    u = np.asarray(_as_field(config.u_I)(x, y, 0.0), dtype=float) * np.ones(mesh.n_nodes)
    v = np.asarray(_as_field(config.v_I)(x, y, 0.0), dtype=float) * np.ones(mesh.n_nodes)
    d = mesh.dirichlet_nodes()
    u[d] = _as_field(config.u_D)(x[d], y[d], 0.0)
    v[d] = _as_field(config.v_D)(x[d], y[d], 0.0)
    return MacroState(0.0, u, v)


def step(state, config, tensors, ops, c, theta, source=None, t_new=None):
    """One semi-implicit Euler step.  Returns the new state.

    ``source(x, y, t)`` may return a pair of nodal source arrays added to
    the u and v equations (used for manufactured solutions).
    """
    dt = config.dt
    t_new = state.t + dt if t_new is None else t_new
    uc = ops.centroid_values(state.u)
    vc = ops.centroid_values(state.v)
    try:
        lam, D = tensors(uc, vc)
    except (ValueError, ArithmeticError) as exc:
        raise TwoScaleError(f"tensor evaluation failed at t = {state.t:g}: {exc}") from exc
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(D))):
        raise TwoScaleError(f"non-finite tensor at t = {state.t:g}")
    d = ops.fixed
    gu = _as_field(config.u_D)(ops.x[d], ops.y[d], t_new)
    gv = _as_field(config.v_D)(ops.x[d], ops.y[d], t_new)
    su = sv = None
    if source is not None:
        su, sv = source(ops.x, ops.y, t_new)
    u = ops.implicit_solve(lam, c, dt, state.u, gu, su, config.solver)
    v = ops.implicit_solve(D, theta, dt, state.v, gv, sv, config.solver)
    return MacroState(t_new, u, v)


def average(w, mesh):
    """Lumped-mass average of a nodal field over the mesh."""
    return float(mesh.lumped_mass @ w / mesh.total_area)


def average_temperature(state, mesh):
    return average(state.u, mesh)


@dataclass
class RunResult:
    """Time series, snapshots and diagnostics of a run.

    ``error`` is None for a completed run, otherwise the message of the
    failure that ended it; the series then stop at the last good step.
    """

    mesh: object
    times: list
    u_avg: list
    v_avg: list
    u_min: list
    u_max: list
    snapshots: list
    state: MacroState
    clamped: int = 0
    error: str | None = None
    stopped_early: bool = False

    def series(self):
        return np.column_stack([self.times, self.u_avg, self.v_avg])


def run(config, tensors=None, scalars=None, threads=1, source=None, mesh=None, callback=None):
    """Advance from t = 0 to t_end, recording averages every step.

    ``tensors``/``scalars`` default to :func:`make_tensors`.  ``c`` and
    ``theta`` in the config override the cell scalars.  ``callback(state)``
    is called after every step.
    """
    if tensors is None:
        tensors, cell_scalars = make_tensors(config, threads)
        scalars = scalars or cell_scalars
    c = config.c if config.c is not None else scalars.c
    theta = config.theta if config.theta is not None else scalars.theta
    mesh = mesh or build_macro_mesh(config.Lx, config.Ly, config.nx, config.ny)
    ops = MacroOperators(mesh)
    state = init(config, mesh)
    n_steps = int(math.ceil(config.t_end / config.dt - 1e-9))
    snap_steps = {int(round(t / config.dt)): t for t in config.output_times if t <= config.t_end + 1e-12}
    target = None
    if config.stop_rel > 0:
        if callable(config.u_D):
            raise ValueError("stop_rel needs a constant u_D")
        target = float(config.u_D)

    res = RunResult(mesh, [0.0], [average(state.u, mesh)], [average(state.v, mesh)],
                    [float(state.u.min())], [float(state.u.max())], [], state)
    if 0 in snap_steps:
        res.snapshots.append((0.0, state.u.copy(), state.v.copy()))
    for n in range(1, n_steps + 1):
        try:
            state = step(state, config, tensors, ops, c, theta, source, t_new=n * config.dt)
        except (TwoScaleError, SolverError, ArithmeticError) as exc:
            res.error = str(exc)
            break
        res.state = state
        res.times.append(state.t)
        res.u_avg.append(average(state.u, mesh))
        res.v_avg.append(average(state.v, mesh))
        res.u_min.append(float(state.u.min()))
        res.u_max.append(float(state.u.max()))
        if n in snap_steps:
            res.snapshots.append((state.t, state.u.copy(), state.v.copy()))
        if callback is not None:
            callback(state)
        if target is not None and abs(res.u_avg[-1] - target) <= config.stop_rel * abs(target):
            res.stopped_early = n < n_steps
            if not any(t == state.t for t, _, _ in res.snapshots):
                res.snapshots.append((state.t, state.u.copy(), state.v.copy()))
            break
    table = getattr(tensors, "table", None)
    res.clamped = table.clamped if table is not None else 0
    return res


def with_Q(config, Q):
    """Copy of ``config`` with a different heat release."""
    return replace(config, kinetics=replace(config.kinetics, Q=float(Q)))
