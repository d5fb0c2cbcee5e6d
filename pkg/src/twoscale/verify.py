"""Independent oracles and refinement studies for the numerical kernels.

The oracles here are closed forms (layered media, bounds, manufactured
solutions) that do not reuse the kernels they check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cell import CellMaterials, CellProblem
from .kinetics import Kinetics, arrhenius_df, arrhenius_f, linear_growth_violations
from .macro import ConstantTensors, MacroConfig, run
from .mesh import build_cell_mesh, build_macro_mesh, build_strip_cell_mesh
from .tensors import effective_scalars, min_eigenvalue, tensors_at


def laminate_oracle(lambda_a, lambda_b, fraction_a):
    """Effective tensor of layers stacked along e_1: diag(harmonic, arithmetic mean)."""
    if not (lambda_a > 0 and lambda_b > 0):
        raise ValueError("conductivities must be positive")
    if not 0 < fraction_a <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    fb = 1.0 - fraction_a
    harmonic = 1.0 / (fraction_a / lambda_a + fb / lambda_b)
    arithmetic = fraction_a * lambda_a + fb * lambda_b
    return np.diag([harmonic, arithmetic])


def voigt_reuss_bounds(values, fractions):
    """(lower, upper) = (weighted harmonic, weighted arithmetic) mean."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(fractions, dtype=float)
    return 1.0 / np.sum(w / v), float(np.sum(w * v))


@dataclass
class ConvergenceReport:
    """Errors over refinement levels and the least-squares order of log(err) vs log(level).

    ``order`` is NaN when an error is zero (nothing to fit).  ``passed`` is
    set by the study that produced the report.
    """

    name: str
    levels: np.ndarray
    errors: np.ndarray
    order: float = math.nan
    fit_residual: float = math.nan
    passed: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=float)
        self.errors = np.asarray(self.errors, dtype=float)
        if len(self.levels) < 3 or len(self.levels) != len(self.errors):
            raise ValueError("a convergence report needs at least 3 levels with one error each")
        if np.any(self.errors < 0):
            raise ValueError("errors must be non-negative")
        if np.all(self.errors > 0):
            x, y = np.log(self.levels), np.log(self.errors)
            coef, res, *_ = np.polyfit(x, y, 1, full=True)
            self.order = float(coef[0])
            self.fit_residual = float(np.sqrt(res[0] / len(x))) if len(res) else 0.0

    def as_dict(self):
        return {"name": self.name, "levels": self.levels.tolist(), "errors": self.errors.tolist(),
                "order": self.order, "fit_residual": self.fit_residual, "passed": self.passed,
                **self.extra}


# ---------------------------------------------------------------------------
# manufactured macro solution

# diagonal tensors keep the natural boundary condition n . T grad w = 0 equal
# to n . grad w = 0, which the exact fields below satisfy on the Neumann sides
MMS_LAM = np.diag([1.0, 0.5])
MMS_D = np.diag([0.3, 0.7])
MMS_C = 1.0
MMS_THETA = 0.5


def mms_exact(x, y, t):
    u = np.cos(np.pi * x) * np.cos(np.pi * y) * np.exp(-t)
    v = 1.0 + np.cos(np.pi * x) * np.cos(2 * np.pi * y) * np.exp(-2 * t)
    return u, v


def mms_source(x, y, t):
    pi2 = np.pi ** 2
    gu = np.cos(np.pi * x) * np.cos(np.pi * y) * np.exp(-t)
    gv = np.cos(np.pi * x) * np.cos(2 * np.pi * y) * np.exp(-2 * t)
    fu = (-MMS_C + pi2 * (MMS_LAM[0, 0] + MMS_LAM[1, 1])) * gu
    fv = (-2 * MMS_THETA + pi2 * MMS_D[0, 0] + 4 * pi2 * MMS_D[1, 1]) * gv
    return fu, fv


def _mms_config(n, dt, t_end, exact=mms_exact):
    return MacroConfig(
        Lx=1.0, Ly=1.0, nx=n, ny=n, dt=dt, t_end=t_end,
        u_I=lambda x, y, t: exact(x, y, 0.0)[0], v_I=lambda x, y, t: exact(x, y, 0.0)[1],
        u_D=lambda x, y, t: exact(x, y, t)[0], v_D=lambda x, y, t: exact(x, y, t)[1],
        output_times=(), c=MMS_C, theta=MMS_THETA)


def _l2(mesh, w):
    """Consistent-mass L2 norm of a P1 field."""
    tri = mesh.triangles
    a = mesh.areas
    wt = w[tri]
    return math.sqrt(float(np.sum(a / 12.0 * (np.sum(wt, 1) ** 2 + np.sum(wt ** 2, 1)))))


def _mms_run(n, dt, t_end, exact=mms_exact, source=mms_source):
    cfg = _mms_config(n, dt, t_end, exact)
    mesh = build_macro_mesh(1.0, 1.0, n, n)
    res = run(cfg, tensors=ConstantTensors(MMS_LAM, MMS_D), source=source, mesh=mesh)
    if res.error:
        raise RuntimeError(res.error)
    return mesh, res


def manufactured_macro_convergence(kind="space", levels=None, t_end=None, dt_factor=0.25,
                                   n_time=32, exact=mms_exact, source=mms_source):
    """Observed order of the macro stepper against a manufactured solution.

    ``kind="space"``: meshes n x n on the unit square for n in ``levels``,
    dt = dt_factor h^2, L2 error of u and v at ``t_end`` against the exact
    fields; expected order 2 in h.  ``kind="time"``: fixed n_time mesh,
    step sizes ``levels``, error measured as the L2 difference to the run
    with half the step (removes the spatial error); expected order 1.
    """
    if kind == "space":
        levels = np.asarray(levels if levels is not None else (8, 16, 32, 64))
        t_end = 0.05 if t_end is None else t_end
        hs, errs = [], []
        for n in levels:
            h = 1.0 / n
            steps = max(1, int(math.ceil(t_end / (dt_factor * h * h))))
            mesh, res = _mms_run(int(n), t_end / steps, t_end, exact, source)
            ue, ve = exact(mesh.nodes[:, 0], mesh.nodes[:, 1], res.state.t)
            hs.append(h)
            errs.append(math.hypot(_l2(mesh, res.state.u - ue), _l2(mesh, res.state.v - ve)))
        rep = ConvergenceReport("mms-space", hs, errs)
        rep.passed = bool(np.all(np.asarray(errs) == 0) or 1.9 <= rep.order <= 2.1)
        return rep
    if kind == "time":
        t_end = 0.4 if t_end is None else t_end
        levels = np.asarray(levels if levels is not None else (t_end / 4, t_end / 8, t_end / 16, t_end / 32))
        diffs = []
        for dt in levels:
            mesh, a = _mms_run(n_time, dt, t_end, exact, source)
            _, b = _mms_run(n_time, dt / 2, t_end, exact, source)
            diffs.append(math.hypot(_l2(mesh, a.state.u - b.state.u), _l2(mesh, a.state.v - b.state.v)))
        rep = ConvergenceReport("mms-time", levels, diffs)
        rep.passed = bool(np.all(np.asarray(diffs) == 0) or 0.9 <= rep.order <= 1.1)
        return rep
    raise ValueError(f"kind must be 'space' or 'time', got {kind!r}")


# ---------------------------------------------------------------------------
# cell studies

def cell_refinement_study(levels, geometry="circle", s=0.0, r=0.0, r_inclusion=0.4,
                          materials=None, kin=None, entry=(0, 0), tensor="lambda"):
    """Tensor entry over a sequence of cell meshes.

    ``levels`` are (n_circle, h) pairs for the circular inclusion or strip
    counts n for ``geometry="strip"``.  Errors are Cauchy differences
    between consecutive levels (the last level has none, so at least four
    levels give three differences).  Passes when the differences shrink
    monotonically; ``extra`` holds the values and a Richardson
    extrapolation with the fitted order.
    """
    materials = materials or CellMaterials()
    kin = kin or Kinetics()
    values, hs = [], []
    for lev in levels:
        if geometry == "circle":
            n_circle, h = lev
            mesh = build_cell_mesh(r_inclusion, n_circle, h)
            hs.append(h)
        elif geometry == "strip":
            mesh = build_strip_cell_mesh(int(lev))
            hs.append(1.0 / lev)
        elif geometry == "gas":
            mesh = build_strip_cell_mesh(int(lev), gas_fraction=1.0)
            hs.append(1.0 / lev)
        else:
            raise ValueError(f"unknown geometry {geometry!r}")
        t = tensors_at(CellProblem(mesh, materials, kin), s, r)
        values.append((t.lam if tensor == "lambda" else t.D)[entry])
    values = np.asarray(values)
    diffs = np.abs(np.diff(values))
    rep = ConvergenceReport(f"cell-{geometry}-{tensor}{entry[0] + 1}{entry[1] + 1}", hs[:-1], diffs)
    rep.passed = bool(np.all(np.diff(diffs) <= 0))
    extrapolated = values[-1]
    if np.isfinite(rep.order) and rep.order > 0 and len(hs) >= 2:
        ratio = (hs[-2] / hs[-1]) ** rep.order
        extrapolated = values[-1] + (values[-1] - values[-2]) / (ratio - 1.0)
    rep.extra = {"values": values.tolist(), "extrapolated": float(extrapolated)}
    return rep


@dataclass
class ScanReport:
    """Statistics of a tensor table (see :func:`tensor_scan`)."""

    min_eig_lam: float
    min_eig_D: float
    symmetry_lam: float
    symmetry_D: float
    slope_lam: float
    slope_D: float
    trends: dict
    trend_fraction: float

    def as_dict(self):
        return dict(self.__dict__)


def tensor_scan(table):
    """Eigenvalue, symmetry, slope and trend statistics of a table.

    The trend tally counts adjacent grid transitions of lam_11 and D_11
    that are non-decreasing in u and non-increasing in v.
    """
    lam, D = table.lam, table.D
    du = np.diff(table.u_grid)[:, None]
    dv = np.diff(table.v_grid)[None, :]

    def slope(T):
        su = np.abs(np.diff(T, axis=0)) / du[..., None, None]
        sv = np.abs(np.diff(T, axis=1)) / dv[..., None, None]
        return float(max(su.max(initial=0.0), sv.max(initial=0.0)))

    trends = {}
    good = total = 0
    for name, T in (("lam11", lam[..., 0, 0]), ("D11", D[..., 0, 0])):
        inc_u = np.diff(T, axis=0) >= 0
        dec_v = np.diff(T, axis=1) <= 0
        trends[f"{name}_u"] = float(inc_u.mean())
        trends[f"{name}_v"] = float(dec_v.mean())
        good += int(inc_u.sum() + dec_v.sum())
        total += inc_u.size + dec_v.size
    return ScanReport(
        float(min_eigenvalue(lam).min()), float(min_eigenvalue(D).min()),
        float(np.abs(lam[..., 0, 1] - lam[..., 1, 0]).max()),
        float(np.abs(D[..., 0, 1] - D[..., 1, 0]).max()),
        slope(lam), slope(D), trends, good / total)


def relative_tensor_error(T, ref):
    """Frobenius-norm relative deviation of a 2x2 tensor from a reference."""
    return float(np.linalg.norm(np.asarray(T) - ref) / np.linalg.norm(ref))


# ---------------------------------------------------------------------------
# suite

def run_suite(quick=False):
    """Run the oracle checks and yield one record (dict) per check."""
    mat = CellMaterials()
    kin = Kinetics(5.0, 2.5, 2.5)

    def rec(check, passed, **kw):
        return {"check": check, "passed": bool(passed), **kw}

    cm = build_cell_mesh(0.4, 64, 0.05)
    sc = effective_scalars(cm, mat)
    theta_ref = 1 - 0.16 * math.pi
    c_ref = theta_ref * mat.c_g + (1 - theta_ref) * mat.c_s
    yield rec("porosity", abs(sc.theta / theta_ref - 1) <= 5e-3, value=sc.theta, expected=theta_ref)
    yield rec("heat-capacity", abs(sc.c / c_ref - 1) <= 5e-3, value=sc.c, expected=c_ref)

    yield rec("arrhenius-cutoff", arrhenius_f(-1.0, kin) == 0.0, value=arrhenius_f(-1.0, kin))
    f25 = arrhenius_f(2.5, kin)
    yield rec("arrhenius-value", abs(f25 - 0.735759) <= 1e-6, value=f25, expected=0.735759)
    s = np.linspace(1, 10, 20)
    hstep = 1e-5 * s
    fd = (arrhenius_f(s + hstep, kin) - arrhenius_f(s - hstep, kin)) / (2 * hstep)
    rel = float(np.max(np.abs(fd - arrhenius_df(s, kin)) / np.abs(arrhenius_df(s, kin))))
    yield rec("arrhenius-derivative", rel <= 1e-6, value=rel, tol=1e-6)
    bad = linear_growth_violations(kin, np.linspace(0, 20, 2001))
    yield rec("linear-growth-bound", len(bad) == 0, failing=bad.tolist())

    oracle = laminate_oracle(mat.lambda_g, mat.lambda_s, 0.5)
    for n in (8, 16):
        t = tensors_at(CellProblem(build_strip_cell_mesh(n), mat, kin), 0.0, 0.0)
        err = float(np.max(np.abs(np.diag(t.lam) / np.diag(oracle) - 1)))
        yield rec(f"laminate-n{n}", err <= 1e-2, value=np.diag(t.lam).tolist(),
                  expected=np.diag(oracle).tolist(), rel_error=err)

    t = tensors_at(CellProblem(cm, mat, kin), 0.0, 0.0)
    lo, hi = voigt_reuss_bounds([mat.lambda_g, mat.lambda_s], [cm.gas_area, cm.solid_area])
    L = t.lam
    ev = np.linalg.eigvalsh(L)
    ok = (abs(L[0, 0] / L[1, 1] - 1) <= 1e-4 and abs(L[0, 1]) <= 1e-6 * L[0, 0]
          and lo <= ev.min() and ev.max() <= hi)
    yield rec("circle-symmetry-bounds", ok, value=L.tolist(), bounds=[lo, hi])
    yield rec("perforated-D-bound", 0 < t.D[0, 0] < mat.D * cm.gas_area, value=float(t.D[0, 0]),
              bound=mat.D * cm.gas_area)

    tg = tensors_at(CellProblem(build_strip_cell_mesh(8, 1.0), mat, kin), 1.0, 0.5)
    yield rec("full-gas-D", np.allclose(tg.D, mat.D * np.eye(2), atol=1e-12), value=tg.D.tolist())

    if not quick:
        for kind in ("space", "time"):
            rep = manufactured_macro_convergence(kind)
            yield rec(f"mms-{kind}", rep.passed, order=rep.order, errors=rep.errors.tolist())
