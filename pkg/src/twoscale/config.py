"""Plain-text run configuration: ``key = value`` lines under ``[section]`` headers.

Sections and keys::

    [domain]     Lx Ly nx ny
    [time]       dt t_end output_times stop_rel
    [initial]    u_I v_I
    [boundary]   u_D v_D
    [kinetics]   A u_a Q
    [materials]  lambda_g lambda_s D c_g c_s
    [cell]       r n_circle h_cell
    [tensors]    source u_grid v_grid
    [solver]     method

``Q`` may hold a comma-separated list, which turns the file into a sweep.
Initial and boundary values may be numbers or expressions in x, y and t
using numpy functions (``sin``, ``exp``, ...).  Comments start with ``#``.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field

import numpy as np

from .cell import CellMaterials
from .errors import ConfigError
from .kinetics import Kinetics
from .macro import MacroConfig


class Expression:
    """A field given by an arithmetic expression in x, y, t, callable on arrays."""

    FUNCTIONS = {name: getattr(np, name) for name in
                 ("sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "abs", "minimum", "maximum", "where")}
    CONSTANTS = {"pi": math.pi, "e": math.e}
    VARIABLES = ("x", "y", "t")
    _NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
              ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Compare,
              ast.Lt, ast.LtE, ast.Gt, ast.GtE)

    def __init__(self, text):
        self.text = text.strip()
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise ValueError(f"invalid expression {text!r}") from exc
        for node in ast.walk(tree):
            if not isinstance(node, self._NODES):
                raise ValueError(f"unsupported syntax in expression {text!r}")
            if isinstance(node, ast.Name) and node.id not in (
                    *self.FUNCTIONS, *self.CONSTANTS, *self.VARIABLES):
                raise ValueError(f"unknown name {node.id!r} in expression {text!r}")
            if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name)
                                                   and node.func.id in self.FUNCTIONS):
                raise ValueError(f"unsupported call in expression {text!r}")
        self._code = compile(tree, "<expression>", "eval")

    def __call__(self, x, y, t):
        x = np.asarray(x, dtype=float)
        env = {"__builtins__": {}, **self.FUNCTIONS, **self.CONSTANTS, "x": x, "y": np.asarray(y), "t": t}
        return np.broadcast_to(np.asarray(eval(self._code, env), dtype=float), x.shape).copy()

    def __repr__(self):
        return f"Expression({self.text!r})"

    def __eq__(self, other):
        return isinstance(other, Expression) and other.text == self.text

    def __hash__(self):
        return hash(self.text)


def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {text!r}")
    return v


def _int(text):
    return int(text)


def _field(text):
    try:
        return _float(text)
    except ValueError:
        return Expression(text)


def _floats(text):
    return tuple(_float(p) for p in text.split(",") if p.strip())


def _grid(text):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError("grid needs 'start, stop, count'")
    return (_float(parts[0]), _float(parts[1]), _int(parts[2]))


# (section, key) -> (parser, default, where the default comes from)
SCHEMA = {
    ("domain", "Lx"): (_float, 5.0, "reference domain (0,5)x(0,2.5)"),
    ("domain", "Ly"): (_float, 2.5, "reference domain (0,5)x(0,2.5)"),
    ("domain", "nx"): (_int, 100, "default resolution"),
    ("domain", "ny"): (_int, 50, "default resolution"),
    ("time", "dt"): (_float, 0.01, "default step"),
    ("time", "t_end"): (_float, 3.2, "last reference snapshot time"),
    ("time", "output_times"): (_floats, (0.0, 0.8, 1.6, 2.4, 3.2), "reference snapshot times"),
    ("time", "stop_rel"): (_float, 0.0, "off"),
    ("initial", "u_I"): (_field, 1.7, "reference initial temperature"),
    ("initial", "v_I"): (_field, 0.1, "reference initial concentration"),
    ("boundary", "u_D"): (_field, 5.0, "reference inlet temperature"),
    ("boundary", "v_D"): (_field, 0.05, "reference inlet concentration"),
    ("kinetics", "A"): (_float, 5.0, "reference kinetics"),
    ("kinetics", "u_a"): (_float, 2.5, "reference kinetics"),
    ("kinetics", "Q"): (_floats, (2.5,), "reference kinetics"),
    ("materials", "lambda_g"): (_float, 2.38e-4, "material table"),
    ("materials", "lambda_s"): (_float, 7e-4, "material table"),
    ("materials", "D"): (_float, 0.25, "material table"),
    ("materials", "c_g"): (_float, 1.57e-3, "material table"),
    ("materials", "c_s"): (_float, 0.69, "material table"),
    ("cell", "r"): (_float, 0.4, "reference inclusion"),
    ("cell", "n_circle"): (_int, 64, "default resolution"),
    ("cell", "h_cell"): (_float, 0.05, "default resolution"),
    ("tensors", "source"): (str, "table", "default"),
    ("tensors", "u_grid"): (_grid, (0.0, 5.5, 33), "operating range with margin"),
    ("tensors", "v_grid"): (_grid, (0.0, 1.2, 33), "operating range with margin"),
    ("solver", "method"): (str, "cg", "default (warm-started CG on the SPD step systems)"),
}


@dataclass
class Config:
    """Parsed configuration: one value per schema key plus where it came from.

    ``provenance[(section, key)]`` is ``"explicit (line N)"`` or
    ``"default: ..."``.
    """

    values: dict
    provenance: dict = field(default_factory=dict)

    def __getitem__(self, key):
        if isinstance(key, str):
            matches = [k for k in self.values if k[1] == key]
            if len(matches) != 1:
                raise KeyError(key)
            key = matches[0]
        return self.values[key]

    @property
    def Q_values(self):
        return self.values[("kinetics", "Q")]

    def macro_configs(self):
        """One MacroConfig per heat-release value."""
        return [self.macro_config(Q) for Q in self.Q_values]

    def macro_config(self, Q=None):
        g = self.values.get
        Q = self.Q_values[0] if Q is None else Q
        return MacroConfig(
            Lx=g(("domain", "Lx")), Ly=g(("domain", "Ly")), nx=g(("domain", "nx")), ny=g(("domain", "ny")),
            dt=g(("time", "dt")), t_end=g(("time", "t_end")), output_times=g(("time", "output_times")),
            stop_rel=g(("time", "stop_rel")),
            u_I=g(("initial", "u_I")), v_I=g(("initial", "v_I")),
            u_D=g(("boundary", "u_D")), v_D=g(("boundary", "v_D")),
            kinetics=Kinetics(g(("kinetics", "A")), g(("kinetics", "u_a")), Q),
            materials=self.materials(),
            r=g(("cell", "r")), n_circle=g(("cell", "n_circle")), h_cell=g(("cell", "h_cell")),
            tensor_source=g(("tensors", "source")), u_grid=g(("tensors", "u_grid")),
            v_grid=g(("tensors", "v_grid")), solver=g(("solver", "method")))

    def materials(self):
        g = self.values.get
        return CellMaterials(g(("materials", "lambda_g")), g(("materials", "lambda_s")),
                             g(("materials", "D")), g(("materials", "c_g")), g(("materials", "c_s")))

    def kinetics(self, Q=None):
        g = self.values.get
        return Kinetics(g(("kinetics", "A")), g(("kinetics", "u_a")), self.Q_values[0] if Q is None else Q)

    def dumps(self):
        """Text that parses back to an equal Config (explicit values only differ in provenance)."""
        lines = []
        section = None
        for (sec, key), value in self.values.items():
            if sec != section:
                lines.append(f"[{sec}]")
                section = sec
            lines.append(f"{key} = {_format(value)}")
        return "\n".join(lines) + "\n"


def _format(value):
    if isinstance(value, Expression):
        return value.text
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def defaults():
    return Config({k: v[1] for k, v in SCHEMA.items()},
                  {k: f"default: {v[2]}" for k, v in SCHEMA.items()})


def parse_config(text):
    """Parse configuration text; raises ConfigError with the offending line number."""
    cfg = defaults()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip()
            if not any(sec == section for sec, _ in SCHEMA):
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if section is None:
            owners = [sec for sec, k in SCHEMA if k == key]
            if len(owners) != 1:
                raise ConfigError(f"unknown key {key!r} outside any section", lineno)
            sec = owners[0]
        else:
            sec = section
        if (sec, key) not in SCHEMA:
            raise ConfigError(f"unknown key {key!r} in section [{sec}]", lineno)
        parser = SCHEMA[(sec, key)][0]
        try:
            parsed = parser(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}", lineno) from exc
        cfg.values[(sec, key)] = parsed
        cfg.provenance[(sec, key)] = f"explicit (line {lineno})"
        try:
            _check_one(sec, key, parsed)
        except ValueError as exc:
            raise ConfigError(str(exc), lineno) from exc
    try:
        _check_all(cfg)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _check_one(section, key, value):
    if key == "r" and not 0 < value < 0.5:
        raise ValueError(f"r = {value}: inclusion must fit inside the unit cell (0 < r < 0.5)")
    if key == "n_circle" and (value < 8 or value % 8):
        raise ValueError(f"n_circle = {value}: must be a positive multiple of 8")
    if key in ("dt", "h_cell", "Lx", "Ly") and not value > 0:
        raise ValueError(f"{key} must be positive")
    if key in ("nx", "ny") and value < 1:
        raise ValueError(f"{key} must be at least 1")
    if key == "Q" and (not value or any(q < 0 for q in value)):
        raise ValueError("Q needs one or more non-negative values")
    if key == "source" and value not in ("table", "direct"):
        raise ValueError("tensor source must be 'table' or 'direct'")
    if key == "method" and value not in ("direct", "cg"):
        raise ValueError("solver method must be 'direct' or 'cg'")
    if key in ("u_grid", "v_grid") and not (value[1] > value[0] and value[2] >= 2):
        raise ValueError(f"{key} needs start < stop and at least 2 points")


def _check_all(cfg):
    # building the derived objects runs their own validation
    cfg.materials()
    for mc in cfg.macro_configs():
        if mc.t_end < mc.dt and mc.t_end != 0:
            raise ValueError("t_end must be 0 or at least dt")
