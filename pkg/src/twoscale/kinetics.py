"""Arrhenius surface kinetics and the linearised interface reaction term."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Kinetics:
    """Pre-exponential factor ``A``, activation temperature ``u_a`` and heat release ``Q``."""

    A: float = 5.0
    u_a: float = 2.5
    Q: float = 2.5

    def __post_init__(self):
        if not self.A >= 0:
            raise ValueError(f"A must be >= 0, got {self.A}")
        if not self.u_a > 0:
            raise ValueError(f"u_a must be > 0, got {self.u_a}")
        if not self.Q >= 0:
            raise ValueError(f"Q must be >= 0, got {self.Q}")


def arrhenius_f(s, kin):
    """Rate  A u_a / s^2 exp(-u_a / s)  for s > 0, extended by 0 for s <= 0.

    Accepts scalars or arrays; the exponential underflows to 0 for tiny s.
    """
    s = np.asarray(s, dtype=float)
    pos = s > 0
    safe = np.where(pos, s, 1.0)
    # exp(2 log x - x) underflows cleanly for tiny s; beyond x = 1e4 it is 0 anyway
    with np.errstate(under="ignore", over="ignore", divide="ignore"):
        x = np.minimum(kin.u_a / safe, 1e4)
        val = kin.A / kin.u_a * np.exp(2 * np.log(x) - x)
    out = np.where(pos, val, 0.0)
    return float(out) if out.ndim == 0 else out


def arrhenius_df(s, kin):
    """Derivative of :func:`arrhenius_f`; zero for s <= 0."""
    s = np.asarray(s, dtype=float)
    pos = s > 0
    safe = np.where(pos, s, 1.0)
    with np.errstate(under="ignore", over="ignore", divide="ignore"):
        x = np.minimum(kin.u_a / safe, 1e4)
        val = kin.A / kin.u_a**2 * (np.exp(4 * np.log(x) - x) - 2 * np.exp(3 * np.log(x) - x))
    out = np.where(pos, val, 0.0)
    return float(out) if out.ndim == 0 else out


def reaction_H(s, r, phi, psi, u_a):
    """Linearised interface reaction  r phi + s^2 / u_a psi."""
    return r * phi + s * s / u_a * psi


def linear_growth_violations(kin, samples):
    """Sample points s >= 0 where f(s) <= A s fails.

    The bound depends on u_a: f(s)/s peaks at s = u_a/3 with value
    27 A exp(-3) / u_a^2, so it holds everywhere iff u_a^2 >= 27 exp(-3).
    """
    s = np.asarray(samples, dtype=float)
    s = s[s >= 0]
    f = arrhenius_f(s, kin)
    return s[f > kin.A * s * (1.0 + 1e-15)]
