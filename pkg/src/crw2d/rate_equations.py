"""Effective rate equations, their closed forms, and the asymptotic decay laws.

All ODEs here are integrated in logarithmic time ``s = log t`` with an
embedded Dormand-Prince 5(4) pair. The equations live on ranges such as
``[10^2, 10^8]`` where uniform steps in ``t`` would be wasteful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .series import EstimateSeries

RHS_KINDS = ("rho1_ere", "pnc_ere", "smoluchowski", "meanfield", "zero")

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)


def _dopri_step(f, x, y, h):
    k = []
    for i in range(7):
        yi = y
        for a, kj in zip(_A[i], k):
            yi = yi + h * a * kj
        k.append(f(x + _C[i] * h, yi))
    y5 = y + h * sum(b * kj for b, kj in zip(_B5, k))
    y4 = y + h * sum(b * kj for b, kj in zip(_B4, k))
    return y5, y5 - y4


def integrate(
    f: Callable[[float, float], float],
    x0: float,
    y0: float,
    x_eval,
    rtol: float = 1e-11,
    atol: float = 0.0,
    max_step: float = math.inf,
    fixed_step: float | None = None,
) -> np.ndarray:
    """Integrate the scalar ODE ``y' = f(x, y)`` and sample it at ``x_eval``.

    Adaptive by default (local error per step below ``atol + rtol |y|``).
    With ``fixed_step`` set, takes uniform steps of that size (shortened
    only to land on the sample points), which is what the order test uses.
    """
    x_eval = np.asarray(x_eval, dtype=float)
    if np.any(np.diff(x_eval) < 0) or (len(x_eval) and x_eval[0] < x0):
        raise ValueError("sample points must be increasing and start at or after x0")
    out = np.empty(len(x_eval))
    x, y = float(x0), float(y0)
    h = fixed_step if fixed_step else min(max_step, 1e-3 * max(1.0, abs(x_eval[-1] - x0) if len(x_eval) else 1.0))
    for m, target in enumerate(x_eval):
        while x < target:
            step = min(h, target - x)
            last = step == target - x
            if fixed_step:
                y, _ = _dopri_step(f, x, y, step)
                x = target if last else x + step
                continue
            y_new, err = _dopri_step(f, x, y, step)
            scale = atol + rtol * max(abs(y), abs(y_new))
            ratio = abs(err) / scale if scale > 0 else (0.0 if err == 0 else math.inf)
            if ratio <= 1.0:
                x = target if last else x + step
                y = y_new
                h = min(max_step, step * min(5.0, 0.9 * ratio ** -0.2 if ratio > 0 else 5.0))
            else:
                h = step * max(0.1, 0.9 * ratio ** -0.2)
                if h < 1e-14 * max(1.0, abs(x)):
                    raise RuntimeError("step size underflow")
        out[m] = y
    return out


@dataclass
class OdeSpec:
    """One ODE problem. ``rhs_kind`` picks the right-hand side:

    * ``rho1_ere``: dρ/dt = -π ρ² / log t
    * ``pnc_ere``: dp/dt = -C(N,2) p / (t log t)
    * ``smoluchowski``: dρ/dt = -(2π / log(√t / r0)) ρ²
    * ``meanfield``: dρ/dt = -π ρ² (closed-form test problem)
    * ``zero``: dρ/dt = 0 (test hook)
    """

    t0: float
    y0: float
    rhs_kind: str
    t_max: float
    N: int = 2
    r0: float = 1.0
    times: np.ndarray | None = None
    points: int = 64
    rtol: float = 1e-11
    fixed_step: float | None = None

    def __post_init__(self):
        if self.rhs_kind not in RHS_KINDS:
            raise ValueError(f"unknown rhs kind {self.rhs_kind!r}")
        if not self.t_max > self.t0:
            raise ValueError("t_max must exceed t0")
        if self.rhs_kind in ("rho1_ere", "pnc_ere") and not self.t0 > 1:
            raise ValueError("log t0 must be positive")
        if self.rhs_kind == "smoluchowski" and not math.log(math.sqrt(self.t0) / self.r0) > 0:
            raise ValueError("log(sqrt(t0)/r0) must be positive")
        if self.rhs_kind == "meanfield" and not self.t0 > 0:
            raise ValueError("t0 must be positive")

    def grid(self) -> np.ndarray:
        if self.times is not None:
            return np.asarray(self.times, dtype=float)
        return np.geomspace(self.t0, self.t_max, self.points)

    def rhs(self) -> Callable[[float, float], float]:
        kind = self.rhs_kind
        if kind == "rho1_ere":
            return lambda t, y: -math.pi * y * y / math.log(t)
        if kind == "pnc_ere":
            pairs = math.comb(self.N, 2)
            return lambda t, y: -pairs * y / (t * math.log(t))
        if kind == "smoluchowski":
            r0 = self.r0
            return lambda t, y: -(2.0 * math.pi / math.log(math.sqrt(t) / r0)) * y * y
        if kind == "meanfield":
            return lambda t, y: -math.pi * y * y
        return lambda t, y: 0.0


def solve_ode(spec: OdeSpec) -> EstimateSeries:
    """Integrate ``spec`` in log time and return the solution on its grid."""
    f = spec.rhs()
    g = lambda s, y: math.exp(s) * f(math.exp(s), y)  # noqa: E731
    ts = spec.grid()
    if ts[0] < spec.t0:
        raise ValueError("grid starts before t0")
    ys = integrate(g, math.log(spec.t0), spec.y0, np.log(ts), rtol=spec.rtol, fixed_step=spec.fixed_step)
    return EstimateSeries.exact(ts, ys, kind=spec.rhs_kind)


def rho1_ere_solve(spec: OdeSpec) -> EstimateSeries:
    """Density effective rate equation dρ/dt = -π ρ² / log t."""
    if spec.rhs_kind not in ("rho1_ere", "meanfield", "zero"):
        raise ValueError("rho1_ere_solve needs rhs_kind rho1_ere (or a test hook)")
    if not spec.y0 > 0:
        raise ValueError("initial density must be positive")
    return solve_ode(spec)


def smoluchowski_solve(spec: OdeSpec) -> EstimateSeries:
    if spec.rhs_kind not in ("smoluchowski", "zero"):
        raise ValueError("smoluchowski_solve needs rhs_kind smoluchowski (or the zero hook)")
    return solve_ode(spec)


def pnc_closed_form(N: int, t0: float, p0: float, t) -> np.ndarray:
    """Exact solution ``p0 (log t0 / log t)^C(N,2)`` of the non-collision ERE."""
    return p0 * (math.log(t0) / np.log(np.asarray(t, dtype=float))) ** math.comb(N, 2)


def rho1_asymptotic(t: float) -> float:
    """``log t / (π t)``."""
    if not t > 1:
        raise ValueError("needs t > 1")
    return math.log(t) / (math.pi * t)


@dataclass(frozen=True)
class AsymptoticParams:
    N: int
    c0: float = 1.0
    mode: str = "coalesce"

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not self.c0 > 0:
            raise ValueError("c0 must be positive")
        if self.mode not in ("coalesce", "annihilate"):
            raise ValueError(f"unknown mode {self.mode!r}")


def rhoN_asymptotic(params: AsymptoticParams, t: float) -> float:
    """Leading-order N-point correlation ``c0 (log t)^(N - C(N,2)) t^-N / π^N``.

    Annihilating systems from a half-filled start carry ``(2π)^N`` instead.
    """
    if not t > 1:
        raise ValueError("needs t > 1")
    N = params.N
    base = 2.0 * math.pi if params.mode == "annihilate" else math.pi
    return params.c0 * math.log(t) ** (N - math.comb(N, 2)) * t ** (-N) / base**N


def smoluchowski_constant(series: EstimateSeries) -> np.ndarray:
    """Ratio ``ρ(t) π t / log t`` along a solved series."""
    t = series.times
    return series.mean * math.pi * t / np.log(t)
