"""Closed-form expectation of a planar affine drift.

For dX = (aX + b)dt + (martingale part) the mean x(t) = E X_{1,t} solves

    x'' - tau x' + Delta x - rho = 0,   rho = a12 b2 - a22 b1,

with tau = tr a and Delta = det a. The characteristic roots decide the shape
of the solution: two real roots, a complex pair, or a degenerate case
(repeated root or Delta = 0) that is integrated numerically instead.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import InputError, RegimeError

D_TOL = 1e-10
DELTA_TOL = 1e-10


class RootKind(str, enum.Enum):
    REAL_DISTINCT = "real_distinct"
    COMPLEX = "complex"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class CharSolution:
    a: tuple[tuple[float, float], tuple[float, float]]
    b: tuple[float, float]
    x0: float
    y0: float
    tau: float
    delta: float
    rho: float
    D: float
    xdot0: float
    kind: RootKind
    xbar: float | None = None
    r1: float | None = None
    r2: float | None = None
    B1: float | None = None
    B2: float | None = None
    omega: float | None = None
    c1: float | None = None
    c2: float | None = None

    def __call__(self, t):
        return evaluate(self, t)

    def to_dict(self) -> dict[str, Any]:
        out = {
            "kind": self.kind.value,
            "tau": self.tau,
            "delta": self.delta,
            "rho": self.rho,
            "D": self.D,
            "xbar": self.xbar,
            "x0": self.x0,
            "xdot0": self.xdot0,
        }
        if self.kind is RootKind.REAL_DISTINCT:
            out.update(r1=self.r1, r2=self.r2, B1=self.B1, B2=self.B2)
        elif self.kind is RootKind.COMPLEX:
            out.update(omega=self.omega, c1=self.c1, c2=self.c2)
        return out


def _as_system(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (2, 2) or b.shape != (2,):
        raise InputError("expected a 2x2 drift matrix and a 2-vector intercept")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InputError("non-finite drift parameters")
    return a, b


def is_degenerate(tau: float, delta: float, D: float) -> bool:
    scale = max(1.0, tau * tau)
    return abs(D) < D_TOL * scale or abs(delta) < DELTA_TOL * scale


def solve_expectation(a, b, x0: float, y0: float) -> CharSolution:
    a, b = _as_system(a, b)
    (a11, a12), (a21, a22) = a
    b1, b2 = b
    tau = a11 + a22
    delta = a11 * a22 - a12 * a21
    rho = a12 * b2 - a22 * b1
    D = tau * tau - 4.0 * delta
    xdot0 = a11 * x0 + a12 * y0 + b1
    common = dict(
        a=((float(a11), float(a12)), (float(a21), float(a22))),
        b=(float(b1), float(b2)),
        x0=float(x0),
        y0=float(y0),
        tau=float(tau),
        delta=float(delta),
        rho=float(rho),
        D=float(D),
        xdot0=float(xdot0),
    )
    if is_degenerate(tau, delta, D):
        xbar = rho / delta if delta != 0 else None
        return CharSolution(kind=RootKind.DEGENERATE, xbar=xbar, **common)
    xbar = rho / delta
    if D > 0:
        r1, r2 = _real_roots(tau, delta, D)
        B2 = (xdot0 - r1 * (x0 - xbar)) / (r2 - r1)
        B1 = x0 - xbar - B2
        return CharSolution(kind=RootKind.REAL_DISTINCT, xbar=xbar, r1=r1, r2=r2, B1=B1, B2=B2, **common)
    omega = 0.5 * math.sqrt(-D)
    c1 = x0 - xbar
    c2 = (xdot0 - 0.5 * tau * c1) / omega
    return CharSolution(kind=RootKind.COMPLEX, xbar=xbar, omega=omega, c1=c1, c2=c2, **common)


def _real_roots(tau: float, delta: float, D: float) -> tuple[float, float]:
    """Roots of r^2 - tau r + Delta, r1 < r2, without cancellation."""
    sq = math.sqrt(D)
    big = 0.5 * (tau + math.copysign(sq, tau))
    small = delta / big
    return (small, big) if small < big else (big, small)


def _expm1_over(r: float, t: float) -> float:
    """(exp(r t) - 1) / r, continuous at r = 0."""
    if r == 0.0:
        return t
    return math.expm1(r * t) / r


def _eval_real(sol: CharSolution, t: float) -> float:
    # x(t) = x0 C(t) + x'(0) S(t) + rho (E(r2) - E(r1)) / (r2 - r1); same function
    # as B1 e^{r1 t} + B2 e^{r2 t} + xbar, but free of the xbar cancellation.
    r1, r2 = sol.r1, sol.r2
    e1, e2 = math.exp(r1 * t), math.exp(r2 * t)
    gap = r2 - r1
    S = (e2 - e1) / gap
    C = (r2 * e1 - r1 * e2) / gap
    F = (_expm1_over(r2, t) - _expm1_over(r1, t)) / gap
    return sol.x0 * C + sol.xdot0 * S + sol.rho * F


def _eval_complex(sol: CharSolution, t: float) -> float:
    wt = sol.omega * t
    return math.exp(0.5 * sol.tau * t) * (sol.c1 * math.cos(wt) + sol.c2 * math.sin(wt)) + sol.xbar


def evaluate(sol: CharSolution, t):
    """x(t) for scalar or array ``t >= 0``."""
    ts = np.asarray(t, dtype=float)
    if np.any(ts < 0) or not np.all(np.isfinite(ts)):
        raise InputError("evaluation times must be finite and non-negative")
    if sol.kind is RootKind.DEGENERATE:
        flat = np.atleast_1d(ts).ravel()
        xs, _ = integrate_system(sol.a, sol.b, (sol.x0, sol.y0), flat)
        out = xs.reshape(ts.shape)
    else:
        f = _eval_real if sol.kind is RootKind.REAL_DISTINCT else _eval_complex
        out = np.vectorize(lambda s: f(sol, float(s)), otypes=[float])(ts)
    return float(out) if out.ndim == 0 else out


def b2_asymptotic(a12: float, a21: float, b1: float, b2: float, x0: float, y0: float, a22: float) -> float:
    """Exact coefficient of the fast mode when a11 = 0.

    Returns B2 = (r1 (xbar - x0) + a12 y0 + b1) / (r2 - r1); for large a22 it
    behaves like a12 y0 / a22 + a12 (b2 + a21 x0) / a22**2.
    """
    tau = a22
    delta = -a12 * a21
    D = tau * tau - 4.0 * delta
    if D <= 0:
        raise RegimeError(f"needs real distinct roots, got D = {D:g}")
    r1, r2 = _real_roots(tau, delta, D)
    if r2 == 0.0:
        raise RegimeError("steady state undefined: the fast root vanishes")
    rho = a12 * b2 - a22 * b1
    # r1 * xbar = rho r1 / (r1 r2) = rho / r2 stays finite when Delta = 0
    return (rho / r2 - r1 * x0 + a12 * y0 + b1) / (r2 - r1)


# -- numerical integration ---------------------------------------------------


def _rk4_step(a11, a12, a21, a22, b1, b2, x, y, h):
    k1x = a11 * x + a12 * y + b1
    k1y = a21 * x + a22 * y + b2
    xm, ym = x + 0.5 * h * k1x, y + 0.5 * h * k1y
    k2x = a11 * xm + a12 * ym + b1
    k2y = a21 * xm + a22 * ym + b2
    xm, ym = x + 0.5 * h * k2x, y + 0.5 * h * k2y
    k3x = a11 * xm + a12 * ym + b1
    k3y = a21 * xm + a22 * ym + b2
    xe, ye = x + h * k3x, y + h * k3y
    k4x = a11 * xe + a12 * ye + b1
    k4y = a21 * xe + a22 * ye + b2
    return (
        x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y),
    )


def rk4_fixed(a, b, z0, t: float, steps: int) -> tuple[float, float]:
    """Classical RK4 with ``steps`` equal steps on [0, t]."""
    a, b = _as_system(a, b)
    (a11, a12), (a21, a22) = a.tolist()
    b1, b2 = b.tolist()
    x, y = float(z0[0]), float(z0[1])
    h = t / steps
    for _ in range(steps):
        x, y = _rk4_step(a11, a12, a21, a22, b1, b2, x, y, h)
    return x, y


def integrate_system(a, b, z0, times, rtol: float = 1e-10, atol: float = 1e-12):
    """Adaptive RK4 (step doubling with local extrapolation).

    Returns arrays (x(times), y(times)); ``times`` need not be sorted.
    """
    a, b = _as_system(a, b)
    (a11, a12), (a21, a22) = a.tolist()
    b1, b2 = b.tolist()
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise InputError("integration times must be non-negative")
    order = np.argsort(times, kind="stable")
    xs = np.empty(times.size)
    ys = np.empty(times.size)
    x, y = float(z0[0]), float(z0[1])
    t = 0.0
    rate = max(abs(a11) + abs(a12), abs(a21) + abs(a22), 1e-3)
    h = 0.05 / rate
    for idx in order:
        target = times[idx]
        while t < target:
            step = min(h, target - t)
            fx, fy = _rk4_step(a11, a12, a21, a22, b1, b2, x, y, step)
            hx, hy = _rk4_step(a11, a12, a21, a22, b1, b2, x, y, 0.5 * step)
            hx, hy = _rk4_step(a11, a12, a21, a22, b1, b2, hx, hy, 0.5 * step)
            err = max(abs(hx - fx), abs(hy - fy)) / 15.0
            scale = atol + rtol * max(abs(hx), abs(hy), abs(x), abs(y))
            if err <= scale:
                t += step
                x = hx + (hx - fx) / 15.0
                y = hy + (hy - fy) / 15.0
            if err == 0.0:
                h = 4.0 * step
            else:
                h = step * min(4.0, max(0.1, 0.9 * (scale / err) ** 0.2))
        xs[idx] = x
        ys[idx] = y
    return xs, ys


def mean_path(a, b, x0, times):
    """E X_t for a p-dimensional affine drift via the matrix exponential.

    Used for p != 2 and as a cross-check; the augmented matrix
    [[a, b], [0, 0]] carries the intercept.
    """
    from scipy.linalg import expm

    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    p = b.size
    aug = np.zeros((p + 1, p + 1))
    aug[:p, :p] = a
    aug[:p, p] = b
    z0 = np.append(np.asarray(x0, dtype=float), 1.0)
    return np.array([(expm(aug * t) @ z0)[:p] for t in np.atleast_1d(times)])
