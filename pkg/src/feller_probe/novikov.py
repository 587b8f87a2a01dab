"""Explicit constants behind the local Novikov arguments.

Two settings are covered. For C(2) with a12 > 0, a11 < 0, a22 < 0 and
det a > 0, the exponential moments of the stopped volatility are finite on
windows of length eps(t), which gives a partition 0 = t_0 < t_1 < ...
growing without bound. For A_m(p), the moment bound needs positive weights
c_i with  sum_j c_j a_ji <= -m c_i^2 / 2  (i <= m); when the drift block
does not admit them, a diagonal shift mu does.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.optimize import linprog

from .errors import ClassError, HypothesisError, InputError, SearchFailure
from .model import SdeModel, is_canonical, is_proportional

IDENTITY_TOL = 1e-10
MAX_PARTITION_STEPS = 10**7


@dataclass(frozen=True)
class NovikovConstants:
    c1: float
    c2: float
    c: float
    v0: float
    y0: float
    b2: float

    def k(self, t: float) -> float:
        """Exponent bound k(t) = c1 v0 + c2 y0 + c2 b2 t 1{b2 > 0}."""
        drift = self.c2 * self.b2 * t if self.b2 > 0 else 0.0
        return self.c1 * self.v0 + self.c2 * self.y0 + drift

    def to_dict(self) -> dict[str, Any]:
        return {"c1": self.c1, "c2": self.c2, "c": self.c, "k0": self.k(0.0)}


@dataclass(frozen=True)
class Partition:
    times: tuple[float, ...]
    horizon: float

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    def to_dict(self) -> dict[str, Any]:
        return {"horizon": self.horizon, "steps": self.steps, "times": list(self.times)}


def _c2_hypotheses(a: np.ndarray) -> float:
    det = float(np.linalg.det(a))
    if not a[1, 1] < 0:
        raise HypothesisError(f"need a_22 < 0, got {a[1, 1]:g}")
    if not det > 0:
        raise HypothesisError(f"need det a > 0, got {det:g}")
    if not a[0, 1] > 0:
        raise HypothesisError(f"need a_12 > 0, got {a[0, 1]:g}")
    return det


def _planar_drift(model_or_a) -> tuple[np.ndarray, SdeModel | None]:
    if isinstance(model_or_a, SdeModel):
        if model_or_a.p != 2:
            raise ClassError("expected a planar model")
        return model_or_a.a, model_or_a
    a = np.asarray(model_or_a, dtype=float)
    if a.shape != (2, 2):
        raise InputError("expected a 2x2 drift matrix")
    return a, None


def constants(model: SdeModel, c: float) -> NovikovConstants:
    """c1 = -2 a22 det a / (a12^2 + a22^2),  c2 = 2 a12 det a / (a12^2 + a22^2).

    They satisfy c1 a12 + c2 a22 = 0 and c1 a11 + c2 a21 = -(c1^2 + c2^2)/2,
    which is what lets the exponential of c1 V + c2 Y be bounded by a
    supermartingale; both identities are re-checked here.
    """
    if model.p != 2 or not (is_canonical(model) and is_proportional(model)):
        raise ClassError("Novikov constants are defined for models in C(2)")
    if not c > 0:
        raise InputError("c must be positive")
    a = model.a
    det = _c2_hypotheses(a)
    (a11, a12), (a21, a22) = a
    s = a12 * a12 + a22 * a22
    c1 = -2.0 * a22 * det / s
    c2 = 2.0 * a12 * det / s
    scale = max(1.0, c1 * c1 + c2 * c2, abs(c1 * a12), abs(c2 * a22))
    if abs(c1 * a12 + c2 * a22) > IDENTITY_TOL * scale or abs(
        c1 * a11 + c2 * a21 + 0.5 * (c1 * c1 + c2 * c2)
    ) > IDENTITY_TOL * scale:
        raise HypothesisError("constant identities fail; drift matrix is inconsistent")
    return NovikovConstants(
        c1=float(c1), c2=float(c2), c=float(c),
        v0=float(model.x0[0]), y0=float(model.x0[1]), b2=float(model.b[1]),
    )


def epsilon(model: SdeModel, c: float, t: float) -> float:
    """Window length min(-a11/c, (sqrt(t^2 + 2 c2/(c a12)) - t)/2).

    The second term is the positive root of e^2 + t e - c2/(2 c a12) = 0.
    """
    if not model.a[0, 0] < 0:
        raise HypothesisError(f"need a_11 < 0, got {model.a[0, 0]:g}")
    if t < 0:
        raise InputError("t must be non-negative")
    k = constants(model, c)
    return _epsilon(float(model.a[0, 0]), float(model.a[0, 1]), k.c2, float(c), float(t))


def _epsilon(a11: float, a12: float, c2: float, c: float, t: float) -> float:
    q = 2.0 * c2 / (c * a12)
    # (sqrt(t^2+q) - t)/2 rewritten to avoid cancellation for large t
    root = 0.5 * q / (t + math.sqrt(t * t + q))
    return min(-a11 / c, root)


def partition(model: SdeModel, c: float, T: float) -> Partition:
    """t_0 = 0, t_{i+1} = t_i + eps(t_i) until the horizon T is covered."""
    if not T > 0:
        raise InputError("horizon must be positive")
    eps0 = epsilon(model, c, 0.0)  # validates hypotheses once
    a11, a12 = float(model.a[0, 0]), float(model.a[0, 1])
    c2 = constants(model, c).c2
    times = [0.0]
    t = 0.0
    step = eps0
    while t < T:
        if len(times) > MAX_PARTITION_STEPS:
            raise SearchFailure(f"partition did not reach T = {T} within {MAX_PARTITION_STEPS} steps")
        t = t + step
        times.append(t)
        step = _epsilon(a11, a12, c2, float(c), t)
    return Partition(times=tuple(times), horizon=float(T))


# -- A_m(p) ------------------------------------------------------------------


def _addreq_violation(a: np.ndarray, c: np.ndarray) -> np.ndarray:
    m = c.size
    return a.T @ c + 0.5 * m * c * c


def check_addreq(a, m: int | None = None) -> tuple[bool, np.ndarray | None]:
    """Look for c > 0 with  sum_j c_j a_ji <= -m c_i^2 / 2  for every i.

    Quadratic terms vanish faster than linear ones as c shrinks, so a witness
    exists iff some c > 0 has a^T c < 0 componentwise. That is a linear
    feasibility problem (c >= 1, a^T c <= -1 after scaling); its solution is
    then shrunk onto the quadratic constraints and re-verified directly.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if m is None:
        m = a.shape[0]
    if m < 1 or a.shape[0] < m or a.shape[1] < m:
        raise InputError("m must be between 1 and the matrix size")
    block = a[:m, :m]
    res = linprog(
        c=np.ones(m),
        A_ub=block.T,
        b_ub=-np.ones(m),
        bounds=[(1.0, None)] * m,
        method="highs",
    )
    if res.status != 0:
        return False, None
    direction = np.asarray(res.x, dtype=float)
    lin = block.T @ direction
    if np.any(lin >= 0):
        return False, None
    # largest admissible scale is min_i -2 lin_i / (m c_i^2); take half of it
    s = 0.5 * float(np.min(-2.0 * lin / (m * direction * direction)))
    witness = s * direction
    if np.any(witness <= 0) or np.any(_addreq_violation(block, witness) > 0):
        return False, None
    return True, witness


def addreq_holds(a, c) -> bool:
    c = np.asarray(c, dtype=float)
    a = np.asarray(a, dtype=float)[: c.size, : c.size]
    return bool(np.all(c > 0) and np.all(_addreq_violation(a, c) <= 0))


def classify_2x2_cases(a) -> set[str]:
    """Sign patterns of a 2x2 drift block known to admit the weights c."""
    a = np.asarray(a, dtype=float)
    if a.shape != (2, 2):
        raise InputError("expected a 2x2 matrix")
    (a11, a12), (a21, a22) = a
    det = a11 * a22 - a12 * a21
    cases = set()
    if a12 >= 0 and a21 >= 0 and a11 < 0 and a22 < 0 and det > 0:
        cases.add("i")
    if a12 < 0 and a21 < 0 and a11 >= 0 and a22 >= 0 and det < 0:
        cases.add("ii")
    if a11 < 0 and a12 < 0:
        cases.add("iii")
    if a22 < 0 and a21 < 0:
        cases.add("iv")
    return cases


def find_diag_shift(model: SdeModel) -> np.ndarray:
    """Diagonal shift mu making the shifted block satisfy the weight condition with c = 1.

    mu_i = -m/2 - a_ii - sum_{j != i, j <= m} a_ji  for i <= m, and 0 beyond.
    """
    if not is_canonical(model):
        raise ClassError("find_diag_shift needs a canonical model")
    m, a = model.m, model.a
    mu = np.zeros(model.p)
    col_sums = a[:m, :m].sum(axis=0)
    mu[:m] = -0.5 * m - col_sums
    return mu


def shifted_drift(model: SdeModel, mu) -> np.ndarray:
    a = model.a.copy()
    a[np.diag_indices(model.p)] += np.asarray(mu, dtype=float)
    return a
