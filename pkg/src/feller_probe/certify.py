"""Negativity certificates.

A certificate is a tilt of the drift, reachable by an equivalent change of
measure, under which the expected first volatility factor is negative at a
target time t0. The tilted mean is evaluated in closed form and re-checked
with an independent adaptive RK4 integration.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ClassError, HypothesisError, InputError, NumericalError, SearchFailure
from .feller import check_c22_violation_profile
from .model import SdeModel, is_canonical, is_proportional
from .odeexp import RootKind, evaluate, integrate_system, solve_expectation

MAX_DOUBLINGS = 60
MAX_K = 10**6
ORACLE_RTOL = 1e-7
# slack demanded of the proof's closed-form value before accepting a k, so the
# sign survives floating-point evaluation
SIGN_MARGIN = 1e-6


class Route(str, enum.Enum):
    INDEPENDENT_VOLS = "independent_vols"
    PROPORTIONAL_VOLS = "proportional_vols"


@dataclass(frozen=True)
class Certificate:
    route: Route
    t0: float
    tilted_params: dict[str, float]
    lam: tuple[float, float]
    expected_value: float
    oracle_value: float
    case: int | None = None
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "route": self.route.value,
            "case": self.case,
            "t0": self.t0,
            "tilted_params": dict(self.tilted_params),
            "lambda": list(self.lam),
            "expected_value": self.expected_value,
            "oracle_value": self.oracle_value,
            "details": dict(self.details),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Certificate":
        return cls(
            route=Route(d["route"]),
            t0=float(d["t0"]),
            tilted_params={k: float(v) for k, v in d["tilted_params"].items()},
            lam=tuple(float(v) for v in d["lambda"]),
            expected_value=float(d["expected_value"]),
            oracle_value=float(d["oracle_value"]),
            case=d.get("case"),
            details=dict(d.get("details", {})),
        )


def _oracle(a: np.ndarray, b: np.ndarray, x0: float, y0: float, t0: float) -> float:
    xs, _ = integrate_system(a, b, (x0, y0), [t0], rtol=1e-12, atol=1e-14)
    return float(xs[0])


def _verified(a: np.ndarray, b: np.ndarray, x0: float, y0: float, t0: float) -> tuple[float, float]:
    value = evaluate(solve_expectation(a, b, x0, y0), t0)
    oracle = _oracle(a, b, x0, y0, t0)
    if abs(value - oracle) >= ORACLE_RTOL * max(1.0, abs(value)):
        raise NumericalError(f"closed form {value!r} and RK4 {oracle!r} disagree at t0 = {t0}")
    return value, oracle


def _check_t0(t0: float) -> float:
    t0 = float(t0)
    if not (t0 > 0 and math.isfinite(t0)):
        raise InputError("t0 must be a positive finite time")
    return t0


def certify_c22(model: SdeModel, t0: float) -> Certificate:
    """Tilt (a11, a22) -> (0, A) with A doubled until E V_{t0} < 0.

    Needs a12 < 0, a21 > 0, b2 > 0 and a non-negative start.
    """
    t0 = _check_t0(t0)
    profile = check_c22_violation_profile(model)
    if not profile.overall:
        failed = ", ".join(c.name for c in profile.failures)
        raise HypothesisError(f"hypotheses fail: {failed}")
    x0, y0 = model.x0
    if x0 < 0 or y0 < 0:
        raise HypothesisError("initial state must be non-negative")
    a, b = model.a, model.b
    a12, a21, a22 = a[0, 1], a[1, 0], a[1, 1]
    b2 = b[1]

    A = max(1.0, abs(a22), 2.0 * abs(a12) * (abs(y0) + abs(b2) + abs(a21 * x0)))
    tilted = a.copy()
    tilted[0, 0] = 0.0
    for _ in range(MAX_DOUBLINGS + 1):
        tilted[1, 1] = A
        sol = solve_expectation(tilted, b, x0, y0)
        if sol.kind is RootKind.REAL_DISTINCT and A * t0 < 700:
            value = evaluate(sol, t0)
            if value < 0:
                value, oracle = _verified(tilted, b, x0, y0, t0)
                if value < 0 and oracle < 0:
                    return Certificate(
                        route=Route.INDEPENDENT_VOLS,
                        t0=t0,
                        tilted_params={"a11": 0.0, "a22": float(A)},
                        lam=(float(-a[0, 0]), float(A - a22)),
                        expected_value=value,
                        oracle_value=oracle,
                        details={"B2": float(sol.B2), "r2": float(sol.r2)},
                    )
        A *= 2.0
    raise SearchFailure(f"no a22 up to {A / 2:g} makes E V_t0 negative")


def _excluded(x0: float, xdot0: float, ydot0: float) -> bool:
    return x0 == 0.0 and xdot0 == 0.0 and ydot0 == 0.0


def certify_c2(model: SdeModel, t0: float) -> Certificate:
    """Tilt (a11, a21) so that E V_{t0} < 0 for a model in C(2).

    Case 1 (x0 > 0) puts t0 at an odd half-period of the oscillation, case 2
    (x0 = 0, rho != 0) at a full period with sgn(tr a) = sgn(rho), case 3
    (x0 = rho = 0) at a quarter period chosen by the sign of x'(0). The
    argument does not depend on b1, so models with b1 != 0 are accepted
    as they are. a12 < 0 is handled by reflecting the second coordinate.
    """
    t0 = _check_t0(t0)
    if model.p != 2 or not (is_canonical(model) and is_proportional(model)):
        raise ClassError("certify_c2 needs a model in C(2)")
    a12_orig = float(model.a[0, 1])
    if a12_orig == 0.0:
        raise HypothesisError("a_12 = 0: one-dimensional case, no tilt certificate")
    # reflect y -> -y so that a12 > 0; x(t) is unchanged
    s = 1.0 if a12_orig > 0 else -1.0
    a11, a22 = float(model.a[0, 0]), float(model.a[1, 1])
    a12, a21 = s * a12_orig, s * float(model.a[1, 0])
    b1, b2 = float(model.b[0]), s * float(model.b[1])
    x0, y0 = float(model.x0[0]), s * float(model.x0[1])

    xdot0 = a11 * x0 + a12 * y0 + b1
    ydot0 = a21 * x0 + a22 * y0 + b2
    if x0 < 0:
        raise HypothesisError("x0 must be non-negative")
    if _excluded(x0, xdot0, ydot0):
        raise HypothesisError("(x0, x'(0), y'(0)) = (0, 0, 0) is excluded")

    rho = a12 * b2 - a22 * b1
    new_a11 = a11
    details: dict[str, Any] = {}
    if x0 > 0:
        case = 1
        tau = a11 + a22
        g = math.exp(0.5 * tau * t0)
        threshold = x0 * g / (g + 1.0)
        for k in range(MAX_K + 1):
            omega = (math.pi + 2.0 * math.pi * k) / t0
            delta = 0.25 * tau * tau + omega * omega
            xbar = rho / delta
            predicted = -g * (x0 - xbar) + xbar
            if xbar < threshold and predicted < -SIGN_MARGIN * max(1.0, x0 * g):
                break
        else:
            raise SearchFailure(f"no k <= {MAX_K} meets the case-1 constraints")
        details.update(threshold=threshold, xbar=xbar, predicted=predicted)
    elif rho != 0.0:
        case = 2
        tau = a11 + a22
        if tau == 0.0 or math.copysign(1.0, tau) != math.copysign(1.0, rho):
            new_a11 = math.copysign(1.0, rho) - a22
            tau = math.copysign(1.0, rho)
        k = 1
        omega = 2.0 * math.pi * k / t0
        delta = 0.25 * tau * tau + omega * omega
        xbar = rho / delta
        details.update(xbar=xbar, predicted=(1.0 - math.exp(0.5 * tau * t0)) * xbar)
    else:
        case = 3
        tau = a11 + a22
        k = 0 if xdot0 < 0 else 1
        omega = (0.5 * math.pi + math.pi * k) / t0
        delta = 0.25 * tau * tau + omega * omega
        details.update(predicted=math.exp(0.5 * tau * t0) * xdot0 / omega * (-1.0) ** k)

    new_a21 = (new_a11 * a22 - delta) / a12
    details.update(k=k, omega=omega, delta=delta)

    tilted = np.array([[new_a11, a12], [new_a21, a22]])
    value, oracle = _verified(tilted, np.array([b1, b2]), x0, y0, t0)
    if not (value < 0 and oracle < 0):
        raise NumericalError(f"case {case}: tilted mean {value!r} is not negative")
    a21_tilted = s * new_a21
    return Certificate(
        route=Route.PROPORTIONAL_VOLS,
        t0=t0,
        tilted_params={"a11": float(new_a11), "a21": float(a21_tilted)},
        lam=(float(new_a11 - model.a[0, 0]), float(a21_tilted - model.a[1, 0])),
        expected_value=value,
        oracle_value=oracle,
        case=case,
        details=details,
    )


def to_tilted_model(model: SdeModel, cert: Certificate) -> SdeModel:
    """The drift after the measure change: a + Sigma diag(lambda) beta.

    For C_2(2) this moves (a11, a22), for C(2) it moves (a11, a21); the
    result is checked against the certificate's tilted entries.
    """
    if model.p != 2 or not is_canonical(model):
        raise InputError("tilting needs a canonical planar model")
    prop = is_proportional(model)
    if prop != (cert.route is Route.PROPORTIONAL_VOLS):
        raise InputError("certificate route does not match the model's volatility structure")
    lam = np.asarray(cert.lam, dtype=float)
    new_a = model.a + model.sigma @ np.diag(lam) @ model.beta
    new_b = model.b + model.sigma @ (lam * model.alpha)
    keys = {"a11": (0, 0), "a22": (1, 1), "a21": (1, 0)}
    for name, val in cert.tilted_params.items():
        if abs(new_a[keys[name]] - val) > 1e-12 * max(1.0, abs(val)):
            raise InputError("certificate was produced for a different model")
    return model.replace(a=new_a, b=new_b)
