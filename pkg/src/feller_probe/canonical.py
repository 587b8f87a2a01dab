"""Affine reduction of proportional-volatility models to canonical form."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ClassError, DegenerateVolatilityError, HypothesisError, InputError
from .model import SdeModel, is_canonical, is_proportional

UNIT_TOL = 1e-12
RESIDUAL_THRESHOLD = 0.5


def _sign_normalize(row: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(row) > 1e-12)
    if nz.size and row[nz[0]] < 0:
        return -row
    return row


def complete_orthonormal(u) -> np.ndarray:
    """Rows completing the unit vector ``u`` to an orthonormal basis.

    Gram-Schmidt over the standard basis in index order. Candidates whose
    residual norm falls below 0.5 are skipped; if that leaves the basis short,
    the largest remaining residuals are taken. Each row is signed so its first
    nonzero entry is positive.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or abs(np.linalg.norm(u) - 1.0) > UNIT_TOL:
        raise InputError("complete_orthonormal expects a unit vector")
    p = u.size
    basis = [u]
    rows: list[np.ndarray] = []

    def residual(e: np.ndarray) -> np.ndarray:
        r = e.copy()
        for _ in range(2):  # re-orthogonalize once for stability
            for q in basis:
                r -= (q @ r) * q
        return r

    eye = np.eye(p)
    used: set[int] = set()
    for k in range(p):
        if len(rows) == p - 1:
            break
        r = residual(eye[k])
        nrm = np.linalg.norm(r)
        if nrm >= RESIDUAL_THRESHOLD:
            q = _sign_normalize(r / nrm)
            basis.append(q)
            rows.append(q)
            used.add(k)
    while len(rows) < p - 1:
        cands = [(np.linalg.norm(residual(eye[k])), k) for k in range(p) if k not in used]
        nrm, k = max(cands)
        r = residual(eye[k])
        q = _sign_normalize(r / np.linalg.norm(r))
        basis.append(q)
        rows.append(q)
        used.add(k)
    return np.array(rows).reshape(p - 1, p)


@dataclass(frozen=True)
class CanonicalTransform:
    """X~ = K X + ell solves a C(p) equation; X~_1 = c V_1."""

    K: np.ndarray
    ell: np.ndarray
    c: float
    transformed: SdeModel
    sign_flips: frozenset[int]

    def forward(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.K.T + self.ell

    def inverse(self, xt) -> np.ndarray:
        return np.linalg.solve(self.K, (np.asarray(xt, dtype=float) - self.ell).T).T

    def to_dict(self) -> dict[str, Any]:
        return {
            "K": self.K.tolist(),
            "ell": self.ell.tolist(),
            "c": self.c,
            "model": self.transformed.to_dict(),
            # one-based coordinate indices, like the condition names
            "sign_flips": sorted(j + 1 for j in self.sign_flips),
        }


def _affine_image(model: SdeModel, K: np.ndarray, ell: np.ndarray) -> SdeModel:
    p = model.p
    Kinv = np.linalg.inv(K)
    a_t = K @ model.a @ Kinv
    b_t = K @ model.b - a_t @ ell
    beta = np.zeros((p, p))
    beta[:, 0] = 1.0
    x0 = K @ model.x0 + ell
    # V_1(x0) >= -1e-12 was checked upstream; c V_1(x0) can fall just outside after scaling
    x0[0] = max(x0[0], 0.0)
    return SdeModel.create(a=a_t, b=b_t, beta=beta, x0=x0)


def canonicalize(model: SdeModel) -> CanonicalTransform:
    """Affine map taking a proportional-volatility model into C(p).

    K's first row is c beta_1 and ell_1 = c alpha_1 with c = 1/|beta_1 Sigma|^2,
    so the first new coordinate is c V_1. The remaining rows complete
    beta_1 Sigma to an orthonormal frame (after undoing Sigma); free shifts
    ell_i, i > 1, are zero. Coordinates j > 1 with a~_1j < 0 are negated.
    """
    if not is_proportional(model):
        raise ClassError("canonicalize needs proportional volatilities (class S(p))")
    beta1, alpha1, sigma = model.beta[0], model.alpha[0], model.sigma
    w = beta1 @ sigma
    nw = float(np.linalg.norm(w))
    if nw == 0.0 or not np.any(beta1):
        raise DegenerateVolatilityError("beta_1 = 0: the volatility factor is constant")
    c = 1.0 / nw**2
    M = complete_orthonormal(w / nw)
    K = np.empty((model.p, model.p))
    K[0] = c * beta1
    if model.p > 1:
        # M Sigma^{-1} / |beta_1 Sigma|
        K[1:] = np.linalg.solve(sigma.T, M.T).T / nw
    ell = np.zeros(model.p)
    ell[0] = c * alpha1

    first = _affine_image(model, K, ell)
    flips = frozenset(int(j) for j in np.flatnonzero(first.a[0, 1:] < 0) + 1)
    if flips:
        D = np.ones(model.p)
        D[list(flips)] = -1.0
        K = D[:, None] * K
        ell = D * ell
        first = _affine_image(model, K, ell)
    K.setflags(write=False)
    ell.setflags(write=False)
    return CanonicalTransform(K=K, ell=ell, c=c, transformed=first, sign_flips=flips)


def eliminate_b1(model: SdeModel) -> SdeModel:
    """Shift the second coordinate, Y = X_2 + b_1/a_12, so that b_1 becomes 0.

    In the new coordinates the intercept of the Y-equation is
    b_2 - a_22 b_1 / a_12 and y_0 = x_{0,2} + b_1/a_12; the drift matrix is
    unchanged.
    """
    if model.p != 2 or not (is_canonical(model) and is_proportional(model)):
        raise ClassError("eliminate_b1 needs a model in C(2)")
    a, b = model.a, model.b
    if a[0, 1] == 0.0:
        raise HypothesisError("a_12 = 0: the substitution is undefined (one-dimensional case)")
    if b[0] == 0.0:
        return model
    shift = b[0] / a[0, 1]
    return model.replace(
        b=[0.0, b[1] - a[1, 1] * shift],
        x0=[model.x0[0], model.x0[1] + shift],
    )
