"""Square-root SDE parameters, volatility factors and class detection.

A model is the SDE

    dX_t = (a X_t + b) dt + Sigma sqrt(|v(X_t)|) dW_t,   X_0 = x0,

with volatility factors v_i(x) = alpha_i + beta_i . x.
"""
from __future__ import annotations

import enum
import json
from importlib import resources
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import InputError

IDENTITY_TOL = 1e-12
RANK_RTOL = 1e-10
INITIAL_VOL_TOL = 1e-12
SINGULAR_TOL = 1e-12


def _frozen(x: Any, shape: tuple[int, ...], name: str) -> np.ndarray:
    try:
        arr = np.array(x, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{name}: not a numeric array ({exc})") from None
    if arr.shape != shape:
        raise InputError(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name}: contains non-finite entries")
    arr.setflags(write=False)
    return arr


def numerical_rank(mat: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Count singular values above ``rtol`` times the largest one."""
    s = np.linalg.svd(np.asarray(mat, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


@dataclass(frozen=True)
class SdeModel:
    a: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    x0: np.ndarray
    p: int = field(init=False)
    m: int = field(init=False)

    def __post_init__(self) -> None:
        b = np.asarray(self.b, dtype=float)
        if b.ndim != 1 or b.size == 0:
            raise InputError("b: expected a non-empty vector")
        p = b.size
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "a", _frozen(self.a, (p, p), "a"))
        object.__setattr__(self, "b", _frozen(b, (p,), "b"))
        object.__setattr__(self, "sigma", _frozen(self.sigma, (p, p), "sigma"))
        object.__setattr__(self, "alpha", _frozen(self.alpha, (p,), "alpha"))
        object.__setattr__(self, "beta", _frozen(self.beta, (p, p), "beta"))
        object.__setattr__(self, "x0", _frozen(self.x0, (p,), "x0"))

        if abs(np.linalg.det(self.sigma)) <= SINGULAR_TOL:
            raise InputError("sigma must be non-singular")
        m = numerical_rank(self.beta)
        if m < 1:
            raise InputError("beta must have rank >= 1")
        object.__setattr__(self, "m", m)
        v0 = self.alpha + self.beta @ self.x0
        bad = np.flatnonzero(v0 < -INITIAL_VOL_TOL)
        if bad.size:
            raise InputError(
                f"initial volatilities must be non-negative; v_{bad[0] + 1}(x0) = {v0[bad[0]]:g}"
            )

    @classmethod
    def create(cls, a, b, beta, x0, sigma=None, alpha=None) -> "SdeModel":
        p = len(b)
        if sigma is None:
            sigma = np.eye(p)
        if alpha is None:
            alpha = np.zeros(p)
        return cls(a=a, b=b, sigma=sigma, alpha=alpha, beta=beta, x0=x0)

    @classmethod
    def canonical_2d(cls, a, b, x0, proportional: bool) -> "SdeModel":
        """Shortcut for the two planar canonical families (C(2) and C_2(2))."""
        beta = [[1.0, 0.0], [1.0, 0.0]] if proportional else np.eye(2)
        return cls.create(a=a, b=b, beta=beta, x0=x0)

    def replace(self, **changes: Any) -> "SdeModel":
        kw = {k: getattr(self, k) for k in ("a", "b", "sigma", "alpha", "beta", "x0")}
        kw.update(changes)
        return SdeModel(**kw)

    def volatility(self, x: np.ndarray) -> np.ndarray:
        return eval_volatility(self, x)

    def to_dict(self) -> dict[str, Any]:
        return {
            "p": self.p,
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "sigma": self.sigma.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "x0": self.x0.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SdeModel":
        if not isinstance(data, Mapping):
            raise InputError("model: expected a JSON object")
        missing = [k for k in ("a", "b", "beta", "x0") if k not in data]
        if missing:
            raise InputError(f"model: missing key(s) {', '.join(missing)}")
        model = cls.create(
            a=data["a"],
            b=data["b"],
            beta=data["beta"],
            x0=data["x0"],
            sigma=data.get("sigma"),
            alpha=data.get("alpha"),
        )
        if "p" in data and data["p"] != model.p:
            raise InputError(f"model: p = {data['p']} disagrees with len(b) = {model.p}")
        return model

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SdeModel):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("a", "b", "sigma", "alpha", "beta", "x0")
        )

    __hash__ = None  # type: ignore[assignment]


def load_model(path: str | Path) -> SdeModel:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return SdeModel.from_dict(data)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


def bundled_models() -> list[str]:
    """Names of the example models shipped with the package."""
    root = resources.files("feller_probe") / "models"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".json"))


def load_bundled(name: str) -> SdeModel:
    names = bundled_models()
    if name not in names:
        raise InputError(f"no bundled model {name!r}; available: {', '.join(names)}")
    with resources.as_file(resources.files("feller_probe") / "models" / f"{name}.json") as path:
        return load_model(path)


def resolve_model(ref: str | Path) -> SdeModel:
    """Load a model file, falling back to a bundled model of that name."""
    path = Path(ref)
    if not path.exists() and str(ref) in bundled_models():
        return load_bundled(str(ref))
    return load_model(path)


def eval_volatility(model: SdeModel, x) -> np.ndarray:
    """Volatility factors alpha_i + beta_i . x (signed, no absolute value)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (model.p,):
        raise InputError(f"state has shape {x.shape}, expected trailing dimension {model.p}")
    return model.alpha + x @ model.beta.T


class ClassTag(str, enum.Enum):
    GENERAL = "S_m(p)"
    CANONICAL = "C_m(p)"
    CANONICAL_FELLER = "A_m(p)"
    PROPORTIONAL = "S(p)"
    PROPORTIONAL_CANONICAL = "C(p)"


@dataclass(frozen=True)
class SdeClass:
    tag: ClassTag
    members: frozenset[ClassTag]
    p: int
    m: int
    satisfied_conditions: tuple[tuple[str, bool], ...] = ()
    notes: tuple[str, ...] = ()

    def __contains__(self, tag: ClassTag) -> bool:
        return tag in self.members

    @property
    def canonical(self) -> bool:
        return ClassTag.CANONICAL in self.members

    @property
    def proportional(self) -> bool:
        return ClassTag.PROPORTIONAL in self.members

    @property
    def feller(self) -> bool:
        return ClassTag.CANONICAL_FELLER in self.members

    def to_dict(self) -> dict[str, Any]:
        return {
            "tag": self.tag.name,
            "label": self.tag.value,
            "members": sorted(t.name for t in self.members),
            "p": self.p,
            "m": self.m,
            "conditions": [{"name": n, "holds": h} for n, h in self.satisfied_conditions],
            "notes": list(self.notes),
        }


def is_canonical(model: SdeModel) -> bool:
    """Sigma = I and v_i(x) = x_i for i <= m."""
    if np.max(np.abs(model.sigma - np.eye(model.p))) > IDENTITY_TOL:
        return False
    m = model.m
    if np.max(np.abs(model.alpha[:m]), initial=0.0) > IDENTITY_TOL:
        return False
    return bool(np.max(np.abs(model.beta[:m] - np.eye(model.p)[:m])) <= IDENTITY_TOL)


def is_proportional(model: SdeModel) -> bool:
    pairs = np.column_stack([model.alpha, model.beta])
    return bool(np.max(np.abs(pairs - pairs[0])) <= IDENTITY_TOL)


def classify(model: SdeModel) -> SdeClass:
    from .feller import check_canonical_feller

    members = {ClassTag.GENERAL}
    conditions: list[tuple[str, bool]] = []
    canonical = is_canonical(model)
    proportional = is_proportional(model)
    if proportional:
        members.add(ClassTag.PROPORTIONAL)
    if canonical:
        members.add(ClassTag.CANONICAL)
        if proportional:
            members.add(ClassTag.PROPORTIONAL_CANONICAL)
        report = check_canonical_feller(model)
        conditions = [(c.name, c.holds) for c in report.conditions]
        if report.overall:
            members.add(ClassTag.CANONICAL_FELLER)

    for tag in (
        ClassTag.CANONICAL_FELLER,
        ClassTag.PROPORTIONAL_CANONICAL,
        ClassTag.CANONICAL,
        ClassTag.PROPORTIONAL,
        ClassTag.GENERAL,
    ):
        if tag in members:
            break

    v0 = model.alpha + model.beta @ model.x0
    notes = tuple(
        f"v_{i + 1}(x0) = 0 (starts on the boundary)"
        for i in np.flatnonzero(np.abs(v0) <= INITIAL_VOL_TOL)
    )
    return SdeClass(
        tag=tag,
        members=frozenset(members),
        p=model.p,
        m=model.m,
        satisfied_conditions=tuple(conditions),
        notes=notes,
    )
