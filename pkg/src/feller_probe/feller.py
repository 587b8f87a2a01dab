"""Parameter-condition reports for canonical square-root SDEs.

Every condition carries a signed margin. Non-strict conditions (``>=``) hold
when the margin is >= 0, strict ones (``>``, ``<``) only when it is > 0, so a
margin of exactly zero is reported but resolved according to the inequality.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ClassError
from .model import SdeModel, is_canonical, is_proportional


@dataclass(frozen=True)
class Condition:
    name: str
    expression: str
    margin: float
    strict: bool = False

    @property
    def holds(self) -> bool:
        return self.margin > 0 if self.strict else self.margin >= 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "expression": self.expression,
            "holds": self.holds,
            "margin": self.margin,
            "strict": self.strict,
        }


@dataclass(frozen=True)
class FellerReport:
    conditions: tuple[Condition, ...]
    class_context: str
    related: "FellerReport | None" = field(default=None)

    @property
    def overall(self) -> bool:
        return all(c.holds for c in self.conditions)

    @property
    def failures(self) -> list[Condition]:
        return [c for c in self.conditions if not c.holds]

    def __getitem__(self, name: str) -> Condition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "class_context": self.class_context,
            "overall": self.overall,
            "conditions": [c.to_dict() for c in self.conditions],
        }
        if self.related is not None:
            out["related"] = self.related.to_dict()
        return out


def _ij(i: int, j: int) -> str:
    # zero-based in, one-based out
    sep = "," if max(i, j) >= 9 else ""
    return f"{i + 1}{sep}{j + 1}"


def _ge(name_sym: str, value: float, expr: str | None = None) -> Condition:
    return Condition(f"{name_sym}≥0", expr or f"{name_sym} = {value:g} ≥ 0", float(value))


def check_canonical_feller(model: SdeModel) -> FellerReport:
    """Weak Feller conditions for a model in canonical form.

    For i, j <= m and k > m: a_ij >= 0 (i != j), a_ik = 0, b_i >= 0,
    alpha_k >= 0 and beta_ki >= 0.
    """
    if not is_canonical(model):
        raise ClassError("check_canonical_feller needs a canonical model (Sigma = I, v_i = x_i for i <= m)")
    a, b, m, p = model.a, model.b, model.m, model.p
    conds: list[Condition] = []
    for i in range(m):
        for j in range(m):
            if i != j:
                conds.append(_ge(f"a_{_ij(i, j)}", a[i, j]))
    for i in range(m):
        for k in range(m, p):
            s = f"a_{_ij(i, k)}"
            conds.append(Condition(f"{s}=0", f"{s} = {a[i, k]:g} = 0", -abs(float(a[i, k]))))
    for i in range(m):
        conds.append(_ge(f"b_{i + 1}", b[i]))
    for k in range(m, p):
        conds.append(_ge(f"alpha_{k + 1}", model.alpha[k]))
        for i in range(m):
            conds.append(_ge(f"beta_{_ij(k, i)}", model.beta[k, i]))
    label = "C(p)" if is_proportional(model) else "C_m(p)"
    return FellerReport(tuple(conds), class_context=f"{label}, m={m}, p={p}")


def _require_planar(model: SdeModel, proportional: bool) -> None:
    if model.p != 2 or not is_canonical(model):
        raise ClassError("expected a canonical 2-dimensional model")
    if proportional and not is_proportional(model):
        raise ClassError("expected proportional volatilities (class C(2))")
    if not proportional and model.m != 2:
        raise ClassError("expected independent volatilities (class C_2(2))")


def check_c2_violation_profile(model: SdeModel) -> FellerReport:
    """Hypotheses used for C(2): a_12 > 0 plus a_11 < 0, a_22 < 0, det a > 0.

    ``a_22<0`` on its own is the weaker hypothesis that suffices once the
    remaining entries of the first column are tilted.
    """
    _require_planar(model, proportional=True)
    a, b = model.a, model.b
    det = float(np.linalg.det(a))
    conds = (
        Condition("a_12>0", f"a_12 = {a[0, 1]:g} > 0", float(a[0, 1]), strict=True),
        Condition("a_11<0", f"a_11 = {a[0, 0]:g} < 0", -float(a[0, 0]), strict=True),
        Condition("a_22<0", f"a_22 = {a[1, 1]:g} < 0", -float(a[1, 1]), strict=True),
        Condition("det_a>0", f"det a = {det:g} > 0", det, strict=True),
        _ge("b_1", b[0]),
    )
    return FellerReport(conds, class_context="C(2)")


def check_c22_violation_profile(model: SdeModel) -> FellerReport:
    """Hypotheses for C_2(2): a_12 < 0 together with a_21 > 0 and b_2 > 0.

    The full weak Feller report is attached as ``related``.
    """
    _require_planar(model, proportional=False)
    a, b = model.a, model.b
    conds = (
        Condition("a_12<0", f"a_12 = {a[0, 1]:g} < 0", -float(a[0, 1]), strict=True),
        Condition("a_21>0", f"a_21 = {a[1, 0]:g} > 0", float(a[1, 0]), strict=True),
        Condition("b_2>0", f"b_2 = {b[1]:g} > 0", float(b[1]), strict=True),
    )
    return FellerReport(conds, class_context="C_2(2)", related=check_canonical_feller(model))
