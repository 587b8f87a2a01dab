import numpy as np
import pytest

from feller_probe.errors import ClassError
from feller_probe.feller import check_c2_violation_profile, check_c22_violation_profile, check_canonical_feller
from feller_probe.model import SdeModel, classify

PROP = [[1.0, 0.0], [1.0, 0.0]]


def c22(a, b=(0.2, 0.3)):
    return SdeModel.canonical_2d(a, b, [1, 1], proportional=False)


def c2(a, b=(0.0, 0.0)):
    return SdeModel.canonical_2d(a, b, [1, 1], proportional=True)


def test_negative_off_diagonal():
    r = check_canonical_feller(c22([[-1, -0.5], [0.1, -1]]))
    assert not r.overall
    assert r["a_12≥0"].margin == -0.5
    assert [c.name for c in r.failures] == ["a_12≥0"]


def test_all_hold():
    assert check_canonical_feller(c22([[-1, 0.1], [0.1, -1]])).overall


def test_one_factor_needs_zero_coupling():
    r = check_canonical_feller(c2([[-1, 0.3], [0.1, -1]]))
    assert not r.overall
    assert r["a_12=0"].margin == -0.3


def test_boundary_non_strict_holds():
    r = check_canonical_feller(c22([[-1, 0.0], [0.1, -1]], b=(0.0, 0.3)))
    assert r.overall and r["b_1≥0"].margin == 0.0


def test_non_canonical_rejected():
    m = SdeModel.create(a=np.zeros((2, 2)), b=[0, 0], beta=np.eye(2), sigma=2 * np.eye(2), x0=[1, 1])
    with pytest.raises(ClassError):
        check_canonical_feller(m)


def test_report_agrees_with_classify():
    rng = np.random.default_rng(0)
    for _ in range(300):
        m = c22(rng.uniform(-1, 1, size=(2, 2)), b=rng.uniform(-1, 1, size=2))
        assert check_canonical_feller(m).overall == classify(m).feller


def test_margins_shift_linearly():
    rng = np.random.default_rng(1)
    base = c22([[-1, 0.2], [0.3, -1]], b=(0.4, 0.5))
    r0 = check_canonical_feller(base)
    for _ in range(20):
        d = rng.uniform(-0.1, 0.1)
        r1 = check_canonical_feller(base.replace(b=[0.4 + d, 0.5]))
        assert r1["b_1≥0"].margin == pytest.approx(r0["b_1≥0"].margin + d, abs=1e-15)
        assert r1["a_12≥0"].margin == r0["a_12≥0"].margin


class TestC2Profile:
    def test_all_hold(self):
        r = check_c2_violation_profile(c2([[-1, 1], [0, -1]]))
        assert all(r[n].holds for n in ("a_12>0", "a_11<0", "a_22<0", "det_a>0"))
        assert r["det_a>0"].margin == pytest.approx(1.0)

    def test_zero_a11_fails_strict(self):
        r = check_c2_violation_profile(c2([[0, 1], [0, -1]]))
        assert not r["a_11<0"].holds and r["a_11<0"].margin == 0.0

    def test_negative_a12(self):
        assert not check_c2_violation_profile(c2([[-1, -1], [1, -1]]))["a_12>0"].holds

    def test_needs_proportional(self):
        with pytest.raises(ClassError):
            check_c2_violation_profile(c22([[-1, 1], [0, -1]]))


class TestC22Profile:
    def test_all_hold(self):
        r = check_c22_violation_profile(c22([[-1, -1], [1, -1]], b=(0, 1)))
        assert r.overall
        assert not r.related.overall

    def test_zero_a12(self):
        r = check_c22_violation_profile(c22([[-1, 0], [1, -1]], b=(0, 1)))
        assert not r["a_12<0"].holds and r["a_12<0"].margin == 0.0

    def test_negative_b2(self):
        assert not check_c22_violation_profile(c22([[-1, -1], [1, -1]], b=(0, -0.1)))["b_2>0"].holds
