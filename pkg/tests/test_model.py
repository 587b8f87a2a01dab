import json
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feller_probe.errors import InputError
from feller_probe.model import (
    ClassTag,
    SdeModel,
    bundled_models,
    classify,
    eval_volatility,
    load_bundled,
    load_model,
    numerical_rank,
)


def planar(a, b=(0.2, 0.3), x0=(1.0, 1.0), **kw):
    return SdeModel.create(a=a, b=b, beta=kw.pop("beta", np.eye(2)), x0=x0, **kw)


class TestEvalVolatility:
    def test_identity_map(self):
        m = planar([[-1, 0], [0, -1]])
        np.testing.assert_array_equal(eval_volatility(m, [1, 2]), [1, 2])

    def test_constant_volatilities(self):
        # beta = 0 is rejected as a model (rank 0), but the map itself is still affine
        params = SimpleNamespace(p=2, alpha=np.array([1.0, 0.0]), beta=np.zeros((2, 2)))
        np.testing.assert_array_equal(eval_volatility(params, [5, 5]), [1, 0])

    def test_zero_beta_rejected(self):
        with pytest.raises(InputError, match="rank"):
            SdeModel.create(a=np.zeros((2, 2)), b=[0, 0], beta=np.zeros((2, 2)), alpha=[1, 0], x0=[5, 5])

    def test_affine_map(self):
        m = SdeModel.create(a=np.zeros((2, 2)), b=[0, 0], beta=[[1, 1], [2, 0]], alpha=[0.5, -0.5], x0=[1, 1])
        np.testing.assert_allclose(eval_volatility(m, [1, 1]), [2.5, 1.5])

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            eval_volatility(planar(np.zeros((2, 2))), [1, 2, 3])


class TestValidation:
    def test_singular_sigma(self):
        with pytest.raises(InputError, match="sigma"):
            planar(np.zeros((2, 2)), sigma=[[1, 1], [1, 1]])

    def test_negative_initial_volatility(self):
        with pytest.raises(InputError, match="v_2"):
            planar(np.zeros((2, 2)), x0=(1.0, -0.5))

    def test_boundary_start_accepted_and_noted(self):
        m = planar(np.zeros((2, 2)), x0=(0.0, 1.0))
        assert any("v_1" in n for n in classify(m).notes)

    def test_arrays_are_read_only(self):
        m = planar(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            m.a[0, 0] = 1.0

    def test_rank_derives_m(self):
        assert planar(np.zeros((2, 2)), beta=[[1, 0], [1, 0]]).m == 1


class TestClassify:
    def test_canonical_feller(self):
        c = classify(planar([[-1, 0.1], [0.1, -1]]))
        assert c.tag is ClassTag.CANONICAL_FELLER
        assert ClassTag.CANONICAL in c

    def test_canonical_not_feller(self):
        c = classify(planar([[-1, -0.5], [0.1, -1]]))
        assert c.tag is ClassTag.CANONICAL and not c.feller

    def test_proportional(self):
        c = classify(planar([[-1, 0], [0, -1]], beta=[[1, 0], [1, 0]]))
        assert c.proportional and c.m == 1
        assert ClassTag.PROPORTIONAL_CANONICAL in c

    def test_non_canonical_proportional(self):
        c = classify(planar([[-1, 0], [0, -1]], beta=[[1, 1], [1, 1]]))
        assert c.tag is ClassTag.PROPORTIONAL and not c.canonical

    def test_idempotent(self):
        m = planar([[-1, 0.1], [0.1, -1]])
        assert classify(m) == classify(m)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10**6))
def test_rank_matches_construction(p, seed):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, p + 1))
    u, _ = np.linalg.qr(rng.normal(size=(p, p)))
    v, _ = np.linalg.qr(rng.normal(size=(p, p)))
    s = np.zeros(p)
    s[:r] = rng.uniform(0.5, 2.0, size=r)
    assert numerical_rank(u @ np.diag(s) @ v.T) == r


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=2))
def test_canonical_volatility_is_coordinate(x):
    m = planar([[-1, 0.1], [0.1, -1]])
    np.testing.assert_array_equal(eval_volatility(m, x), x)


class TestFiles:
    def test_round_trip(self, tmp_path):
        m = planar([[-1, 0.1], [0.1, -1]])
        path = tmp_path / "m.json"
        path.write_text(json.dumps(m.to_dict()))
        assert load_model(path) == m

    def test_defaults(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"a": [[0, 0], [0, 0]], "b": [0, 0], "beta": [[1, 0], [0, 1]], "x0": [1, 1]}))
        m = load_model(path)
        np.testing.assert_array_equal(m.sigma, np.eye(2))
        np.testing.assert_array_equal(m.alpha, [0, 0])

    def test_parse_error_has_location(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"a": [1,\n')
        with pytest.raises(InputError, match=r"bad\.json:2:1"):
            load_model(path)

    def test_p_mismatch(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({**planar(np.zeros((2, 2))).to_dict(), "p": 3}))
        with pytest.raises(InputError, match="p = 3"):
            load_model(path)

    def test_bundled_models_load(self):
        names = bundled_models()
        assert {"c22_violating", "c2_violating", "feller_control"} <= set(names)
        for name in names:
            load_bundled(name)
