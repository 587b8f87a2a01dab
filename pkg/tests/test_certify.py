import json
import math

import numpy as np
import pytest

from feller_probe.certify import Certificate, Route, certify_c2, certify_c22, to_tilted_model
from feller_probe.errors import ClassError, HypothesisError, InputError
from feller_probe.model import SdeModel
from feller_probe.odeexp import rk4_fixed, solve_expectation

from generators import c2_model, c22_model


def c22(a, b, x0):
    return SdeModel.canonical_2d(a, b, x0, proportional=False)


def c2(a, b, x0):
    return SdeModel.canonical_2d(a, b, x0, proportional=True)


def rk4_x(model, t0, steps=20_000):
    return rk4_fixed(model.a, model.b, model.x0, t0, steps)[0]


class TestC22:
    def test_example(self):
        m = c22([[-1, -1], [1, -1]], [0, 1], [1, 0])
        cert = certify_c22(m, 1.0)
        assert cert.route is Route.INDEPENDENT_VOLS
        assert cert.tilted_params["a11"] == 0 and cert.tilted_params["a22"] > 0
        assert cert.expected_value < 0 and cert.oracle_value < 0
        assert rk4_x(to_tilted_model(m, cert), 1.0) < 0

    def test_positive_a12(self):
        with pytest.raises(HypothesisError, match="a_12<0"):
            certify_c22(c22([[-1, 0.5], [1, -1]], [0, 1], [1, 0]), 1.0)

    def test_zero_b2(self):
        with pytest.raises(HypothesisError, match="b_2>0"):
            certify_c22(c22([[-1, -1], [1, -1]], [0, 0], [1, 0]), 1.0)

    def test_proportional_model_rejected(self):
        with pytest.raises(ClassError):
            certify_c22(c2([[-1, -1], [1, -1]], [0, 1], [1, 0]), 1.0)

    def test_bad_t0(self):
        with pytest.raises(InputError):
            certify_c22(c22([[-1, -1], [1, -1]], [0, 1], [1, 0]), 0.0)

    def test_doubling_terminates(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            cert = certify_c22(c22_model(rng), float(rng.choice([0.5, 1.0, 2.0])))
            assert cert.expected_value < 0


class TestC2:
    def test_case1_example(self):
        m = c2([[0, 1], [0, -1]], [0, 0], [1, 0])
        cert = certify_c2(m, 1.0)
        assert cert.case == 1 and cert.details["k"] == 0
        assert cert.expected_value < 0
        assert rk4_x(to_tilted_model(m, cert), 1.0) < 0

    def test_case2(self):
        m = c2([[-1, 1], [0, -1]], [0, 0.5], [0, 0])
        cert = certify_c2(m, 1.0)
        assert cert.case == 2
        tilted = to_tilted_model(m, cert)
        sol = solve_expectation(tilted.a, tilted.b, *tilted.x0)
        identity = (1 - math.exp(0.5 * sol.tau)) * sol.xbar
        assert cert.expected_value == pytest.approx(identity, abs=1e-12)
        assert cert.expected_value < 0

    def test_case2_wrong_sign_of_trace(self):
        # rho = a12 b2 > 0 but tau < 0: a11 is moved so that tau = sgn(rho)
        m = c2([[-1, 1], [0, -1]], [0, 0.5], [0, 0])
        cert = certify_c2(m, 1.0)
        assert cert.tilted_params["a11"] + m.a[1, 1] == pytest.approx(1.0)

    def test_case3_odd_k(self):
        m = c2([[-1, 1], [0, -1]], [0, 0], [0, 1])
        cert = certify_c2(m, 1.0)
        assert cert.case == 3 and cert.details["k"] % 2 == 1
        assert cert.expected_value == pytest.approx(cert.details["predicted"], rel=1e-9)

    def test_case3_even_k(self):
        m = c2([[-1, 1], [0, -1]], [0, 0], [0, -1])
        assert certify_c2(m, 1.0).details["k"] % 2 == 0

    def test_excluded_case(self):
        with pytest.raises(HypothesisError, match="excluded"):
            certify_c2(c2([[-1, 1], [0, -1]], [0, 0], [0, 0]), 1.0)

    def test_zero_a12(self):
        with pytest.raises(HypothesisError):
            certify_c2(c2([[-1, 0], [0, -1]], [0, 0], [1, 0]), 1.0)

    def test_negative_a12_reflected(self):
        m = c2([[-1, -1], [0, -1]], [0, 0], [1, 0.5])
        cert = certify_c2(m, 1.0)
        assert rk4_x(to_tilted_model(m, cert), 1.0) < 0

    def test_tilted_a21_from_omega(self):
        m = c2([[-1, 1], [-1, -1]], [0, -1], [0.5, 0])
        cert = certify_c2(m, 1.0)
        tau = cert.tilted_params["a11"] + m.a[1, 1]
        delta = 0.25 * tau**2 + cert.details["omega"] ** 2
        expected = (cert.tilted_params["a11"] * m.a[1, 1] - delta) / m.a[0, 1]
        assert to_tilted_model(m, cert).a[1, 0] == pytest.approx(expected, rel=1e-12)

    def test_every_case_reached(self):
        rng = np.random.default_rng(9)
        for case in (1, 2, 3):
            for _ in range(20):
                cert = certify_c2(c2_model(rng, case), 1.0)
                assert cert.case == case and cert.expected_value < 0


class TestTilt:
    def test_null_tilt(self):
        m = c22([[-1, -1], [1, -1]], [0, 1], [1, 0])
        cert = Certificate(Route.INDEPENDENT_VOLS, 1.0, {}, (0.0, 0.0), -1.0, -1.0)
        assert to_tilted_model(m, cert) == m

    def test_lambda_definition(self):
        m = c22([[-1, -1], [1, -1]], [0, 1], [1, 0])
        cert = Certificate(Route.INDEPENDENT_VOLS, 1.0, {"a11": 0.0, "a22": 8.0}, (1.0, 9.0), -1.0, -1.0)
        assert to_tilted_model(m, cert).a[1, 1] == 8.0

    def test_route_mismatch(self):
        m = c22([[-1, -1], [1, -1]], [0, 1], [1, 0])
        cert = certify_c2(c2([[0, 1], [0, -1]], [0, 0], [1, 0]), 1.0)
        with pytest.raises(InputError):
            to_tilted_model(m, cert)

    def test_json_round_trip(self):
        cert = certify_c22(c22([[-1, -1], [1, -1]], [0, 1], [1, 0]), 1.0)
        again = Certificate.from_dict(json.loads(json.dumps(cert.to_dict())))
        assert again == cert
