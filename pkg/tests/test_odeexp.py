import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feller_probe.errors import InputError, RegimeError
from feller_probe.odeexp import (
    RootKind,
    b2_asymptotic,
    evaluate,
    integrate_system,
    mean_path,
    rk4_fixed,
    solve_expectation,
)

from generators import planar_system


def test_constant_solution():
    sol = solve_expectation(np.zeros((2, 2)), [0, 0], 1, 2)
    assert sol.kind is RootKind.DEGENERATE and sol.delta == 0
    np.testing.assert_allclose(evaluate(sol, [0, 1, 5]), 1.0)


def test_real_distinct_example():
    sol = solve_expectation([[0, -1], [1, 3]], [0, 1], 1, 0)
    assert sol.kind is RootKind.REAL_DISTINCT
    assert (sol.tau, sol.delta, sol.D, sol.rho, sol.xbar) == (3, 1, 5, -1, -1)
    assert sol.B1 + sol.B2 == pytest.approx(2)
    ts = np.linspace(0, 2, 21)
    closed = evaluate(sol, ts)
    oracle = [rk4_fixed([[0, -1], [1, 3]], [0, 1], (1, 0), t, 4000)[0] if t else 1.0 for t in ts]
    assert np.max(np.abs(closed - oracle)) < 1e-8
    # the textbook two-exponential form is the same function
    textbook = sol.B1 * np.exp(sol.r1 * ts) + sol.B2 * np.exp(sol.r2 * ts) + sol.xbar
    np.testing.assert_allclose(closed, textbook, rtol=1e-12)


def test_complex_example():
    sol = solve_expectation([[0, 1], [-5, 0]], [0, 0], 1, 0)
    assert sol.kind is RootKind.COMPLEX
    assert sol.omega == pytest.approx(math.sqrt(5)) and sol.c1 == 1 and sol.c2 == 0
    assert evaluate(sol, math.pi / math.sqrt(5)) == pytest.approx(-1, abs=1e-14)


def test_degenerate_pure_drift():
    sol = solve_expectation(np.zeros((2, 2)), [1, 0], 0, 0)
    assert evaluate(sol, 2.0) == pytest.approx(2.0, rel=1e-10)


def test_initial_value_and_slope():
    rng = np.random.default_rng(0)
    for kind in ("real", "complex", "repeated", "singular"):
        a, b, x0, y0 = planar_system(rng, kind)
        sol = solve_expectation(a, b, x0, y0)
        assert evaluate(sol, 0.0) == pytest.approx(x0, abs=1e-12)
        h = 1e-6
        slope = (evaluate(sol, h) - x0) / h
        assert slope == pytest.approx(sol.xdot0, abs=1e-4 * max(1, abs(sol.xdot0)))


def test_negative_time():
    with pytest.raises(InputError):
        evaluate(solve_expectation(np.eye(2), [0, 0], 1, 1), -0.1)


def test_scalar_and_array():
    sol = solve_expectation([[0, -1], [1, 3]], [0, 1], 1, 0)
    assert isinstance(evaluate(sol, 1.0), float)
    assert evaluate(sol, np.array([0.5, 1.0])).shape == (2,)


def test_stable_near_zero_determinant():
    # Delta just above the degenerate threshold: xbar is huge and cancels
    a = np.array([[-1.0, 1.0], [1.0 - 1e-9, -1.0]])
    sol = solve_expectation(a, [1, 1], 0.5, 0.5)
    assert sol.kind is RootKind.REAL_DISTINCT
    xs, _ = integrate_system(a, [1, 1], (0.5, 0.5), [2.0], rtol=1e-12, atol=1e-14)
    assert evaluate(sol, 2.0) == pytest.approx(xs[0], rel=1e-9)


def test_matrix_exponential_agrees():
    rng = np.random.default_rng(3)
    for kind in ("real", "complex", "repeated"):
        a, b, x0, y0 = planar_system(rng, kind)
        ts = [0.3, 1.0, 2.0]
        np.testing.assert_allclose(
            mean_path(a, b, [x0, y0], ts)[:, 0],
            evaluate(solve_expectation(a, b, x0, y0), ts),
            rtol=1e-9, atol=1e-10,
        )


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6))
def test_kind_stable_under_tiny_perturbation(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-2, 2, size=(2, 2))
    sol = solve_expectation(a, [0, 0], 1, 1)
    if abs(sol.D) <= 1e-8 or sol.kind is RootKind.DEGENERATE:
        return
    bumped = solve_expectation(a + 1e-14 * rng.choice([-1, 1], size=(2, 2)), [0, 0], 1, 1)
    assert bumped.kind is sol.kind


class TestB2Asymptotic:
    def test_negative_example(self):
        val = b2_asymptotic(a12=-1, a21=1, b1=0, b2=1, x0=1, y0=1, a22=10)
        assert val < 0
        assert val == pytest.approx(-1 / 10 - 2 / 100, rel=0.05)

    def test_zero_data(self):
        assert b2_asymptotic(a12=-1, a21=0, b1=0, b2=0, x0=0, y0=0, a22=5) == 0.0

    def test_leading_order_limit(self):
        scaled = [a22 * b2_asymptotic(-1, 1, 0, 1, 1, 1, a22) for a22 in (10, 100, 1000)]
        errs = [abs(s - (-1.0)) for s in scaled]
        assert errs[0] > errs[1] > errs[2] and errs[2] < 3e-3

    def test_matches_real_root_coefficient(self):
        a = np.array([[0.0, -1.0], [1.0, 10.0]])
        assert b2_asymptotic(-1, 1, 0, 1, 1, 1, 10) == pytest.approx(solve_expectation(a, [0, 1], 1, 1).B2)

    def test_complex_regime(self):
        with pytest.raises(RegimeError):
            b2_asymptotic(a12=-1, a21=1, b1=0, b2=1, x0=1, y0=1, a22=0.5)
