import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmcforge.loopalg import (LaurentLoop, add, circle_adjoint, circle_points, constant, evaluate,
                              from_circle_samples, identity, monomial, multiply, sample)


def random_loop(seed, lo, n):
    rng = np.random.default_rng(seed)
    return LaurentLoop(lo, rng.normal(size=(n, 2, 2)) + 1j * rng.normal(size=(n, 2, 2)))


loops = st.builds(random_loop, st.integers(0, 2**31), st.integers(-4, 4), st.integers(1, 5))


def test_trimming_and_equality():
    c = np.zeros((4, 2, 2))
    c[1] = np.eye(2)
    a = LaurentLoop(-2, c)
    assert (a.lo, a.hi) == (-1, -1)
    assert a == monomial(np.eye(2), -1)
    assert len(LaurentLoop(3, np.zeros((2, 2, 2)))) == 0


def test_coeff_and_window():
    a = monomial(np.eye(2), 2)
    assert np.all(a.coeff(2) == np.eye(2))
    assert np.all(a.coeff(0) == 0)
    w = a.window(0, 3)
    assert w.shape == (4, 2, 2) and np.all(w[2] == np.eye(2))


def test_negative_power_at_zero_raises():
    with pytest.raises(ZeroDivisionError):
        evaluate(monomial(np.eye(2), -1), 0.0)


@given(loops, loops)
def test_product_evaluates_pointwise(a, b):
    lam = circle_points(7, 0.3)
    assert np.allclose(evaluate(a @ b, lam), evaluate(a, lam) @ evaluate(b, lam), atol=1e-10)


@given(loops, loops)
def test_sum_evaluates_pointwise(a, b):
    lam = np.array([0.5 + 0.2j, 1.3j, -2.0])
    assert np.allclose(evaluate(add(a, b), lam), evaluate(a, lam) + evaluate(b, lam), atol=1e-10)


@given(loops)
def test_circle_adjoint_is_pointwise_adjoint(a):
    lam = circle_points(9, 0.1)
    v = evaluate(a, lam)
    assert np.allclose(evaluate(circle_adjoint(a), lam), np.conj(np.swapaxes(v, 1, 2)), atol=1e-10)


@given(loops)
def test_identity_is_neutral(a):
    assert a @ identity() == a
    assert identity() @ a == a


@settings(max_examples=30)
@given(loops)
def test_fit_from_samples_roundtrip(a):
    fit, res = from_circle_samples(sample(a, 32), a.lo, a.hi)
    assert res < 1e-10
    assert np.allclose(fit.window(a.lo, a.hi), a.coeffs, atol=1e-10)


def test_fit_residual_detects_missing_harmonics():
    a = constant(np.eye(2)) + monomial(np.ones((2, 2)), 3)
    _, res = from_circle_samples(sample(a, 16), 0, 1)
    assert res > 0.5
