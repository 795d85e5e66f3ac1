import cmath
import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from cmcforge.model import AccessorySeries, lawson_params
from cmcforge.monodromy import (IntegrationError, MonodromyError, PathSpec, apparency_check, circle,
                                fuchsian_potential, half_traces, keyhole_paths,
                                monodromy_set, monodromy_sets, ordered_product, segment, star_order,
                                transport, transport_tree, winding_number)


def test_abelian_fuchsian_oracle():
    pot = fuchsian_potential([1.0], [np.diag([1 / 3, -1 / 3])])
    Y = transport(pot, PathSpec(0.0, 1.0, 0.5).path())
    expect = np.diag([cmath.exp(-2j * math.pi / 3), cmath.exp(2j * math.pi / 3)])
    assert np.max(np.abs(Y - expect)) < 1e-9


@given(st.floats(-0.45, 0.45), st.floats(0.2, 0.8))
def test_fuchsian_loop_monodromy_is_exponential(r, radius):
    R = np.array([[r, 0.1], [0.0, -r]])
    pot = fuchsian_potential([0.0], [R])
    Y = transport(pot, circle(0, radius))
    expect = scipy.linalg.expm(-2j * math.pi * R)
    assert np.max(np.abs(Y - expect)) < 1e-9


def test_python_potential_route_agrees_with_compiled():
    R = np.diag([0.2, -0.2])
    pot = fuchsian_potential([0.3], [R])
    path = PathSpec(-0.5, 0.3, 0.2).path()
    Y1 = transport(pot, path)
    Y2 = transport(lambda z: R / (z - 0.3), path)
    assert np.max(np.abs(Y1 - Y2)) < 1e-9


def test_concatenation_multiplies():
    pot = fuchsian_potential([0.0], [np.array([[0.1, 0.3], [0.2, -0.1]])])
    a, b = segment(0.5, 0.5j), segment(0.5j, -0.4 + 0.1j)
    assert np.allclose(transport(pot, a + b), transport(pot, b) @ transport(pot, a), atol=1e-10)


def test_transport_tree_matches_segments():
    pot = fuchsian_potential([0.0], [np.array([[0.1, 0.3], [0.2, -0.1]])])
    z = np.array([0.5, 0.5j, -0.4 + 0.1j, 0.6 + 0.4j])
    parent = np.array([-1, 0, 1, 0])
    Y = transport_tree(pot, z, parent)
    assert np.allclose(Y[2], transport(pot, segment(0.5, 0.5j) + segment(0.5j, -0.4 + 0.1j)), atol=1e-10)
    assert np.allclose(Y[3], transport(pot, segment(0.5, 0.6 + 0.4j)), atol=1e-10)
    with pytest.raises(ValueError):
        transport_tree(pot, z, np.array([-1, 2, 0, 0]))


def test_integration_error_reports_position():
    pot = fuchsian_potential([0.0], [np.eye(2)])
    with pytest.raises(IntegrationError) as err:
        transport(pot, PathSpec(0.5, 0.0, 1e-3).path(), max_steps=5)
    assert err.value.position is not None


def test_winding_numbers_of_keyholes():
    p = lawson_params()
    for path, q in zip(keyhole_paths(p), p.punctures):
        assert winding_number(path, q) == 1
        assert winding_number(path, 0.0) == 0
        for other in p.punctures:
            if other != q:
                assert winding_number(path, other) == 0


def test_half_traces_keys():
    t = half_traces(np.array([np.eye(2)] * 4))
    assert set(t) == {(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)}
    assert all(v == 1 for v in t.values())


def test_lambda_zero_rejected():
    with pytest.raises(MonodromyError):
        monodromy_set(lawson_params(), AccessorySeries.zeros(0), 0.0)


def test_solved_lawson_traces_and_product(lawson_run):
    p, s = lawson_run.params, lawson_run.series
    rng = np.random.default_rng(7)
    lams = np.exp(2j * math.pi * rng.random(4))
    order = star_order(p)
    for ms in monodromy_sets(p, s, lams, threads=1):
        for M in ms.M:
            assert abs(np.trace(M) + 1) < 1e-7
            assert abs(np.linalg.det(M) - 1) < 1e-9
        assert np.linalg.norm(ordered_product(ms, order) - np.eye(2)) < 1e-6


def test_apparency_at_origin(lawson_run):
    assert apparency_check(lawson_run.params, lawson_run.series, cmath.exp(0.4j)) < 1e-7


@settings(max_examples=10, deadline=None)
@given(st.floats(0, 2 * math.pi))
def test_threaded_matches_serial(t):
    p = lawson_params()
    s = AccessorySeries([-0.5, 0, 0.1], [0.02, 0, 0])
    lams = [cmath.exp(1j * t), cmath.exp(1j * (t + 1))]
    a = monodromy_sets(p, s, lams, threads=1)
    b = monodromy_sets(p, s, lams, threads=2)
    for x, y in zip(a, b):
        assert np.array_equal(x.M, y.M)
