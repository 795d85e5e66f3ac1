import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmcforge.model import AccessorySeries, ModelError, lawson_params
from cmcforge.objective import F, SampleSet
from cmcforge.search import (FamilySpec, Problem, SearchConfig, _common_zero_seed, continue_family,
                             familyII_objective, find_familyII_start, minimize_surface, nelder_mead)


def rosenbrock(x):
    return (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2


def test_nelder_mead_rosenbrock():
    res = nelder_mead(rosenbrock, [-1.2, 1.0], step=0.5, xtol=1e-12, ftol=1e-20, max_evals=5000)
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-5)
    assert res.f < 1e-10
    assert list(res.best_history) == sorted(res.best_history, reverse=True)


def test_nelder_mead_budget_and_failures():
    def fun(x):
        if x[0] > 0.5:
            raise RuntimeError("outside")
        return float(np.sum((x + 1) ** 2))
    res = nelder_mead(fun, [0.0, 0.0], step=0.8, max_evals=40)
    assert res.evals <= 42 and res.reason == "max_evals"
    assert math.isfinite(res.f)
    with pytest.raises(ValueError):
        nelder_mead(fun, [0.0], step=0.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_nelder_mead_quadratic(a, b):
    res = nelder_mead(lambda x: (x[0] - a) ** 2 + 2 * (x[1] - b) ** 2, [0.0, 0.0], step=1.0,
                      xtol=1e-10, ftol=1e-24, max_evals=4000)
    assert np.allclose(res.x, [a, b], atol=1e-6)


def test_search_config_validation_and_round_trip():
    c = SearchConfig(N_ladder=[0, 2, 4], K=8, seed=3)
    assert SearchConfig.from_dict(c.to_dict()) == c
    for bad in ({"optimizer": "newton"}, {"N_ladder": (2, 2)}, {"N_ladder": ()},
                {"max_evals": 0}, {"target_F": -1.0}, {"penalty_weight": -1.0}):
        with pytest.raises(ValueError):
            SearchConfig(**bad)


def test_family_spec_validation(lawson_run):
    for bad in ({"family": "III"}, {"driver": "angle"}, {"count": -1}):
        kw = dict(family="I", driver="sym", start=lawson_run, step=0.1, count=1)
        kw.update(bad)
        with pytest.raises(ValueError):
            FamilySpec(**kw)


def test_problem_round_trip():
    p = lawson_params(2).replace(even_lambda=False, lambda1=cmath.exp(1j), lambda2=cmath.exp(-1j))
    s = AccessorySeries([-0.7, 0.1, 0.02], [0.3, -0.05, 0.0])
    prob = Problem(p, 2, K=4, free="phi", family2=True)
    x = prob.encode(p, s, -0.3)
    assert len(x) == prob.dim == prob.n_series + 2
    p2, s2, lam0 = prob.decode(x)
    assert np.allclose(s2.a, s.a) and np.allclose(s2.c, s.c)
    assert abs(lam0 + 0.3) < 1e-12
    assert abs(p2.z0 - p.z0) < 1e-12
    with pytest.raises(ValueError):
        prob.lambda0_coords(-0.99)
    with pytest.raises(ModelError):
        Problem(p.replace(rectangular=False), 2, free="phi")


def test_familyII_objective_penalty():
    p = lawson_params(2).replace(even_lambda=False, lambda1=cmath.exp(1j), lambda2=cmath.exp(-1j))
    samples = SampleSet.for_params(p, 4)
    s = _common_zero_seed(p, -0.2)
    base = F(p, s, samples, threads=1).value
    assert familyII_objective(p, s, -0.2, samples, threads=1) == pytest.approx(base, rel=1e-12)
    assert familyII_objective(p, s, -0.4, samples, threads=1) > base
    assert familyII_objective(p, s, 0.995, samples, weight=0.0, threads=1) > base + 1.0


def test_budget_of_one_is_not_converged():
    run = minimize_surface(lawson_params(), SearchConfig(max_evals=1, K=4), threads=1)
    assert not run.converged
    assert run.eval_count == 1
    assert run.message


def test_zero_step_family(lawson_run):
    runs, failed = continue_family(FamilySpec("I", "sym", lawson_run, -0.05, 0), threads=1)
    assert runs == [] and failed is None
    with pytest.raises(ValueError):
        continue_family(FamilySpec("II", "sym", lawson_run, -0.05, 1), threads=1)


def test_familyII_start_needs_rectangular():
    p = lawson_params(2).replace(rectangular=False)
    with pytest.raises(ModelError):
        find_familyII_start(p, threads=1)


def test_familyII_fixture(familyII_run):
    assert familyII_run.converged
    lam0 = familyII_run.lambda0
    assert abs(lam0) < 1
    s = familyII_run.series
    assert abs(s.A(lam0) + 1) < 1e-3
