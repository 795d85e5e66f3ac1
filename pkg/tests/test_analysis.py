import csv
import io
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from numpy.polynomial import polynomial as P

from cmcforge.analysis import classify_stability, family_summary, roots_in_disk
from cmcforge.model import AccessorySeries, build_closing, lawson_params, reconstruct_B


def params():
    return lawson_params(2).replace(even_lambda=False)


def series_with_zero(a, lam0, order):
    """Series with coefficients a for A and C of degree order-1 making B vanish to that order at lam0."""
    p = params()
    cp = build_closing(p)
    base = reconstruct_B(AccessorySeries(a, np.zeros(len(a))), p)
    # B = base + h C; match Taylor coefficients of order < ``order`` at lam0
    rows, rhs = [], []
    for k in range(order):
        db = P.polyder(base, k) if k else base
        row = []
        for j in range(order):
            mono = np.zeros(j + 1)
            mono[j] = 1.0
            prod = P.polymul(cp.h, mono)
            row.append(P.polyval(lam0, P.polyder(prod, k) if k else prod))
        rows.append(row)
        rhs.append(-P.polyval(lam0, db))
    c = np.linalg.solve(np.array(rows, dtype=complex), np.array(rhs, dtype=complex))
    n = max(len(a), order)
    return AccessorySeries(np.r_[a, np.zeros(n - len(a))], np.r_[c, np.zeros(n - order)])


def test_roots_with_multiplicity():
    poly = P.polyfromroots([0.5, 0.5, 2.0, -0.1j])
    zs = sorted(roots_in_disk(poly), key=lambda z: z.multiplicity)
    assert [z.multiplicity for z in zs] == [1, 2]
    assert abs(zs[0].location + 0.1j) < 1e-10
    assert abs(zs[1].location - 0.5) < 1e-6
    assert all(z.residual < 1e-12 for z in zs)
    assert len(roots_in_disk(poly, radius=3.0)) == 3


def test_constant_and_zero_polynomials():
    assert roots_in_disk([2.0]) == []
    with pytest.raises(ValueError):
        roots_in_disk([0.0, 0.0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=3, min_magnitude=0.05), min_size=1, max_size=6))
def test_root_count_matches_inside_points(roots):
    roots = [r for r in roots if abs(abs(r) - 1) > 1e-3]
    gaps = [abs(a - b) for i, a in enumerate(roots) for b in roots[i + 1:]]
    assume(roots and min(gaps, default=1.0) > 1e-2)
    poly = P.polyfromroots(roots)
    found = roots_in_disk(poly)
    assert sum(z.multiplicity for z in found) == sum(abs(r) < 1 for r in roots)


def test_synthetic_unstable_zero():
    s = series_with_zero([-1.6, 2.0], 0.3, 1)        # A + 1 = 2 (lambda - 0.3)
    run = SimpleNamespace(params=params(), series=s)
    rep = classify_stability(run)
    assert rep.unstable_count == 1
    c = rep.common_zeros[0]
    assert abs(c["location"] - 0.3) < 1e-8
    assert c["ord_B"] == 1 and c["ord_A_plus_1"] == 1


def test_higher_order_zero_of_B_is_stable():
    s = series_with_zero([-1.6, 2.0], 0.3, 2)
    rep = classify_stability(SimpleNamespace(params=params(), series=s))
    assert rep.common_zeros and rep.common_zeros[0]["ord_B"] == 2
    assert rep.unstable_count == 0


def test_identically_minus_one_A():
    s = series_with_zero([-1.0], -0.2, 1)
    rep = classify_stability(SimpleNamespace(params=params(), series=s))
    assert rep.unstable_count >= 1
    assert any(abs(c["location"] + 0.2) < 1e-8 for c in rep.common_zeros)
    assert rep.to_dict()["unstable_count"] == rep.unstable_count


def test_solved_runs(lawson_run, family1_run):
    assert classify_stability(lawson_run).unstable_count == 0
    assert classify_stability(family1_run).unstable_count == 0


def test_family_summary_table(lawson_run, family1_run):
    table = family_summary([family1_run, lawson_run])
    assert table.header[:6] == ["driver", "cross_ratio_re", "cross_ratio_im", "H", "final_F",
                                "unstable_count"]
    assert [r[0] for r in table.rows] == sorted(r[0] for r in table.rows)
    rows = list(csv.reader(io.StringIO(table.to_csv())))
    assert len(rows) == 3 and all(len(r) == len(table.header) for r in rows)
    with pytest.raises(ValueError):
        family_summary([])
