"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Fresh solves and continuations go through the command-line driver with one
thread, so the whole module takes several minutes.
"""
import cmath
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from numpy.polynomial import polynomial as P

from cmcforge.cli import load_run, main
from cmcforge.iwasawa import iwasawa
from cmcforge.loopalg import circle_points, evaluate
from cmcforge.model import AccessorySeries, SurfaceParams, mean_curvature, reconstruct_B, sym_target
from cmcforge.monodromy import (ZERO, CompiledPotential, PathSpec, apparency_check, fuchsian_potential,
                                monodromy_sets, ordered_product, segment, star_order, transport)
from cmcforge.objective import F, SampleSet
from cmcforge.surface import SurfaceConfig, build_surface
from cmcforge.unitarizer import solve_diagonal

from test_iwasawa import elementary, hand_factors, upper_unipotent

pytestmark = pytest.mark.slow

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nacceptance {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def solve(config, out):
    t = time.perf_counter()
    code = main(["--threads", "1", "solve", "--config", str(config), "--out", str(out)])
    return code, time.perf_counter() - t


def family(start, fam, step, out):
    return main(["--threads", "1", "continue", "--start", str(start), "--family", fam, "--driver", "sym",
                 "--step", str(step), "--count", "5", "--out", str(out)])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def lawson(work):
    code, seconds = solve(CONFIGS / "lawson_xi21.json", work / "lawson_a.json")
    return code, seconds, work / "lawson_a.json"


@pytest.fixture(scope="module")
def clifford(work):
    code, _ = solve(CONFIGS / "clifford_g1.json", work / "g1.json")
    assert code == 0
    return load_run(work / "g1.json")


@pytest.fixture(scope="module")
def family_one(work, lawson):
    code = family(lawson[2], "I", -0.05, work / "famI")
    return code, sorted((work / "famI").glob("run_*.json"))


@pytest.fixture(scope="module")
def family_two_start(work):
    code, _ = solve(CONFIGS / "familyII_start.json", work / "famII_start.json")
    return code, work / "famII_start.json"


@pytest.fixture(scope="module")
def family_two(work, family_two_start):
    code = family(family_two_start[1], "II", -0.02, work / "famII")
    return code, sorted((work / "famII").glob("run_*.json"))


@pytest.fixture(scope="module")
def lawson_mesh(lawson):
    return build_surface(load_run(lawson[2]), SurfaceConfig(grid=(64, 64), samples=64, threads=1),
                         strict=False)


def test_1_monodromy_oracle(report):
    # one-time kernel compilation (cached on disk afterwards) is timed separately
    t = time.perf_counter()
    transport(CompiledPotential(ZERO), segment(0.0, 1.0))
    compile_s = time.perf_counter() - t
    t = time.perf_counter()
    pot = fuchsian_potential([1.0], [np.diag([1 / 3, -1 / 3])])
    Y = transport(pot, PathSpec(0.0, 1.0, 0.5).path())
    seconds = time.perf_counter() - t
    expect = np.diag([cmath.exp(-2j * math.pi / 3), cmath.exp(2j * math.pi / 3)])
    err = float(np.max(np.abs(Y - expect)))
    report(1, err < 1e-9 and seconds < 1.0,
           f"max entry error {err:.2e}, {seconds:.3f} s (kernel load/compile {compile_s:.2f} s)")


def test_2_trace_and_determinant(report, lawson):
    run = load_run(lawson[2])
    lams = np.exp(2j * math.pi * np.random.default_rng(2).random(20))
    sets = monodromy_sets(run.params, run.series, lams, threads=1)
    tr = max(abs(np.trace(M) + 1) for ms in sets for M in ms.M)
    det = max(abs(np.linalg.det(M) - 1) for ms in sets for M in ms.M)
    report(2, tr < 1e-7 and det < 1e-9, f"max |tr M + 1| {tr:.2e}, max |det M - 1| {det:.2e}")


def test_3_contractible_product(report, lawson):
    run = load_run(lawson[2])
    lams = np.exp(2j * math.pi * np.random.default_rng(3).random(20))
    order = star_order(run.params)
    checked, worst = 0, 0.0
    for lam, ms in zip(lams, monodromy_sets(run.params, run.series, lams, threads=1)):
        if apparency_check(run.params, run.series, lam) < 1e-7:
            checked += 1
            worst = max(worst, float(np.linalg.norm(ordered_product(ms, order) - np.eye(2))))
    report(3, checked > 0 and worst < 1e-6, f"{checked} apparent samples, max |M4M3M2M1 - I| {worst:.2e}")


def test_4_closing_construction(report):
    rng = np.random.default_rng(4)
    w0 = w1 = 0.0
    for _ in range(100):
        th, ph = rng.uniform(0.2, 1.4, 2)
        p = SurfaceParams(2, cmath.exp(-1j * ph), cmath.exp(1j * ph), cmath.exp(1j * th), cmath.exp(-1j * th))
        n = int(rng.integers(0, 11)) + 1
        s = AccessorySeries(rng.uniform(-1, 1, n) + 1j * rng.uniform(-1, 1, n),
                            rng.uniform(-1, 1, n) + 1j * rng.uniform(-1, 1, n))
        B = reconstruct_B(s, p)
        for k, lam in ((1, p.lambda1), (2, p.lambda2)):
            S = sym_target(p, s, k)
            w0 = max(w0, abs(P.polyval(lam, B) - P.polyval(lam, S)))
            w1 = max(w1, abs(P.polyval(lam, P.polyder(B)) - P.polyval(lam, P.polyder(S))))
    report(4, w0 < 1e-12 and w1 < 1e-10, f"max |B - S| {w0:.2e}, max |B' - S'| {w1:.2e}")


def test_5_iwasawa_oracle(report):
    F0, B0 = hand_factors()
    out = iwasawa(upper_unipotent(), tol=1e-10)
    lam = circle_points(16, 0.37)
    hand = max(float(np.max(np.abs(evaluate(out.F, lam) - evaluate(F0, lam)))),
               float(np.max(np.abs(evaluate(out.Bplus, lam) - evaluate(B0, lam)))))
    worst, slowest = 0.0, 0.0
    for seed in range(20):
        phi = elementary(seed, 1 + seed % 3)
        assert phi.hi - phi.lo <= 6
        t = time.perf_counter()
        res = iwasawa(phi, tol=1e-8)
        slowest = max(slowest, time.perf_counter() - t)
        worst = max(worst, res.recon_error, res.unitarity_error, res.holomorphy_error)
    ok = hand < 1e-10 and worst < 1e-8 and slowest < 1.0
    report(5, ok, f"hand factors {hand:.2e}, random loops max error {worst:.2e}, slowest {slowest:.3f} s")


def test_6_unitarizer_oracle(report):
    M = np.array([[0, 2], [-0.5, 0]], dtype=complex)
    u = solve_diagonal([M])
    U = u.conjugate(M)
    dev = float(np.max(np.abs(U.conj().T @ U - np.eye(2))))
    ok = abs(u.rho - 0.5) < 1e-10 and dev < 1e-12 and abs(np.linalg.det(U) - 1) < 1e-12
    report(6, ok, f"rho {u.rho:.17g}, SU(2) deviation {dev:.2e}")


def test_7_lawson_search(report, lawson):
    code, seconds, path = lawson
    run = load_run(path)
    p = run.params
    dense = SampleSet.for_params(p, 16).densified(4)
    reval = F(p, run.series, dense, threads=1, all_six=True).value
    ok = code == 0 and run.N == 6 and run.final_F < 1e-6 and reval < 1e-5 and seconds < 1800
    report(7, ok, f"F {run.final_F:.3e} at N={run.N}, K=16; K={len(dense)} all six traces {reval:.3e}; "
                  f"{seconds:.0f} s")


def test_8_area(report, lawson_mesh, clifford):
    a2 = lawson_mesh.diagnostics["area"]
    g1 = build_surface(clifford, SurfaceConfig(grid=(64, 64), samples=64, threads=1), strict=False)
    a1 = g1.diagnostics["area"]
    e2 = abs(a2 - 21.91) / 21.91
    e1 = abs(a1 - 2 * math.pi ** 2) / (2 * math.pi ** 2)
    report(8, e2 < 0.01 and e1 < 0.005,
           f"xi21 area {a2:.5f} ({100 * e2:.2f}%), g=1 area {a1:.5f} vs 2pi^2 ({100 * e1:.3f}%)")


def _closing_and_H(mesh):
    d = mesh.diagnostics
    target = d["target_mean_curvature"]
    # relative to the target; a minimal target (H = 0) has no scale, so there the error is absolute
    scale = abs(target) if abs(target) > 1e-12 else 1.0
    herr = abs(d["mean_curvature"] - target) / scale
    return d["closing_mismatch"], herr, d["mean_curvature"], target


def test_9_surface_closing(report, lawson_mesh, clifford, family_one, family_two_start):
    cfg64 = SurfaceConfig(grid=(64, 64), samples=64, threads=1)
    cfg48 = SurfaceConfig(grid=(48, 48), samples=64, threads=1)
    meshes = {"xi21": lawson_mesh,
              "g1": build_surface(clifford, cfg64, strict=False),
              "familyI": build_surface(load_run(family_one[1][-1]), cfg48, strict=False),
              "familyII": build_surface(load_run(family_two_start[1]), cfg48, strict=False)}
    parts, ok = [], True
    for name, mesh in meshes.items():
        c, herr, H, target = _closing_and_H(mesh)
        ok &= c < 1e-4 and herr < 0.02
        parts.append(f"{name}: mismatch {c:.1e}, H {H:.4f} vs {target:.4f}")
    report(9, ok, "; ".join(parts))


def test_10_family_invariants(report, family_one, family_two_start, family_two):
    code1, runs1 = family_one
    code2, runs2 = family_two
    recs1 = [json.loads(p.read_text()) for p in runs1]
    recs2 = [json.loads(p.read_text()) for p in runs2]
    u1 = [r["stability"]["unstable_count"] for r in recs1]
    u2 = [r["stability"]["unstable_count"] for r in recs2]
    lam0 = [abs(complex(*r["lambda0"])) for r in recs2]
    start_ok = family_two_start[0] == 0
    ok = (code1 == 0 and len(recs1) == 5 and all(u == 0 for u in u1)
          and start_ok and code2 == 0 and len(recs2) == 5 and all(u == 1 for u in u2)
          and all(x < 1 for x in lam0))
    report(10, ok, f"family I unstable {u1}; family II (search-found start) unstable {u2}, "
                   f"|lambda0| {[round(x, 4) for x in lam0]}")


def test_11_determinism(report, work, lawson):
    code, _ = solve(CONFIGS / "lawson_xi21.json", work / "lawson_b.json")
    a = lawson[2].read_text()
    b = (work / "lawson_b.json").read_text()
    head_a, head_b = a.split('"timestamps"')[0], b.split('"timestamps"')[0]
    ok = code == 0 and head_a == head_b and len(head_a) > 1000
    report(11, ok, f"{len(head_a)} bytes before timestamps, identical: {head_a == head_b}")
