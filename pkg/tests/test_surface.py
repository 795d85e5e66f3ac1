import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmcforge.surface import (ClosingError, DiskPoles, SurfaceConfig, SurfaceMesh, _quad_faces, area,
                              build_surface, conformality_defect, disk_poles, export, import_mesh,
                              inverse_stereographic, matrix_quaternion, mean_curvature_estimate,
                              quaternion_matrix, stereographic, su2_deviation, symmetry_group, to_su2,
                              triangle_areas)

unit4 = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda v: np.linalg.norm(v) > 0.1)


def grid_mesh(fn, u, v):
    U, V = np.meshgrid(u, v, indexing="ij")
    x = fn(U, V)
    faces = _quad_faces(len(u), len(v), 0)
    return SurfaceMesh(x.reshape(-1, 4), faces, np.zeros(x.shape[0] * x.shape[1], dtype=np.int64),
                       shapes=[(len(u), len(v))], coords=[(u, v)])


def sphere(a):
    """Geodesic sphere of radius a about (1, 0, 0, 0)."""
    def fn(t, p):
        return np.stack([np.full_like(t, math.cos(a)), math.sin(a) * np.sin(t) * np.cos(p),
                         math.sin(a) * np.sin(t) * np.sin(p), math.sin(a) * np.cos(t)], axis=-1)
    return fn


def clifford(u, v):
    return np.stack([np.cos(u), np.sin(u), np.cos(v), np.sin(v)], axis=-1) / math.sqrt(2)


@given(unit4)
def test_quaternion_round_trip(v):
    x = np.array(v) / np.linalg.norm(v)
    X = quaternion_matrix(x)
    assert su2_deviation(X) < 1e-12
    assert np.allclose(matrix_quaternion(X), x)
    assert np.allclose(to_su2(2.5 * X), X)


@settings(deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), unit4)
def test_stereographic_round_trip(p, pole):
    p = np.array(p)
    x = inverse_stereographic(p, pole)
    assert abs(np.linalg.norm(x) - 1) < 1e-12
    assert np.allclose(stereographic(x[None], pole)[0], p, atol=1e-9 * (1 + p @ p))


def test_projection_pole_rejected():
    with pytest.raises(ValueError):
        stereographic(np.array([[-1.0, 0, 0, 0]]))


def test_symmetry_group_closure():
    w = np.diag([np.exp(1j * math.pi / 3), np.exp(-1j * math.pi / 3)])
    # (w^3, w^3) = (-1, -1) acts trivially; (w^3, 1) is the antipodal map
    assert len(symmetry_group([(w, w)])) == 3
    assert len(symmetry_group([(w, np.eye(2, dtype=complex))])) == 6
    irr = np.diag([np.exp(1j), np.exp(-1j)])
    with pytest.raises(ClosingError):
        symmetry_group([(irr, np.eye(2, dtype=complex))], max_size=20)


def test_octant_area():
    e = np.eye(4)
    assert triangle_areas(e[0], e[1], e[2]) == pytest.approx(math.pi / 2, rel=1e-12)


def test_sphere_area_and_mean_curvature():
    a = 0.7
    m = grid_mesh(sphere(a), np.linspace(0.3, 2.8, 161), np.linspace(0.0, 2.0, 161))
    exact = math.sin(a) ** 2 * 2.0 * (math.cos(0.3) - math.cos(2.8))
    assert area(m) == pytest.approx(exact, rel=1e-3)
    H = mean_curvature_estimate(m)
    assert abs(abs(H) - 1 / math.tan(a)) < 1e-3
    assert mean_curvature_estimate(m, orientation=1.0) == pytest.approx(-H, rel=1e-9)


def test_clifford_torus_is_minimal_and_conformal():
    u = np.linspace(0, 2 * math.pi, 121)
    m = grid_mesh(clifford, u, u)
    assert area(m) == pytest.approx(2 * math.pi ** 2, rel=1e-3)
    assert abs(mean_curvature_estimate(m)) < 1e-6
    assert conformality_defect(m) < 1e-10


def test_disk_poles_conjugation():
    poles = DiskPoles((0.3,), 0.0)
    lam = np.exp(1j * np.linspace(0, 6, 7))
    assert np.allclose(np.abs(poles.blaschke(lam)), 1.0)
    Y = np.broadcast_to(np.array([[1, 2], [3, 4]], complex), (7, 2, 2))
    Z = poles.conjugate(Y, lam)
    b = poles.blaschke(lam)
    assert np.allclose(Z[:, 0, 1], 2 * b) and np.allclose(Z[:, 1, 0], 3 / b)
    assert np.allclose(np.linalg.det(Z), np.linalg.det(Y))
    assert DiskPoles((), 0.0).conjugate(Y, lam) is Y


def test_disk_poles_of_fixtures(lawson_run, familyII_run):
    assert disk_poles(lawson_run.params, lawson_run.series).points == ()
    pts = disk_poles(familyII_run.params, familyII_run.series).points
    assert len(pts) == 1 and abs(pts[0] - familyII_run.lambda0) < 1e-4


@pytest.fixture(scope="module")
def lawson_mesh(lawson_run):
    return build_surface(lawson_run, SurfaceConfig(grid=(16, 16), samples=32, threads=1))


def test_lawson_surface_small_grid(lawson_mesh):
    d = lawson_mesh.diagnostics
    assert d["copies"] == 6 and d["closed"]
    assert d["closing_mismatch"] < 1e-4
    assert d["su2_deviation"] < 1e-6
    assert d["area"] == pytest.approx(21.91, rel=0.02)
    assert abs(d["mean_curvature"]) < 0.02


@pytest.mark.parametrize("fmt", ["obj", "ply"])
def test_export_round_trip(lawson_mesh, tmp_path, fmt):
    stereographic(lawson_mesh)
    path = tmp_path / f"mesh.{fmt}"
    export(lawson_mesh, fmt, path)
    P, faces, pid = import_mesh(path)
    assert np.array_equal(P, lawson_mesh.projected)
    assert np.array_equal(faces, lawson_mesh.faces)
    assert np.array_equal(pid, lawson_mesh.piece_id)


def test_export_rejects_unknown_format(lawson_mesh, tmp_path):
    with pytest.raises(ValueError):
        export(lawson_mesh, "stl", tmp_path / "x.stl")
