"""Parallel transport of d + eta and monodromy of the DPW potential.

Sign convention (used everywhere in the package): a transport ``Y`` along a
path ``gamma`` solves ``Y'(s) = -eta(gamma(s)) gamma'(s) Y(s)``, ``Y(0) = I``.
Concatenating ``gamma_a`` then ``gamma_b`` multiplies as ``Y_b @ Y_a``.

The integrator is Runge-Kutta-Fehlberg 4(5) with local extrapolation,
compiled with numba.  The same source also runs uncompiled for
potentials given as plain Python callables.
"""
from __future__ import annotations

import cmath
import math
import os
import types
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
from numpy.polynomial import polynomial as P

from .model import AccessorySeries, SurfaceParams, build_closing, reconstruct_B

SEGMENT, ARC = 0, 1
J = np.diag([1j, -1j])

_OK, _UNDERFLOW, _MAXSTEPS, _NONFINITE = 0, 1, 2, 3


class IntegrationError(RuntimeError):
    def __init__(self, msg, position=None):
        super().__init__(msg)
        self.position = position


# ---------------------------------------------------------------------------
# paths

@dataclass(frozen=True, eq=False)
class Path:
    """Piecewise curve: segments ``(a, b)`` and arcs ``(center, start offset, sweep)``."""
    kinds: np.ndarray
    pts: np.ndarray

    @classmethod
    def from_pieces(cls, pieces):
        kinds = np.array([p[0] for p in pieces], dtype=np.int64)
        pts = np.zeros((len(pieces), 3), dtype=complex)
        for i, p in enumerate(pieces):
            pts[i, :len(p) - 1] = p[1:]
        return cls(kinds, pts)

    def __add__(self, other):
        return Path(np.r_[self.kinds, other.kinds], np.r_[self.pts, other.pts])

    def sample(self, n_per_piece: int = 64) -> np.ndarray:
        s = np.linspace(0, 1, n_per_piece)
        out = []
        for k, (p0, p1, p2) in zip(self.kinds, self.pts):
            if k == SEGMENT:
                out.append(p0 + s * (p1 - p0))
            else:
                out.append(p0 + p1 * np.exp(1j * p2.real * s))
        return np.concatenate(out)


def segment(a, b) -> Path:
    return Path.from_pieces([(SEGMENT, complex(a), complex(b))])


def arc(center, radius, theta0, sweep) -> Path:
    return Path.from_pieces([(ARC, complex(center), radius * cmath.exp(1j * theta0), complex(sweep))])


def circle(center, radius, theta0=0.0, orientation=1) -> Path:
    return arc(center, radius, theta0, 2 * math.pi * orientation)


@dataclass(frozen=True)
class PathSpec:
    base_point: complex
    puncture: complex
    approach_radius: float
    orientation: int = 1

    def path(self) -> Path:
        b, p, r = self.base_point, self.puncture, self.approach_radius
        d = b - p
        if abs(d) <= r:
            raise ValueError("base point inside the approach circle")
        theta = cmath.phase(d)
        entry = p + r * d / abs(d)
        return segment(b, entry) + arc(p, r, theta, 2 * math.pi * self.orientation) + segment(entry, b)


def winding_number(path: Path, point: complex) -> int:
    z = path.sample(400) - point
    ang = np.unwrap(np.angle(z))
    return int(round((ang[-1] - ang[0]) / (2 * math.pi)))


# ---------------------------------------------------------------------------
# RKF4(5) kernel

def _gamma_impl(kind, p0, p1, p2, s):
    if kind == 0:
        return p0 + s * (p1 - p0), p1 - p0
    w = p1 * cmath.exp(1j * p2.real * s)
    return p0 + w, 1j * p2.real * w


def _call_eta(eta, z, prm):
    return eta(z, prm)


# The kernel reads _gamma, _eval_eta and _rhs as module globals: the compiled
# route binds them to numba functions (no closures, so the machine code is
# cached on disk), the uncompiled route gets copies bound to Python callables.

def _rhs_impl(eta, prm, kind, p0, p1, p2, s, y11, y12, y21, y22):
    z, dz = _gamma(kind, p0, p1, p2, s)
    a, b, c, d = _eval_eta(eta, z, prm)
    a, b, c, d = -a * dz, -b * dz, -c * dz, -d * dz
    return (a * y11 + b * y21, a * y12 + b * y22, c * y11 + d * y21, c * y12 + d * y22)


def _integrate_impl(eta, prm, kinds, pts, y0, atol, rtol, max_steps):
    """Integrate along every piece; returns (Y, status, piece, s, steps)."""
    y11, y12, y21, y22 = y0[0, 0], y0[0, 1], y0[1, 0], y0[1, 1]
    steps = 0
    h = 0.02
    for ip in range(kinds.shape[0]):
        kind = kinds[ip]
        p0, p1, p2 = pts[ip, 0], pts[ip, 1], pts[ip, 2]
        s = 0.0
        while s < 1.0:
            if h > 1.0 - s:
                h = 1.0 - s
            k1 = _rhs(eta, prm, kind, p0, p1, p2, s, y11, y12, y21, y22)
            u = (y11 + h * 0.25 * k1[0], y12 + h * 0.25 * k1[1],
                 y21 + h * 0.25 * k1[2], y22 + h * 0.25 * k1[3])
            k2 = _rhs(eta, prm, kind, p0, p1, p2, s + 0.25 * h, u[0], u[1], u[2], u[3])
            c1, c2 = 3.0 / 32.0, 9.0 / 32.0
            u = (y11 + h * (c1 * k1[0] + c2 * k2[0]), y12 + h * (c1 * k1[1] + c2 * k2[1]),
                 y21 + h * (c1 * k1[2] + c2 * k2[2]), y22 + h * (c1 * k1[3] + c2 * k2[3]))
            k3 = _rhs(eta, prm, kind, p0, p1, p2, s + 0.375 * h, u[0], u[1], u[2], u[3])
            c1, c2, c3 = 1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0
            u = (y11 + h * (c1 * k1[0] + c2 * k2[0] + c3 * k3[0]),
                 y12 + h * (c1 * k1[1] + c2 * k2[1] + c3 * k3[1]),
                 y21 + h * (c1 * k1[2] + c2 * k2[2] + c3 * k3[2]),
                 y22 + h * (c1 * k1[3] + c2 * k2[3] + c3 * k3[3]))
            k4 = _rhs(eta, prm, kind, p0, p1, p2, s + 12.0 / 13.0 * h, u[0], u[1], u[2], u[3])
            c1, c2, c3, c4 = 439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0
            u = (y11 + h * (c1 * k1[0] + c2 * k2[0] + c3 * k3[0] + c4 * k4[0]),
                 y12 + h * (c1 * k1[1] + c2 * k2[1] + c3 * k3[1] + c4 * k4[1]),
                 y21 + h * (c1 * k1[2] + c2 * k2[2] + c3 * k3[2] + c4 * k4[2]),
                 y22 + h * (c1 * k1[3] + c2 * k2[3] + c3 * k3[3] + c4 * k4[3]))
            k5 = _rhs(eta, prm, kind, p0, p1, p2, s + h, u[0], u[1], u[2], u[3])
            c1, c2, c3, c4, c5 = -8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0
            u = (y11 + h * (c1 * k1[0] + c2 * k2[0] + c3 * k3[0] + c4 * k4[0] + c5 * k5[0]),
                 y12 + h * (c1 * k1[1] + c2 * k2[1] + c3 * k3[1] + c4 * k4[1] + c5 * k5[1]),
                 y21 + h * (c1 * k1[2] + c2 * k2[2] + c3 * k3[2] + c4 * k4[2] + c5 * k5[2]),
                 y22 + h * (c1 * k1[3] + c2 * k2[3] + c3 * k3[3] + c4 * k4[3] + c5 * k5[3]))
            k6 = _rhs(eta, prm, kind, p0, p1, p2, s + 0.5 * h, u[0], u[1], u[2], u[3])
            # fifth-order solution and embedded error estimate
            b1, b3, b4, b5, b6 = 16.0 / 135.0, 6656.0 / 12825.0, 28561.0 / 56430.0, -9.0 / 50.0, 2.0 / 55.0
            e1, e3, e4, e5, e6 = 1.0 / 360.0, -128.0 / 4275.0, -2197.0 / 75240.0, 1.0 / 50.0, 2.0 / 55.0
            n11 = y11 + h * (b1 * k1[0] + b3 * k3[0] + b4 * k4[0] + b5 * k5[0] + b6 * k6[0])
            n12 = y12 + h * (b1 * k1[1] + b3 * k3[1] + b4 * k4[1] + b5 * k5[1] + b6 * k6[1])
            n21 = y21 + h * (b1 * k1[2] + b3 * k3[2] + b4 * k4[2] + b5 * k5[2] + b6 * k6[2])
            n22 = y22 + h * (b1 * k1[3] + b3 * k3[3] + b4 * k4[3] + b5 * k5[3] + b6 * k6[3])
            err = 0.0
            for j in range(4):
                ej = h * (e1 * k1[j] + e3 * k3[j] + e4 * k4[j] + e5 * k5[j] + e6 * k6[j])
                if j == 0:
                    yo, yn = y11, n11
                elif j == 1:
                    yo, yn = y12, n12
                elif j == 2:
                    yo, yn = y21, n21
                else:
                    yo, yn = y22, n22
                sc = atol + rtol * max(abs(yo), abs(yn))
                r = max(abs(ej.real), abs(ej.imag)) / sc
                if r > err:
                    err = r
            steps += 1
            if not math.isfinite(err):
                return (np.array([[y11, y12], [y21, y22]]), _NONFINITE, ip, s, steps)
            if err <= 1.0:
                s += h
                y11, y12, y21, y22 = n11, n12, n21, n22
            if err == 0.0:
                fac = 4.0
            else:
                fac = min(4.0, max(0.1, 0.9 * err ** -0.2))
            h = h * fac
            if h < 1e-13:
                return (np.array([[y11, y12], [y21, y22]]), _UNDERFLOW, ip, s, steps)
            if steps > max_steps:
                return (np.array([[y11, y12], [y21, y22]]), _MAXSTEPS, ip, s, steps)
    return (np.array([[y11, y12], [y21, y22]]), _OK, kinds.shape[0], 1.0, steps)


@numba.njit(cache=True)
def dpw_eta(z, prm):
    """Genus-g Lawson-symmetric DPW potential; prm = [g, z0^2, z1^2, A, B, lambda]."""
    g = prm[0].real
    z0s, z1s, A, B, lam = prm[1], prm[2], prm[3], prm[4], prm[5]
    zz = z * z
    den = (zz - z0s) * (zz - z1s)
    d = -(g / (g + 1.0)) * z * (2.0 * zz - z0s - z1s) / den + A / z
    ur = 1.0 / lam - (A + 2.0 / (g + 1.0)) * (A + (1.0 - g) / (1.0 + g)) / B * zz
    ll = B / den - lam * A * (A + 1.0) * z0s * z1s / (zz * den)
    return d, ur, ll, -d


@numba.njit(cache=True)
def fuchsian_eta(z, prm):
    """sum_k R_k/(z - p_k); prm = [n, p_1, r11_1, r12_1, r21_1, r22_1, ...]."""
    n = int(prm[0].real)
    a = 0j
    b = 0j
    c = 0j
    d = 0j
    for k in range(n):
        o = 1 + 5 * k
        w = 1.0 / (z - prm[o])
        a += prm[o + 1] * w
        b += prm[o + 2] * w
        c += prm[o + 3] * w
        d += prm[o + 4] * w
    return a, b, c, d


@numba.njit(cache=True)
def zero_eta(z, prm):
    return 0j, 0j, 0j, 0j


DPW, FUCHSIAN, ZERO = 0, 1, 2
_ETAS = {DPW: dpw_eta, FUCHSIAN: fuchsian_eta, ZERO: zero_eta}


@numba.njit(cache=True)
def _eta_by_id(which, z, prm):
    # integer dispatch keeps every kernel argument a plain type, so compiled code is cached on disk
    if which == DPW:
        return dpw_eta(z, prm)
    if which == FUCHSIAN:
        return fuchsian_eta(z, prm)
    return zero_eta(z, prm)


def _rebind(fn, **names):
    g = dict(fn.__globals__)
    g.update(names)
    return types.FunctionType(fn.__code__, g, fn.__name__)


_integrate_py = _rebind(_integrate_impl,
                        _rhs=_rebind(_rhs_impl, _gamma=_gamma_impl, _eval_eta=_call_eta))
_gamma = numba.njit(cache=True)(_gamma_impl)
_eval_eta = _eta_by_id
_rhs = numba.njit(cache=True)(_rhs_impl)
integrate_path = numba.njit(nogil=True, cache=True)(_integrate_impl)


@numba.njit(nogil=True, cache=True)
def _transport_tree(eta, prm, z, parent, y_root, atol, rtol, max_steps):
    """Y at every node of a tree of straight edges; ``parent[i] < i`` (``-1`` for the root)."""
    n = z.shape[0]
    Y = np.zeros((n, 2, 2), dtype=np.complex128)
    kinds = np.zeros(1, dtype=np.int64)
    pts = np.zeros((1, 3), dtype=np.complex128)
    for i in range(n):
        p = parent[i]
        if p < 0:
            Y[i] = y_root
            continue
        pts[0, 0] = z[p]
        pts[0, 1] = z[i]
        y, status, piece, s, steps = integrate_path(eta, prm, kinds, pts, Y[p], atol, rtol, max_steps)
        if status != 0:
            return Y, status, i
        Y[i] = y
    return Y, 0, n


@dataclass(frozen=True, eq=False)
class CompiledPotential:
    """One of the compiled potentials (DPW, FUCHSIAN, ZERO) with its parameters."""
    which: int
    prm: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=complex))

    def __post_init__(self):
        if self.which not in _ETAS:
            raise ValueError(f"unknown compiled potential {self.which!r}")

    @property
    def func(self):
        return _ETAS[self.which]

    def __call__(self, z):
        return np.array(self.func(complex(z), self.prm)).reshape(2, 2)


def fuchsian_potential(poles, residues) -> CompiledPotential:
    prm = [len(poles)]
    for p, r in zip(poles, residues):
        r = np.asarray(r, dtype=complex)
        prm += [p, r[0, 0], r[0, 1], r[1, 0], r[1, 1]]
    return CompiledPotential(FUCHSIAN, np.array(prm, dtype=complex))


def dpw_potential(params: SurfaceParams, A_val, B_val, lam) -> CompiledPotential:
    prm = np.array([params.genus, params.z0 ** 2, params.z1 ** 2, A_val, B_val, lam], dtype=complex)
    return CompiledPotential(DPW, prm)


_STATUS = {_UNDERFLOW: "step size underflow", _MAXSTEPS: "step budget exhausted",
           _NONFINITE: "non-finite solution"}


def transport(potential, path: Path, abs_tol: float = 1e-12, rel_tol: float = 1e-12,
              y0=None, max_steps: int = 2_000_000) -> np.ndarray:
    """Fundamental solution of d + eta along ``path`` (see module docstring)."""
    y0 = np.eye(2, dtype=complex) if y0 is None else np.asarray(y0, dtype=complex)
    if isinstance(potential, CompiledPotential):
        out = integrate_path(potential.which, potential.prm, path.kinds, path.pts, y0,
                             abs_tol, rel_tol, max_steps)
    else:
        def eta(z, prm):
            m = np.asarray(potential(z))
            return m[0, 0], m[0, 1], m[1, 0], m[1, 1]
        out = _integrate_py(eta, None, path.kinds, path.pts, y0, abs_tol, rel_tol, max_steps)
    Y, status, piece, s, _ = out
    if status != _OK:
        pos = _path_position(path, int(piece), float(s))
        raise IntegrationError(f"{_STATUS[int(status)]} at z = {pos:.6g} (piece {piece}, s = {s:.6g})",
                               position=pos)
    return Y


def transport_tree(potential: CompiledPotential, z, parent, y_root=None, abs_tol: float = 1e-12,
                   rel_tol: float = 1e-12, max_steps: int = 2_000_000) -> np.ndarray:
    """Transport to every node of a tree of straight edges (node i reached from parent[i])."""
    z = np.ascontiguousarray(z, dtype=complex)
    parent = np.ascontiguousarray(parent, dtype=np.int64)
    if np.any(parent >= np.arange(len(z))):
        raise ValueError("parent indices must precede their children")
    y_root = np.eye(2, dtype=complex) if y_root is None else np.asarray(y_root, dtype=complex)
    Y, status, node = _transport_tree(potential.which, potential.prm, z, parent, y_root,
                                      abs_tol, rel_tol, max_steps)
    if status != _OK:
        raise IntegrationError(f"{_STATUS[int(status)]} on the edge to node {node} (z = {z[node]:.6g})",
                               position=complex(z[node]))
    return Y


def _path_position(path, piece, s):
    if piece >= len(path.kinds):
        return complex(path.pts[-1, 1])
    z, _ = _gamma_impl(path.kinds[piece], *path.pts[piece], s)
    return complex(z)


# ---------------------------------------------------------------------------
# monodromy of the DPW potential

@dataclass(frozen=True)
class MonodromyConfig:
    abs_tol: float = 1e-12
    rel_tol: float = 1e-12
    base_point: complex | None = None
    approach_radius: float | None = None


def default_geometry(params: SurfaceParams, cfg: MonodromyConfig | None = None):
    cfg = cfg or MonodromyConfig()
    pts = [0j, *params.punctures]
    dmin = min(abs(a - b) for i, a in enumerate(pts) for b in pts[i + 1:])
    r = cfg.approach_radius if cfg.approach_radius is not None else 0.3 * dmin
    if cfg.base_point is not None:
        b = complex(cfg.base_point)
    else:
        b = 0.45 * min(abs(params.z0), abs(params.z1)) * cmath.exp(1j * math.pi / 8)
        for sgn in (1, -1, 1j, -1j):
            if min(abs(b * sgn - p) for p in params.punctures) > 1.5 * r:
                b = b * sgn
                break
    return b, r


def keyhole_paths(params: SurfaceParams, cfg: MonodromyConfig | None = None) -> list[Path]:
    """Counterclockwise keyholes around z0, z1, -z0, -z1 from the common base point."""
    b, r = default_geometry(params, cfg)
    paths = []
    for p in params.punctures:
        path = PathSpec(b, p, r).path()
        pts = path.sample(200)
        for q in params.punctures:
            if q != p and np.min(np.abs(pts - q)) < r / 2:
                raise ValueError(f"keyhole around {p} passes within {r / 2:.3g} of puncture {q}")
        paths.append(path)
    return paths


def star_order(params: SurfaceParams, cfg: MonodromyConfig | None = None) -> list[int]:
    """Puncture indices sorted counterclockwise by argument seen from the base point."""
    b, _ = default_geometry(params, cfg)
    ang = [cmath.phase(p - b) for p in params.punctures]
    return list(np.argsort(ang))


def half_traces(M) -> dict:
    return {(i + 1, j + 1): 0.5 * np.trace(M[i] @ M[j]) for i in range(4) for j in range(i + 1, 4)}


@dataclass(frozen=True, eq=False)
class MonodromySet:
    lam: complex
    M: np.ndarray  # (4, 2, 2)
    t: dict

    @classmethod
    def from_matrices(cls, lam, M):
        M = np.asarray(M, dtype=complex)
        return cls(complex(lam), M, half_traces(M))


class MonodromyError(ValueError):
    pass


def B_value(params, series, lam, closing=None) -> complex:
    return complex(P.polyval(lam, reconstruct_B(series, params, closing)))


def monodromy_set(params: SurfaceParams, series: AccessorySeries, lam: complex,
                  cfg: MonodromyConfig | None = None, paths=None) -> MonodromySet:
    cfg = cfg or MonodromyConfig()
    lam = complex(lam)
    if lam == 0:
        raise MonodromyError("lambda = 0")
    A = complex(series.A(lam))
    B = B_value(params, series, lam)
    if abs(B) < 1e-300:
        raise MonodromyError(f"B({lam}) = 0: potential undefined")
    pot = dpw_potential(params, A, B, lam)
    paths = paths if paths is not None else keyhole_paths(params, cfg)
    M = [transport(pot, p, cfg.abs_tol, cfg.rel_tol) for p in paths]
    return MonodromySet.from_matrices(lam, M)


def monodromy_sets(params, series, lams, cfg=None, threads: int | None = None) -> list[MonodromySet]:
    """Monodromy at several spectral values; independent, run on a thread pool."""
    cfg = cfg or MonodromyConfig()
    paths = keyhole_paths(params, cfg)
    lams = [complex(l) for l in lams]
    threads = resolve_threads(threads)
    if threads <= 1 or len(lams) <= 1:
        return [monodromy_set(params, series, l, cfg, paths) for l in lams]
    with ThreadPoolExecutor(threads) as ex:
        return list(ex.map(lambda l: monodromy_set(params, series, l, cfg, paths), lams))


def resolve_threads(threads: int | None = None) -> int:
    if threads:
        return int(threads)
    env = os.environ.get("CMCFORGE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def apparency_check(params: SurfaceParams, series: AccessorySeries, lam: complex,
                    cfg: MonodromyConfig | None = None, radius: float | None = None) -> float:
    """Frobenius deviation from I of the local monodromy around z = 0."""
    cfg = cfg or MonodromyConfig()
    if radius is None:
        radius = 0.5 * min(abs(params.z0), abs(params.z1))
    A = complex(series.A(lam))
    B = B_value(params, series, lam)
    Y = transport(dpw_potential(params, A, B, lam), circle(0, radius), cfg.abs_tol, cfg.rel_tol)
    return float(np.linalg.norm(Y - np.eye(2)))


def half_trace_vector(ms: MonodromySet):
    t = ms.t
    return (t[1, 2], t[1, 3], t[2, 3], t[2, 4])


def ordered_product(ms: MonodromySet, order) -> np.ndarray:
    """Product over keyholes traversed in ``order`` (first index acts first)."""
    out = np.eye(2, dtype=complex)
    for i in order:
        out = ms.M[i] @ out
    return out
