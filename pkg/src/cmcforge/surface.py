"""Surface reconstruction: holomorphic frames on a z-grid, Iwasawa, Sym-point product.

Pipeline
--------
1. Spectral gauge.  At M circle samples the monodromy is unitarized by the
   invariant metric h(lam).  h blows up like 1/|lam - lam_k| at the Sym
   points, but H = w h with w = |lam - lam_1| |lam - lam_2| is smooth.  The
   initial value of the frame is the upper triangular factor C of H with
   det C = q = (lam - lam_1)(lam - lam_2)/lam, a smooth loop.
2. Frames.  Phi = C Y^-1 where Y is the transport from the base point.  The
   two zeros of det Phi on the circle are removed by elementary factors on
   the right, (I - P_k) + (lam - lam_k) P_k with P_k projecting onto the
   kernel of Phi(lam_k), and the left factor diag(1, lam) restores det = 1.
   Both operations change the immersion only by an ambient isometry.
3. Iwasawa per grid point, F evaluated at the Sym points, f = F(l1) F(l2)^-1.

The z-domain is a half plane containing z0 and one of +-z1, cut into polar
patches whose corners sit on the punctures.  z -> -z and the monodromy
around z0 generate the remaining copies.

Quaternions: [[a, b], [-conj(b), conj(a)]] <-> (Re a, Im a, Re b, Im b).
"""
from __future__ import annotations

import cmath
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .iwasawa import wilson_factor
from .loopalg import LaurentLoop
from .analysis import roots_in_disk
from .model import AccessorySeries, SurfaceParams, mean_curvature, reconstruct_B
from .monodromy import (J, MonodromyConfig, B_value, arc, default_geometry, dpw_potential,
                        monodromy_sets, resolve_threads, transport, transport_tree)
from .unitarizer import ACCEPT, NotUnitarizableError, solve_hermitian


class SurfaceError(RuntimeError):
    pass


class ClosingError(SurfaceError):
    """Copies of the fundamental piece do not fit together."""

    def __init__(self, msg, mesh=None):
        super().__init__(msg)
        self.mesh = mesh


@dataclass(frozen=True)
class SurfaceConfig:
    grid: tuple = (48, 48)          # nodes across the half plane: (angular, radial)
    samples: int = 64               # circle samples of the spectral parameter
    grading: float = 3.0            # polynomial grading toward punctures
    inner_radius: float = 0.005     # excised disk around z = 0, relative to min |z_k|
    outer_radius: float = 200.0     # excised disk around infinity, relative to max |z_k|
    corner_offset: float = 1e-6     # corner nodes sit this far (relative) off the puncture
    abs_tol: float = 1e-11
    rel_tol: float = 1e-11
    iwasawa_tol: float = 1e-9        # defect floor of the Gram factorization is ~1e-9
    unitarizer_threshold: float = ACCEPT
    closing_threshold: float = 1e-4
    check_paths: bool = True
    threads: int | None = None


# ---------------------------------------------------------------------------
# sampled loops on a rotated circle

def sample_points(M: int, avoid) -> tuple[np.ndarray, complex]:
    """M points omega * exp(2 pi i j/M), rotated away from the points in ``avoid``."""
    base = np.exp(2j * math.pi * np.arange(M) / M)
    best, best_om = -1.0, 1.0 + 0j
    for frac in (0.5, 0.25, 0.75, 0.125, 0.375, 0.625, 0.875):
        om = cmath.exp(2j * math.pi * frac / M)
        d = min(float(np.min(np.abs(om * base - a))) for a in avoid)
        if d > best:
            best, best_om = d, om
        if d > 0.4 * math.pi / M:
            break
    return best_om * base, best_om


def coefficients(samples: np.ndarray, omega: complex = 1.0):
    """Laurent coefficients from samples at omega * (M-th roots of unity).

    samples has shape (..., M, 2, 2).  Returns (powers, coefficients) with
    powers in fft order, from -(M/2) + 1 to M/2.
    """
    M = samples.shape[-3]
    c = np.fft.fft(samples, axis=-3) / M
    k = np.fft.fftfreq(M, 1.0 / M).astype(int)
    k[k == -(M // 2)] = M // 2
    c = c * (complex(omega) ** (-k.astype(float)))[:, None, None]
    return k, c


def evaluate_coefficients(k, c, lam):
    """Value at one point lam of the loops given by (k, c); shape (..., 2, 2)."""
    return np.einsum("...kij,k->...ij", c, complex(lam) ** k.astype(float))


def resample(k, c, N: int):
    """Samples at the N-th roots of unity (N >= number of coefficients)."""
    lam = np.exp(2j * math.pi * np.arange(N) / N)
    V = lam[:, None] ** k[None, :].astype(float)
    return np.einsum("nk,...kij->...nij", V, c)


def tail(k, c) -> float:
    """Largest coefficient in the outer eighth of the window relative to the largest overall."""
    mag = np.max(np.abs(c), axis=(-1, -2))
    top = float(np.max(mag))
    edge = np.abs(k) >= (len(k) // 2) * 7 // 8
    return float(np.max(mag[..., edge]) / top) if top > 0 else 0.0


def _to_loop(k, c) -> LaurentLoop:
    order = np.argsort(k)
    return LaurentLoop(int(k[order[0]]), c[order])


# ---------------------------------------------------------------------------
# spectral gauge

@dataclass(frozen=True, eq=False)
class SpectralGauge:
    lams: np.ndarray              # rotated circle samples
    omega: complex
    C: np.ndarray                 # (M, 2, 2) initial values of the frame
    kernels: tuple                # kernel directions of C at lambda_1, lambda_2
    monodromy: np.ndarray         # (M, 4, 2, 2)
    unitarizer_residual: float
    metric_tail: float


@dataclass(frozen=True)
class DiskPoles:
    """Zeros of B in the unit disk at which the upper right entry of the potential has a pole.

    There B and A(A + 1) vanish together, so conjugating by diag(1, b) with
    the Blaschke product b of these points gives a potential holomorphic in
    the disk; ``residual`` is the largest leftover factor that was treated
    as zero (a removable zero of B or a vanishing A(A + 1)).
    """
    points: tuple
    residual: float

    def blaschke(self, lam):
        lam = np.asarray(lam, dtype=complex)
        b = np.ones_like(lam)
        for a in self.points:
            b = b * (lam - a) / (1 - np.conj(a) * lam)
        return b

    def conjugate(self, Y, lam):
        """diag(1, b)^-1 Y diag(1, b) with b taken at ``lam`` (broadcast over the leading axes of Y)."""
        if not self.points:
            return Y
        b = self.blaschke(lam)
        Y = np.array(Y, dtype=complex)
        Y[..., 0, 1] *= b
        Y[..., 1, 0] /= b
        return Y


def disk_poles(params: SurfaceParams, series: AccessorySeries, tol: float = 1e-2) -> DiskPoles:
    """Classify the zeros of B in the unit disk.

    At a zero the numerator (A + 2/(g+1))(A + (1-g)/(1+g)) of the upper right
    entry either vanishes (removable, nothing to do) or A(A + 1) vanishes (a
    pole removable by a diagonal conjugation); whichever is smaller decides.
    """
    g = params.genus
    B = reconstruct_B(series, params)
    points, residual = [], 0.0
    try:
        zeros = roots_in_disk(B)
    except ValueError as exc:
        raise SurfaceError("B vanishes identically") from exc
    for zero in zeros:
        lam = zero.location
        A = complex(series.A(lam))
        num = abs((A + 2 / (g + 1)) * (A + (1 - g) / (1 + g)))
        low = abs(A * (A + 1))
        if min(num, low) > tol:
            raise SurfaceError(f"potential has a pole at lambda = {lam:.6g} in the unit disk "
                               f"(numerator {num:.3g}, A(A+1) {low:.3g})")
        if low < num:
            if zero.multiplicity != 1:
                raise SurfaceError(f"zero of B at lambda = {lam:.6g} has multiplicity {zero.multiplicity}")
            if abs(lam) < 1e-8:
                raise SurfaceError("pole at lambda = 0 cannot be gauged away")
            points.append(complex(lam))
        residual = max(residual, min(num, low))
    return DiskPoles(tuple(points), residual)


def spectral_gauge(params: SurfaceParams, series: AccessorySeries, M: int = 64,
                   cfg: MonodromyConfig | None = None, threads: int | None = None,
                   threshold: float = ACCEPT, poles: DiskPoles | None = None) -> SpectralGauge:
    l1, l2 = params.lambda1, params.lambda2
    lams, om = sample_points(M, (l1, l2))
    sets = monodromy_sets(params, series, lams, cfg, threads)
    Ms = np.array([ms.M for ms in sets])
    if poles is not None:
        Ms = poles.conjugate(Ms, lams[:, None])
    us = [solve_hermitian(m, threshold) for m in Ms]
    for j, u in enumerate(us):
        if not u.ok:
            raise NotUnitarizableError(
                f"sample {j} (lambda = {lams[j]:.6g}): residual {u.residual:.3g}", index=j, result=u)
    w = np.abs(lams - l1) * np.abs(lams - l2)
    H = np.array([u.h for u in us]) * w[:, None, None]
    k, Hc = coefficients(H, om)
    a = H[:, 0, 0].real
    b = H[:, 0, 1]
    q = (lams - l1) * (lams - l2) / lams
    C = np.zeros((M, 2, 2), dtype=complex)
    C[:, 0, 0] = np.sqrt(a)
    C[:, 0, 1] = b / np.sqrt(a)
    C[:, 1, 1] = q / np.sqrt(a)
    kernels = []
    for lk in (l1, l2):
        Hk = evaluate_coefficients(k, Hc, lk)
        kernels.append(np.array([-Hk[0, 1] / Hk[0, 0].real, 1.0], dtype=complex))
    return SpectralGauge(lams, om, C, tuple(kernels), Ms, max(u.residual for u in us), tail(k, Hc))


def _projector(v):
    return np.einsum("...i,...j->...ij", v, v.conj()) / np.sum(np.abs(v) ** 2, axis=-1)[..., None, None]


def dressed_frames(gauge: SpectralGauge, Y: np.ndarray, Ysym: np.ndarray, params: SurfaceParams):
    """det-1 frames from transports.

    Y: (..., M, 2, 2) transports at the circle samples; Ysym: (..., 2, 2, 2)
    transports at lambda_1 and lambda_2.
    """
    l1, l2 = params.lambda1, params.lambda2
    lams = gauge.lams
    phi = gauge.C @ np.linalg.inv(Y)
    v1 = np.einsum("...ij,j->...i", Ysym[..., 0, :, :], gauge.kernels[0])
    v2 = np.einsum("...ij,j->...i", Ysym[..., 1, :, :], gauge.kernels[1])
    P1 = _projector(v1)
    # the kernel at lambda_2 is moved by the factor removing lambda_1
    R1 = np.eye(2) + (l2 - l1 - 1.0) * P1
    P2 = _projector(np.einsum("...ij,...j->...i", R1, v2))
    for Pk, lk in ((P1, l1), (P2, l2)):
        Pk = Pk[..., None, :, :]
        phi = phi @ (np.eye(2) - Pk) + (phi @ Pk) / (lams - lk)[:, None, None]
    phi[..., 1, :] *= lams[:, None]
    return phi


def symmetry_pair(gauge: SpectralGauge, U: np.ndarray, params: SurfaceParams):
    """Isometry (A, B), x -> A x B^-1, induced by Y -> Y U on the transports.

    U has shape (M, 2, 2).  Returns the pair and the SU(2) deviation before
    projection.
    """
    S = gauge.C @ U @ np.linalg.inv(gauge.C)
    S[:, 0, 1] /= gauge.lams
    S[:, 1, 0] *= gauge.lams
    k, c = coefficients(S, gauge.omega)
    A = evaluate_coefficients(k, c, params.lambda1)
    B = evaluate_coefficients(k, c, params.lambda2)
    dev = max(su2_deviation(A), su2_deviation(B))
    return (to_su2(A), to_su2(B)), dev


def su2_deviation(X) -> float:
    X = np.asarray(X)
    return float(np.max(np.abs(np.conj(np.swapaxes(X, -1, -2)) @ X - np.eye(2))))


def to_su2(X):
    """Nearest SU(2) matrix, from the quaternion part of X."""
    a = 0.5 * (X[..., 0, 0] + np.conj(X[..., 1, 1]))
    b = 0.5 * (X[..., 0, 1] - np.conj(X[..., 1, 0]))
    n = np.sqrt(np.abs(a) ** 2 + np.abs(b) ** 2)
    return quaternion_matrix(np.stack([a.real, a.imag, b.real, b.imag], axis=-1) / n[..., None])


def quaternion_matrix(x):
    x = np.asarray(x, dtype=float)
    a = x[..., 0] + 1j * x[..., 1]
    b = x[..., 2] + 1j * x[..., 3]
    out = np.empty(x.shape[:-1] + (2, 2), dtype=complex)
    out[..., 0, 0] = a
    out[..., 0, 1] = b
    out[..., 1, 0] = -np.conj(b)
    out[..., 1, 1] = np.conj(a)
    return out


def matrix_quaternion(X):
    X = np.asarray(X)
    return np.stack([X[..., 0, 0].real, X[..., 0, 0].imag, X[..., 0, 1].real, X[..., 0, 1].imag], axis=-1)


# ---------------------------------------------------------------------------
# grid over a half plane

def _graded(n: int, lo: float, hi: float, at_lo: bool, at_hi: bool, p: float) -> np.ndarray:
    u = np.linspace(0.0, 1.0, n + 1)
    if at_lo and at_hi:
        t = u ** p / (u ** p + (1 - u) ** p)
    elif at_hi:
        t = 1 - (1 - u) ** p
    elif at_lo:
        t = u ** p
    else:
        t = u
    return lo + (hi - lo) * t


def _radius(phi):
    return np.tan(np.asarray(phi) / 2)


def _polar(r):
    return 2 * np.arctan(r)


@dataclass(eq=False)
class Patch:
    theta: np.ndarray                  # column angles
    phi: np.ndarray                    # row sphere angles, r = tan(phi/2)
    z: np.ndarray                      # (rows, cols)
    hole_sides: tuple                  # sides on the excised disks around 0 / infinity
    moved: tuple = ()                  # corners moved off punctures


def _split(n, lengths):
    """Cells per interval: a floor of n/6 each (at least 2), the rest proportional to length."""
    lengths = np.asarray(lengths, dtype=float)
    base = max(2, n // 6)
    extra = max(0, n - base * len(lengths))
    return base + np.round(extra * lengths / lengths.sum()).astype(int)


def fundamental_patches(params: SurfaceParams, config: SurfaceConfig) -> list[Patch]:
    """Polar patches over a half plane; every puncture inside it is a patch corner."""
    W, Hn = config.grid
    if W < 6 or Hn < 4:
        raise ValueError("grid must be at least 6x4")
    z0 = params.z0
    z1 = params.z1 if abs(cmath.phase(params.z1 / z0)) <= math.pi / 2 else -params.z1
    th0 = cmath.phase(z0)
    th1 = th0 + cmath.phase(z1 / z0)
    ta, tb = sorted((th0, th1))
    alpha = 0.5 * (ta + tb) - math.pi / 2
    rmin = config.inner_radius * min(abs(z0), abs(z1))
    rmax = config.outer_radius * max(abs(z0), abs(z1))
    radii = sorted({abs(z0), abs(z1)})
    if len(radii) == 2 and radii[1] - radii[0] < 1e-12:
        radii = radii[:1]
    tcuts = [alpha, ta, tb, alpha + math.pi]
    pcuts = [float(_polar(rmin)), *[float(_polar(r)) for r in radii], float(_polar(rmax))]
    tn = _split(W, np.diff(tcuts))
    pn = _split(Hn, np.diff(pcuts))
    punct = [complex(p) for p in params.punctures]
    patches = []
    last = len(pcuts) - 2
    for i in range(len(pcuts) - 1):
        phis = _graded(int(pn[i]), pcuts[i], pcuts[i + 1], i > 0, i < last, config.grading)
        for j in range(3):
            ths = _graded(int(tn[j]), tcuts[j], tcuts[j + 1], j > 0, j < 2, config.grading)
            z = _radius(phis)[:, None] * np.exp(1j * ths)[None, :]
            holes = tuple(s for s, cond in (("bottom", i == 0), ("top", i == last)) if cond)
            moved = _move_corners(z, punct, config.corner_offset)
            patches.append(Patch(ths, phis, z, holes, moved))
    return patches


def _move_corners(z, punct, offset):
    rows, cols = z.shape
    moved = []
    for i, j in ((0, 0), (0, cols - 1), (rows - 1, 0), (rows - 1, cols - 1)):
        zc = z[i, j]
        for pz in punct:
            if abs(zc - pz) < 1e-9 * max(1.0, abs(pz)):
                ii = 1 if i == 0 else rows - 2
                jj = 1 if j == 0 else cols - 2
                d = z[ii, jj] - zc
                z[i, j] = zc + offset * abs(pz) * d / abs(d)
                moved.append((i, j))
    return tuple(moved)


def transport_tree_layout(patches, base: complex, order: str = "rows", step: float = 0.05):
    """Tree of straight edges through every grid point, rooted at the base point.

    Each patch is entered by an arc at the base radius and a radial chain along
    its middle column.  Inside a patch the middle column is the spine and rows
    (``order="rows"``) or columns (``order="columns"``) branch off it.
    Returns (nodes, parent, per-patch index arrays).
    """
    z = [complex(base)]
    parent = [-1]
    rb, tb = abs(base), cmath.phase(base)
    indices = []
    for patch in patches:
        rows, cols = patch.z.shape
        jm = cols // 2
        r_patch = _radius(patch.phi)
        im = int(np.argmin(np.abs(np.log(r_patch / rb))))
        tm = float(patch.theta[jm])
        dth = (tm - tb + math.pi) % (2 * math.pi) - math.pi
        prev = 0
        n = max(1, int(math.ceil(abs(dth) / step)))
        for s in range(1, n + 1):
            z.append(rb * cmath.exp(1j * (tb + dth * s / n)))
            parent.append(prev)
            prev = len(z) - 1
        pa, pb = float(_polar(rb)), float(patch.phi[im])
        n = max(1, int(math.ceil(abs(pb - pa) / step)))
        for s in range(1, n):
            z.append(float(_radius(pa + (pb - pa) * s / n)) * cmath.exp(1j * tm))
            parent.append(prev)
            prev = len(z) - 1
        idx = np.full((rows, cols), -1, dtype=np.int64)

        def add(i, j, par):
            z.append(complex(patch.z[i, j]))
            parent.append(par)
            idx[i, j] = len(z) - 1

        add(im, jm, prev)
        if order == "rows":
            for i in list(range(im + 1, rows)) + list(range(im - 1, -1, -1)):
                add(i, jm, idx[i - 1 if i > im else i + 1, jm])
            for i in range(rows):
                for j in range(jm + 1, cols):
                    add(i, j, idx[i, j - 1])
                for j in range(jm - 1, -1, -1):
                    add(i, j, idx[i, j + 1])
        elif order == "columns":
            for j in list(range(jm + 1, cols)) + list(range(jm - 1, -1, -1)):
                add(im, j, idx[im, j - 1 if j > jm else j + 1])
            for j in range(cols):
                for i in range(im + 1, rows):
                    add(i, j, idx[i - 1, j])
                for i in range(im - 1, -1, -1):
                    add(i, j, idx[i + 1, j])
        else:
            raise ValueError(f"unknown order {order!r}")
        indices.append(idx)
    return np.array(z, dtype=complex), np.array(parent, dtype=np.int64), indices


# ---------------------------------------------------------------------------
# frames

@dataclass(eq=False)
class FrameGrid:
    params: SurfaceParams
    config: SurfaceConfig
    gauge: SpectralGauge
    patches: list
    base_point: complex
    powers: np.ndarray             # Laurent powers of the frame coefficients (fft order)
    coeffs: np.ndarray             # (n_points, M, 2, 2)
    det_error: float
    tail: float
    path_consistency: float
    base_frame: np.ndarray         # (M, 2, 2) samples of the frame initial value
    symmetries: dict = field(default_factory=dict)
    poles: DiskPoles = DiskPoles((), 0.0)

    @property
    def circle_samples(self) -> np.ndarray:
        return self.gauge.lams

    @property
    def grid(self) -> list[np.ndarray]:
        return [p.z for p in self.patches]

    def frame(self, k: int) -> LaurentLoop:
        return _to_loop(self.powers, self.coeffs[k])

    def slices(self):
        """(start, stop) of each patch in the flattened point arrays."""
        out, s = [], 0
        for p in self.patches:
            out.append((s, s + p.z.size))
            s += p.z.size
        return out


def _potential(params, series, lam):
    lam = complex(lam)
    return dpw_potential(params, complex(series.A(lam)), B_value(params, series, lam), lam)


def _map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def compute_frames(run, config: SurfaceConfig | None = None,
                   cfg: MonodromyConfig | None = None) -> FrameGrid:
    """Holomorphic frames at every grid point of the fundamental half plane.

    ``run`` needs ``params`` and ``series`` attributes.
    """
    config = config or SurfaceConfig()
    params, series = run.params, run.series
    threads = resolve_threads(config.threads)
    poles = disk_poles(params, series)
    gauge = spectral_gauge(params, series, config.samples, cfg, threads, config.unitarizer_threshold, poles)
    base, _ = default_geometry(params, cfg)
    patches = fundamental_patches(params, config)
    z, parent, idx = transport_tree_layout(patches, base, "rows")
    lam_all = np.r_[gauge.lams, params.lambda1, params.lambda2]

    def run_one(lam):
        return transport_tree(_potential(params, series, lam), z, parent, None,
                              config.abs_tol, config.rel_tol)

    Ys = np.array(_map(run_one, list(lam_all), threads))      # (M + 2, nodes, 2, 2)
    Ys = poles.conjugate(Ys, lam_all[:, None])
    flat = np.concatenate([i.ravel() for i in idx])
    M = config.samples
    Y = np.swapaxes(Ys[:M][:, flat], 0, 1)
    Ysym = np.swapaxes(Ys[M:][:, flat], 0, 1)
    phi = dressed_frames(gauge, Y, Ysym, params)
    det_err = float(np.max(np.abs(np.linalg.det(phi) - 1)))
    k, c = coefficients(phi, gauge.omega)

    consistency = 0.0
    if config.check_paths:
        z2, parent2, idx2 = transport_tree_layout(patches, base, "columns")
        flat2 = np.concatenate([i.ravel() for i in idx2])
        for jl in (0, M // 3):
            Y2 = transport_tree(_potential(params, series, gauge.lams[jl]), z2, parent2, None,
                                config.abs_tol, config.rel_tol)[flat2]
            Y2 = poles.conjugate(Y2, gauge.lams[jl])
            Y1 = Y[:, jl]
            scale = np.maximum(1.0, np.max(np.abs(Y1), axis=(1, 2)))
            consistency = max(consistency, float(np.max(np.max(np.abs(Y2 - Y1), axis=(1, 2)) / scale)))

    # generators of the symmetry group, as isometries of S^3
    T, dev_T = symmetry_pair(gauge, np.linalg.inv(gauge.monodromy[:, 0]), params)
    arcp = arc(0.0, abs(base), cmath.phase(base), math.pi)
    Yp = np.array(_map(lambda l: transport(_potential(params, series, l), arcp,
                                           config.abs_tol, config.rel_tol), list(gauge.lams), threads))
    Yp = poles.conjugate(Yp, gauge.lams)
    K, dev_K = symmetry_pair(gauge, np.linalg.inv(Yp) @ J, params)
    syms = {"T": T, "K": K, "deviation": max(dev_T, dev_K)}
    return FrameGrid(params, config, gauge, patches, base, k, c, det_err, tail(k, c),
                     consistency, gauge.C.copy(), syms, poles)


# ---------------------------------------------------------------------------
# immersion

@dataclass(eq=False)
class SurfaceMesh:
    vertices: np.ndarray                 # (n, 4) unit quaternions
    faces: np.ndarray                    # (m, 4) vertex indices
    piece_id: np.ndarray                 # (n,) symmetry copy per vertex
    projected: np.ndarray | None = None  # (n, 3)
    patch_id: np.ndarray | None = None   # (n,) patch of the fundamental piece per vertex
    shapes: list = field(default_factory=list)   # grid shape of each (copy, patch) block
    coords: list = field(default_factory=list)   # (row, column) parameter values of each block
    punctures: tuple = ()                        # z-positions of the branch points
    diagnostics: dict = field(default_factory=dict)

    def blocks(self):
        """Vertex arrays per (copy, patch) block, reshaped to their grids."""
        s = 0
        for shape in self.shapes:
            n = shape[0] * shape[1]
            yield s, self.vertices[s:s + n].reshape(tuple(shape) + (4,))
            s += n


def _quad_faces(rows, cols, offset):
    i, j = np.meshgrid(np.arange(rows - 1), np.arange(cols - 1), indexing="ij")
    a = offset + i * cols + j
    return np.stack([a, a + 1, a + cols + 1, a + cols], axis=-1).reshape(-1, 4)


def immerse(fg: FrameGrid, params: SurfaceParams | None = None, n_samples: int | None = None) -> SurfaceMesh:
    """Fundamental piece: f = F(lambda_1) F(lambda_2)^-1 at every grid point."""
    params = params or fg.params
    M = fg.coeffs.shape[1]
    N = n_samples or 2 * M
    l1, l2 = params.lambda1, params.lambda2
    out = np.empty((fg.coeffs.shape[0], 2, 2), dtype=complex)
    chunk = 512
    defect = 0.0
    for s in range(0, fg.coeffs.shape[0], chunk):
        phi = resample(fg.powers, fg.coeffs[s:s + chunk], N)
        G = np.conj(np.swapaxes(phi, -1, -2)) @ phi
        X, d = wilson_factor(G, tol=fg.config.iwasawa_tol)
        defect = max(defect, d)
        F = phi @ np.linalg.inv(X)
        kf, cf = coefficients(F)
        out[s:s + chunk] = evaluate_coefficients(kf, cf, l1) @ np.linalg.inv(evaluate_coefficients(kf, cf, l2))
    dev = su2_deviation(out)
    verts = matrix_quaternion(to_su2(out))
    faces, patch_id, shapes = [], [], []
    for p, (a, b) in zip(fg.patches, fg.slices()):
        faces.append(_quad_faces(*p.z.shape, a))
        patch_id.append(np.full(b - a, len(shapes)))
        shapes.append(p.z.shape)
    mesh = SurfaceMesh(verts, np.concatenate(faces), np.zeros(len(verts), dtype=np.int64),
                       None, np.concatenate(patch_id), shapes, [(p.phi, p.theta) for p in fg.patches],
                       tuple(params.punctures))
    mesh.diagnostics.update(su2_deviation=dev, iwasawa_defect=defect, frame_tail=fg.tail,
                            det_error=fg.det_error, path_consistency=fg.path_consistency,
                            disk_poles=len(fg.poles.points), disk_pole_residual=fg.poles.residual)
    return mesh


# ---------------------------------------------------------------------------
# symmetry copies

def _same_isometry(a, b, tol):
    d1 = np.max(np.abs(a[0] - b[0])) + np.max(np.abs(a[1] - b[1]))
    d2 = np.max(np.abs(a[0] + b[0])) + np.max(np.abs(a[1] + b[1]))
    return min(d1, d2) < tol


def symmetry_group(generators, max_size: int = 64, tol: float = 1e-5):
    """Closure of a set of isometry pairs (A, B) under composition, identified up to sign."""
    I = np.eye(2, dtype=complex)
    group = [(I, I)]
    frontier = [(I, I)]
    while frontier:
        new = []
        for g in frontier:
            for h in generators:
                c = (h[0] @ g[0], h[1] @ g[1])
                if not any(_same_isometry(c, e, tol) for e in group):
                    group.append(c)
                    new.append(c)
                    if len(group) > max_size:
                        raise ClosingError(f"symmetry group exceeds {max_size} elements")
        frontier = new
    return group


def apply_isometry(pair, x):
    """x -> A x B^-1 on unit quaternions."""
    X = quaternion_matrix(x)
    return matrix_quaternion(pair[0] @ X @ np.linalg.inv(pair[1]))


def _sides(block, hole_sides, moved):
    rows, cols = block.shape[:2]
    out = []
    for name, pts, ends in (("bottom", block[0], ((0, 0), (0, cols - 1))),
                            ("top", block[-1], ((rows - 1, 0), (rows - 1, cols - 1))),
                            ("left", block[:, 0], ((0, 0), (rows - 1, 0))),
                            ("right", block[:, -1], ((0, cols - 1), (rows - 1, cols - 1)))):
        if name in hole_sides:
            continue
        keep = np.ones(len(pts), dtype=bool)
        if ends[0] in moved:
            keep[0] = False
        if ends[1] in moved:
            keep[-1] = False
        out.append((pts, keep))
    return out


def closing_mismatch(mesh: SurfaceMesh, patches) -> float:
    """Largest distance (in R^4) from a block side to the nearest other block side."""
    sides = []
    for b, (_, block) in enumerate(mesh.blocks()):
        p = patches[b % len(patches)]
        for pts, keep in _sides(block, p.hole_sides, p.moved):
            sides.append((pts, keep))
    by_len = {}
    for n, s in enumerate(sides):
        by_len.setdefault(len(s[0]), []).append(n)
    worst = 0.0
    for group in by_len.values():
        P = np.array([sides[n][0] for n in group])
        K = np.array([sides[n][1] for n in group])
        for a in range(len(group)):
            d_fwd = np.linalg.norm(P - P[a][None], axis=-1)
            d_rev = np.linalg.norm(P[:, ::-1] - P[a][None], axis=-1)
            d_fwd = np.where(K[a][None] & K, d_fwd, 0.0).max(axis=1)
            d_rev = np.where(K[a][None] & K[:, ::-1], d_rev, 0.0).max(axis=1)
            d = np.minimum(d_fwd, d_rev)
            d[a] = np.inf
            worst = max(worst, float(d.min()))
    return worst


def mesh_diameter(x, max_points: int = 3000) -> float:
    x = np.asarray(x)
    if len(x) > max_points:
        x = x[np.linspace(0, len(x) - 1, max_points).astype(int)]
    return float(np.max(pdist(x))) if len(x) > 1 else 0.0


def extend_by_symmetry(piece: SurfaceMesh, fg: FrameGrid, params: SurfaceParams | None = None,
                       generators=None, strict: bool = True) -> SurfaceMesh:
    """All copies of the fundamental piece under the group generated by T and K."""
    gens = generators if generators is not None else [fg.symmetries["T"], fg.symmetries["K"]]
    group = symmetry_group(gens)
    n = len(piece.vertices)
    verts, faces, pid, patch_id = [], [], [], []
    for c, g in enumerate(group):
        verts.append(apply_isometry(g, piece.vertices))
        faces.append(piece.faces + c * n)
        pid.append(np.full(n, c, dtype=np.int64))
        patch_id.append(piece.patch_id)
    mesh = SurfaceMesh(np.concatenate(verts), np.concatenate(faces), np.concatenate(pid), None,
                       np.concatenate(patch_id), piece.shapes * len(group), piece.coords * len(group),
                       piece.punctures, dict(piece.diagnostics))
    diam = mesh_diameter(mesh.vertices)
    mismatch = closing_mismatch(mesh, fg.patches) / diam if diam > 0 else 0.0
    mesh.diagnostics.update(copies=len(group), closing_mismatch=mismatch, diameter=diam,
                            generator_deviation=fg.symmetries.get("deviation", 0.0))
    if strict and mismatch > fg.config.closing_threshold:
        raise ClosingError(f"overlap mismatch {mismatch:.3g} of the mesh diameter "
                           f"exceeds {fg.config.closing_threshold:.1g}", mesh)
    return mesh


# ---------------------------------------------------------------------------
# projection

DEFAULT_POLE = np.array([-1.0, 0.0, 0.0, 0.0])


def _pole_rotation(pole):
    pole = np.asarray(pole, dtype=float)
    pole = pole / np.linalg.norm(pole)
    return -np.conj(quaternion_matrix(pole)).T


def stereographic(mesh_or_points, pole=DEFAULT_POLE, clearance: float = 1e-6):
    """Project from ``pole``: rotate it to (-1, 0, 0, 0) by x -> -conj(pole) x, then
    p = (x1, x2, x3) / (1 + x0).  A SurfaceMesh is updated in place; points are mapped."""
    is_mesh = isinstance(mesh_or_points, SurfaceMesh)
    pts = mesh_or_points.vertices if is_mesh else np.asarray(mesh_or_points, dtype=float)
    y = matrix_quaternion(_pole_rotation(pole) @ quaternion_matrix(pts))
    bad = np.flatnonzero(np.atleast_1d(1 + y[..., 0]) < clearance)
    if len(bad):
        raise ValueError(f"{len(bad)} vertices within {clearance:g} of the projection pole: {list(bad[:10])}")
    p = y[..., 1:] / (1 + y[..., :1])
    if is_mesh:
        mesh_or_points.projected = p
        return mesh_or_points
    return p


def inverse_stereographic(p, pole=DEFAULT_POLE):
    p = np.asarray(p, dtype=float)
    s = np.sum(p * p, axis=-1, keepdims=True)
    y = np.concatenate([(1 - s) / (1 + s), 2 * p / (1 + s)], axis=-1)
    return matrix_quaternion(np.linalg.inv(_pole_rotation(pole)) @ quaternion_matrix(y))


def far_pole(vertices, candidates: int = 200, seed: int = 0) -> np.ndarray:
    """A projection pole far from every vertex (largest minimal distance among candidates)."""
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(candidates, 4))
    c = np.r_[[DEFAULT_POLE], c / np.linalg.norm(c, axis=1, keepdims=True)]
    v = np.asarray(vertices)
    v = v[np.linspace(0, len(v) - 1, min(len(v), 4000)).astype(int)]
    dmin = np.min(np.linalg.norm(c[:, None, :] - v[None, :, :], axis=-1), axis=1)
    return c[int(np.argmax(dmin))]


# ---------------------------------------------------------------------------
# measurements

def _chord_to_arc(d):
    return 2 * np.arcsin(np.clip(d / 2, 0.0, 1.0))


def triangle_areas(x, y, z):
    """Spherical excess of geodesic triangles on S^3 (l'Huilier)."""
    a = _chord_to_arc(np.linalg.norm(y - z, axis=-1))
    b = _chord_to_arc(np.linalg.norm(x - z, axis=-1))
    c = _chord_to_arc(np.linalg.norm(x - y, axis=-1))
    s = 0.5 * (a + b + c)
    t = np.tan(s / 2) * np.tan((s - a) / 2) * np.tan((s - b) / 2) * np.tan((s - c) / 2)
    return 4 * np.arctan(np.sqrt(np.clip(t, 0.0, None)))


def face_areas(vertices, faces):
    v = np.asarray(vertices)
    f = np.asarray(faces)
    p0, p1, p2, p3 = (v[f[:, i]] for i in range(4))
    return triangle_areas(p0, p1, p2) + triangle_areas(p0, p2, p3)


def area(mesh: SurfaceMesh) -> float:
    """Intrinsic area in S^3; quads with a repeated vertex are degenerate, skipped and counted."""
    f = np.asarray(mesh.faces)
    degenerate = np.zeros(len(f), dtype=bool)
    for i in range(4):
        for j in range(i + 1, 4):
            degenerate |= np.all(mesh.vertices[f[:, i]] == mesh.vertices[f[:, j]], axis=-1)
    mesh.diagnostics["degenerate_faces"] = int(degenerate.sum())
    return float(np.sum(face_areas(mesh.vertices, f[~degenerate])))


def _normal4(x, u, v):
    """Unit vector orthogonal to x, u, v in R^4 with det(x, u, v, n) > 0."""
    m = np.stack([x, u, v], axis=-2)
    cols = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]
    n = np.stack([(-1) ** (i + 1) * np.linalg.det(m[..., c]) for i, c in enumerate(cols)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def _derivatives(block, coords=None):
    """Second-order partial derivatives along rows and columns (grid parameters if given)."""
    if coords is None:
        return np.gradient(block, axis=0, edge_order=2), np.gradient(block, axis=1, edge_order=2)
    return (np.gradient(block, coords[0], axis=0, edge_order=2),
            np.gradient(block, coords[1], axis=1, edge_order=2))


def block_normals(block, coords=None):
    """Normals on a grid block of unit quaternions, oriented by (row, column) order."""
    u, v = _derivatives(block, coords)
    return _normal4(block, u, v)


# H = i(l1 + l2)/(l1 - l2) is measured against the normal n with det(f, f_x, f_y, n) < 0,
# z = x + iy; the block normals are the opposite orientation.
NORMAL_ORIENTATION = -1.0


def mean_curvature_estimate(mesh: SurfaceMesh, t: float = 1e-3,
                            orientation: float = NORMAL_ORIENTATION) -> float:
    """H from parallel surfaces: area(t) = A0 (1 - 2 H t + O(t^2)) for x_t = cos t x + sin t N.

    Sums over all blocks; N is the block normal times ``orientation``.
    """
    A = {s: 0.0 for s in (-1, 0, 1)}
    for b, (_, block) in enumerate(mesh.blocks()):
        N = orientation * block_normals(block, mesh.coords[b] if mesh.coords else None)
        f = _quad_faces(block.shape[0], block.shape[1], 0)
        for s in (-1, 0, 1):
            x = math.cos(s * t) * block + math.sin(s * t) * N
            A[s] += float(np.sum(face_areas(x.reshape(-1, 4), f)))
    return -(A[1] - A[-1]) / (4 * t * A[0])


def conformality_defect(mesh: SurfaceMesh, clearance: float = 0.05) -> float:
    """Largest |<x_u, x_v>| / |x_u| |x_v| over interior grid vertices.

    Vertices closer to a branch point than ``clearance`` times the smallest
    puncture separation are skipped: there f behaves like a fractional power
    of z - z_k and finite differences in z do not resolve it.
    """
    pz = np.asarray(mesh.punctures, dtype=complex)
    dmin = min((abs(a - b) for i, a in enumerate(pz) for b in pz[i + 1:]), default=1.0)
    worst = 0.0
    for b, (_, block) in enumerate(mesh.blocks()):
        u, v = _derivatives(block, mesh.coords[b] if mesh.coords else None)
        E = np.sum(u * u, axis=-1)
        G = np.sum(v * v, axis=-1)
        Fc = np.sum(u * v, axis=-1)
        ok = (E > 0) & (G > 0)
        ok[0, :] = ok[-1, :] = ok[:, 0] = ok[:, -1] = False
        if mesh.coords and len(pz):
            z = _radius(mesh.coords[b][0])[:, None] * np.exp(1j * mesh.coords[b][1])[None, :]
            near = np.min(np.abs(z[..., None] - pz), axis=-1) < clearance * dmin
            ok &= ~near
        if np.any(ok):
            worst = max(worst, float(np.max(np.abs(Fc[ok]) / np.sqrt(E[ok] * G[ok]))))
    return worst


# ---------------------------------------------------------------------------
# whole pipeline

def build_surface(run, config: SurfaceConfig | None = None, cfg: MonodromyConfig | None = None,
                  strict: bool = True) -> SurfaceMesh:
    """Frames, immersion and symmetry copies, with diagnostics attached to the mesh."""
    fg = compute_frames(run, config, cfg)
    piece = immerse(fg)
    mesh = extend_by_symmetry(piece, fg, strict=False)
    mesh.diagnostics["area"] = area(mesh)
    mesh.diagnostics["mean_curvature"] = mean_curvature_estimate(mesh)
    mesh.diagnostics["target_mean_curvature"] = mean_curvature(fg.params)
    mesh.diagnostics["conformality"] = conformality_defect(mesh)
    mesh.diagnostics["closed"] = mesh.diagnostics["closing_mismatch"] <= fg.config.closing_threshold
    if strict and not mesh.diagnostics["closed"]:
        raise ClosingError(f"overlap mismatch {mesh.diagnostics['closing_mismatch']:.3g} "
                           f"of the mesh diameter", mesh)
    return mesh


# ---------------------------------------------------------------------------
# export

def export(mesh: SurfaceMesh, fmt: str, path) -> None:
    fmt = fmt.lower()
    if fmt not in ("obj", "ply"):
        raise ValueError(f"unknown mesh format {fmt!r}")
    if mesh.projected is None:
        raise ValueError("mesh has no projected points; call stereographic first")
    P = np.asarray(mesh.projected)
    with open(path, "w") as fh:
        if fmt == "obj":
            fh.write("# cmcforge mesh; '#p' lines give the symmetry copy of the preceding vertex\n")
            for p, c in zip(P, mesh.piece_id):
                fh.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n#p {int(c)}\n")
            for f in mesh.faces:
                fh.write("f " + " ".join(str(int(i) + 1) for i in f) + "\n")
        else:
            fh.write("ply\nformat ascii 1.0\ncomment cmcforge mesh\n")
            fh.write(f"element vertex {len(P)}\nproperty double x\nproperty double y\nproperty double z\n"
                     f"property int piece_id\nelement face {len(mesh.faces)}\n"
                     "property list uchar int vertex_indices\nend_header\n")
            for p, c in zip(P, mesh.piece_id):
                fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g} {int(c)}\n")
            for f in mesh.faces:
                fh.write(f"{len(f)} " + " ".join(str(int(i)) for i in f) + "\n")


def import_mesh(path):
    """Read back an exported mesh: (projected points, faces, piece ids)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if lines and lines[0] == "ply":
        nv = nf = start = 0
        for i, ln in enumerate(lines):
            if ln.startswith("element vertex"):
                nv = int(ln.split()[2])
            elif ln.startswith("element face"):
                nf = int(ln.split()[2])
            elif ln == "end_header":
                start = i + 1
                break
        rows = [ln.split() for ln in lines[start:start + nv]]
        P = np.array([[float(x) for x in r[:3]] for r in rows]).reshape(-1, 3)
        pid = np.array([int(r[3]) for r in rows], dtype=np.int64)
        faces = [[int(x) for x in ln.split()[1:]] for ln in lines[start + nv:start + nv + nf]]
        return P, np.array(faces, dtype=np.int64).reshape(-1, 4), pid
    P, faces, pid = [], [], []
    for ln in lines:
        if ln.startswith("v "):
            P.append([float(x) for x in ln.split()[1:4]])
        elif ln.startswith("#p "):
            pid.append(int(ln.split()[1]))
        elif ln.startswith("f "):
            faces.append([int(x.split("/")[0]) - 1 for x in ln.split()[1:]])
    return (np.array(P).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 4),
            np.array(pid, dtype=np.int64))
