"""Surface configuration, accessory series and the Lawson-symmetric DPW potential.

Polynomials in the spectral parameter are plain coefficient arrays in
ascending order (numpy.polynomial.polynomial convention).
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class SurfaceParams:
    genus: int
    z0: complex
    z1: complex
    lambda1: complex
    lambda2: complex
    rectangular: bool = False
    even_lambda: bool = False

    def __post_init__(self):
        for name in ("z0", "z1", "lambda1", "lambda2"):
            object.__setattr__(self, name, complex(getattr(self, name)))
        if int(self.genus) < 1:
            raise ModelError("genus must be >= 1")
        object.__setattr__(self, "genus", int(self.genus))
        z0, z1 = self.z0, self.z1
        if z0 == 0 or z1 == 0 or abs(z0 * z0 - z1 * z1) < 1e-14:
            raise ModelError("branch points must be nonzero with z0^2 != z1^2")
        if abs(abs(self.lambda1) - 1) > 1e-12 or abs(abs(self.lambda2) - 1) > 1e-12:
            raise ModelError("Sym points must be unimodular")
        if abs(self.lambda1 - self.lambda2) < 1e-14:
            raise ModelError("Sym points must differ")
        if self.rectangular:
            ok = (abs(self.lambda2 - self.lambda1.conjugate()) < 1e-12
                  and abs(z1 - z0.conjugate()) < 1e-12 and abs(abs(z0) - 1) < 1e-12)
            if not ok:
                raise ModelError("rectangular requires lambda2 = conj(lambda1), z1 = conj(z0), |z0| = 1")

    @property
    def punctures(self) -> tuple[complex, complex, complex, complex]:
        return (self.z0, self.z1, -self.z0, -self.z1)

    @property
    def sheets(self) -> int:
        return self.genus + 1

    def replace(self, **kw) -> "SurfaceParams":
        d = dict(genus=self.genus, z0=self.z0, z1=self.z1, lambda1=self.lambda1,
                 lambda2=self.lambda2, rectangular=self.rectangular,
                 even_lambda=self.even_lambda)
        d.update(kw)
        return SurfaceParams(**d)


def lawson_params(genus: int = 2) -> SurfaceParams:
    """Rectangular, even-parity configuration of the Lawson surface xi_{g,1}.

    Branch points ``exp(-+i*pi/4)`` (cross-ratio 2, same Riemann surface as
    z0 = 1, z1 = i) and Sym points ``+-i`` (minimal, H = 0).
    """
    w = cmath.exp(-0.25j * math.pi)
    return SurfaceParams(genus, w, w.conjugate(), 1j, -1j, rectangular=True, even_lambda=True)


@dataclass(frozen=True, eq=False)
class AccessorySeries:
    a: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=complex)).copy()
        c = np.atleast_1d(np.asarray(self.c, dtype=complex)).copy()
        if a.shape != c.shape:
            raise ModelError("A and C must share the truncation order")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "c", c)

    @property
    def N(self) -> int:
        return len(self.a) - 1

    def padded(self, N: int) -> "AccessorySeries":
        if N < self.N:
            raise ModelError("cannot pad to a lower order")
        pad = np.zeros(N - self.N, dtype=complex)
        return AccessorySeries(np.r_[self.a, pad], np.r_[self.c, pad])

    def A(self, lam):
        return P.polyval(lam, self.a)

    def C(self, lam):
        return P.polyval(lam, self.c)

    @classmethod
    def zeros(cls, N: int) -> "AccessorySeries":
        return cls(np.zeros(N + 1), np.zeros(N + 1))


@dataclass(frozen=True, eq=False)
class ClosingPolynomials:
    f: np.ndarray
    h: np.ndarray = field(repr=False)


def _free_indices(N: int, even: bool) -> np.ndarray:
    return np.arange(0, N + 1, 2) if even else np.arange(N + 1)


def n_free(N: int, params: SurfaceParams) -> int:
    k = len(_free_indices(N, params.even_lambda))
    return 2 * k * (1 if params.rectangular else 2)


def series_to_vector(series: AccessorySeries, params: SurfaceParams) -> np.ndarray:
    """Real search variables for a series, honoring reality/parity flags."""
    idx = _free_indices(series.N, params.even_lambda)
    parts = []
    for coef in (series.a, series.c):
        parts.append(coef[idx].real)
        if not params.rectangular:
            parts.append(coef[idx].imag)
    return np.concatenate(parts)


def vector_to_series(x, N: int, params: SurfaceParams) -> AccessorySeries:
    x = np.asarray(x, dtype=float)
    idx = _free_indices(N, params.even_lambda)
    k = len(idx)
    per = k if params.rectangular else 2 * k
    if x.shape != (2 * per,):
        raise ModelError(f"expected {2 * per} variables, got {x.shape}")
    out = []
    for block in (x[:per], x[per:]):
        coef = np.zeros(N + 1, dtype=complex)
        coef[idx] = block[:k]
        if not params.rectangular:
            coef[idx] += 1j * block[k:]
        out.append(coef)
    return AccessorySeries(*out)


def eval_potential(params: SurfaceParams, A_val, B_val, z, lam) -> np.ndarray:
    """dz-coefficient of the genus-g DPW potential (traceless 2x2)."""
    g = params.genus
    z, A, B, lam = complex(z), complex(A_val), complex(B_val), complex(lam)
    z0s, z1s = params.z0 ** 2, params.z1 ** 2
    if B == 0:
        raise ModelError("B vanishes: potential undefined")
    if lam == 0:
        raise ModelError("lambda = 0")
    den = (z * z - z0s) * (z * z - z1s)
    if z == 0 or den == 0:
        raise ModelError(f"z = {z} is a pole of the potential")
    d = -(g / (g + 1)) * z * (2 * z * z - z0s - z1s) / den + A / z
    ur = 1 / lam - (A + 2 / (g + 1)) * (A + (1 - g) / (1 + g)) / B * z * z
    ll = B / den - lam * A * (A + 1) * z0s * z1s / (z * z * den)
    return np.array([[d, ur], [ll, -d]])


def build_closing(params: SurfaceParams) -> ClosingPolynomials:
    """Hermite interpolant f (deg <= 3) and h with double roots at the Sym points."""
    l1, l2 = params.lambda1, params.lambda2
    if abs(l1 - l2) < 1e-14:
        raise ModelError("coincident Sym points: singular interpolation")
    z0s, z1s = params.z0 ** 2, params.z1 ** 2
    rows = []
    for lam in (l1, l2):
        rows.append([1, lam, lam ** 2, lam ** 3])
        rows.append([0, 1, 2 * lam, 3 * lam ** 2])
    rhs = [z0s * l1, z0s, z1s * l2, z1s]
    f = np.linalg.solve(np.array(rows, dtype=complex), np.array(rhs, dtype=complex))
    h = P.polyfromroots([l1, l1, l2, l2])
    return ClosingPolynomials(f, h.astype(complex))


def rtilde(params: SurfaceParams, a_coeffs) -> np.ndarray:
    """Coefficients of A(A + (1-g)/(1+g))."""
    g = params.genus
    a = np.asarray(a_coeffs, dtype=complex)
    return P.polymul(a, P.polyadd(a, [(1 - g) / (1 + g)]))


def reconstruct_B(series: AccessorySeries, params: SurfaceParams,
                  closing: ClosingPolynomials | None = None) -> np.ndarray:
    cp = closing if closing is not None else build_closing(params)
    return P.polyadd(P.polymul(cp.f, rtilde(params, series.a)), P.polymul(cp.h, series.c))


def sym_target(params: SurfaceParams, series: AccessorySeries, k: int) -> np.ndarray:
    """S_k = z^2 * lambda * Rtilde as coefficients; k = 1 pairs with z0, k = 2 with z1."""
    zs = params.z0 ** 2 if k == 1 else params.z1 ** 2
    return P.polymul([0, zs], rtilde(params, series.a))


def mean_curvature(params: SurfaceParams) -> float:
    l1, l2 = params.lambda1, params.lambda2
    if l1 == l2:
        raise ZeroDivisionError("coincident Sym points")
    H = 1j * (l1 + l2) / (l1 - l2)
    if abs(H.imag) > 1e-12 * max(1.0, abs(H)):
        raise ModelError(f"mean curvature not real: {H}")
    return H.real


def conformal_type(params: SurfaceParams) -> complex:
    """Cross-ratio of (z0, z1, -z0, -z1)."""
    z0, z1 = params.z0, params.z1
    pts = (z0, z1, -z0, -z1)
    for i in range(4):
        for j in range(i + 1, 4):
            if abs(pts[i] - pts[j]) < 1e-14:
                raise ModelError("coincident punctures")
    return (2 * z0) * (2 * z1) / ((z0 - z1) * (z1 - z0))
