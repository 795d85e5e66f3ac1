"""2x2 complex matrix Laurent polynomials in the spectral parameter.

A loop is stored densely as a power window ``lo .. lo+len(coeffs)-1``.
Zero blocks at either end are trimmed on construction (exact zeros only),
so two normalized loops compare equal iff their fields are equal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def circle_points(n: int, offset: float = 0.0) -> np.ndarray:
    """The ``n`` points ``exp(2*pi*i*(j + offset)/n)``."""
    return np.exp(2j * np.pi * (np.arange(n) + offset) / n)


@dataclass(frozen=True, eq=False)
class LaurentLoop:
    lo: int
    coeffs: np.ndarray  # shape (n, 2, 2), complex

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex).reshape(-1, 2, 2)
        nz = np.flatnonzero(np.any(c != 0, axis=(1, 2)))
        lo = int(self.lo)
        if nz.size == 0:
            c, lo = np.zeros((0, 2, 2), dtype=complex), 0
        else:
            lo += int(nz[0])
            c = c[nz[0]:nz[-1] + 1]
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "coeffs", c)

    @property
    def hi(self) -> int:
        return self.lo + len(self.coeffs) - 1

    def __len__(self):
        return len(self.coeffs)

    def __eq__(self, other):
        if not isinstance(other, LaurentLoop):
            return NotImplemented
        return (self.lo == other.lo and self.coeffs.shape == other.coeffs.shape
                and bool(np.all(self.coeffs == other.coeffs)))

    def __hash__(self):
        return hash((self.lo, self.coeffs.tobytes()))

    def __repr__(self):
        return f"LaurentLoop(lo={self.lo}, hi={self.hi})"

    def coeff(self, k: int) -> np.ndarray:
        """Coefficient of ``lambda**k`` (zero outside the window)."""
        i = k - self.lo
        if 0 <= i < len(self.coeffs):
            return self.coeffs[i]
        return np.zeros((2, 2), dtype=complex)

    def window(self, lo: int, hi: int) -> np.ndarray:
        """Coefficients for powers ``lo..hi`` as an array (zero padded)."""
        out = np.zeros((hi - lo + 1, 2, 2), dtype=complex)
        for k in range(max(lo, self.lo), min(hi, self.hi) + 1):
            out[k - lo] = self.coeffs[k - self.lo]
        return out

    def __call__(self, lam):
        return evaluate(self, lam)

    def __matmul__(self, other):
        return multiply(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))


def constant(m) -> LaurentLoop:
    return LaurentLoop(0, np.asarray(m, dtype=complex)[None])


def identity() -> LaurentLoop:
    return constant(np.eye(2))


def monomial(m, power: int) -> LaurentLoop:
    return LaurentLoop(power, np.asarray(m, dtype=complex)[None])


def evaluate(loop: LaurentLoop, lam):
    """Evaluate at a scalar or array of spectral values; returns (..., 2, 2)."""
    lam = np.asarray(lam, dtype=complex)
    if len(loop) == 0:
        return np.zeros(lam.shape + (2, 2), dtype=complex)
    if loop.lo < 0 and np.any(lam == 0):
        raise ZeroDivisionError("Laurent loop with negative powers evaluated at lambda = 0")
    # Horner in lambda, then shift by lambda**lo
    acc = np.zeros(lam.shape + (2, 2), dtype=complex)
    for c in loop.coeffs[::-1]:
        acc = acc * lam[..., None, None] + c
    if loop.lo != 0:
        acc = acc * (lam ** loop.lo)[..., None, None]
    return acc


def multiply(a: LaurentLoop, b: LaurentLoop) -> LaurentLoop:
    if len(a) == 0 or len(b) == 0:
        return LaurentLoop(0, np.zeros((0, 2, 2)))
    out = np.zeros((len(a) + len(b) - 1, 2, 2), dtype=complex)
    for i, ca in enumerate(a.coeffs):
        out[i:i + len(b)] += np.matmul(ca, b.coeffs)
    return LaurentLoop(a.lo + b.lo, out)


def add(a: LaurentLoop, b: LaurentLoop) -> LaurentLoop:
    if len(a) == 0:
        return b
    if len(b) == 0:
        return a
    lo, hi = min(a.lo, b.lo), max(a.hi, b.hi)
    return LaurentLoop(lo, a.window(lo, hi) + b.window(lo, hi))


def scale(a: LaurentLoop, s) -> LaurentLoop:
    return LaurentLoop(a.lo, a.coeffs * s)


def circle_adjoint(a: LaurentLoop) -> LaurentLoop:
    """Coefficientwise adjoint: power k of the result is coeff(-k)^H.

    On the unit circle this is the pointwise conjugate transpose.
    """
    if len(a) == 0:
        return a
    c = np.conj(np.swapaxes(a.coeffs[::-1], 1, 2))
    return LaurentLoop(-a.hi, c)


def sample(loop: LaurentLoop, n: int) -> np.ndarray:
    return evaluate(loop, circle_points(n))


def from_circle_samples(samples, lo: int, hi: int):
    """Fit a loop with powers ``lo..hi`` to samples at ``exp(2*pi*i*j/N)``.

    Returns ``(loop, residual)`` where ``residual`` is the largest spectral
    norm of the misfit at the sample points (nonzero when the samples carry
    harmonics outside the window).
    """
    s = np.asarray(samples, dtype=complex).reshape(-1, 2, 2)
    n = len(s)
    if hi < lo:
        raise ValueError("empty window")
    if hi - lo + 1 > n:
        raise ValueError(f"window [{lo}, {hi}] needs at least {hi - lo + 1} samples, got {n}")
    dft = np.fft.fft(s, axis=0) / n
    idx = np.arange(lo, hi + 1) % n
    loop = LaurentLoop(lo, dft[idx])
    misfit = evaluate(loop, circle_points(n)) - s
    residual = float(np.max(np.linalg.norm(misfit, ord=2, axis=(1, 2)))) if n else 0.0
    return loop, residual
