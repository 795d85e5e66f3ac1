"""Loop-group Iwasawa factorization Phi = F @ Bplus via spectral factorization.

The Gram loop G = Phi^H Phi is factored as G = Bplus^H Bplus with Bplus
holomorphic in the disk, using the Cholesky factor of the block-Toeplitz
coefficient matrix of G: its last block row converges to the coefficients
of the factor.  Bplus(0) is normalized upper triangular with positive
diagonal, which makes the factorization unique.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loopalg import (LaurentLoop, circle_adjoint, circle_points, evaluate, from_circle_samples,
                      multiply)


class IwasawaError(RuntimeError):
    def __init__(self, msg, factors=None):
        super().__init__(msg)
        self.factors = factors


@dataclass(frozen=True, eq=False)
class IwasawaFactors:
    F: LaurentLoop
    Bplus: LaurentLoop
    recon_error: float
    unitarity_error: float
    holomorphy_error: float


def gram_loop(phi: LaurentLoop) -> LaurentLoop:
    return multiply(circle_adjoint(phi), phi)


def _normalize_constant(coeffs: np.ndarray) -> np.ndarray:
    """Left-multiply by the unitary making coefficient 0 upper triangular, positive diagonal."""
    q, r = np.linalg.qr(coeffs[0])
    ph = np.diag(r) / np.abs(np.diag(r))
    q = q * ph  # absorb phases so diag(r) > 0
    return np.einsum("ij,kjl->kil", q.conj().T, coeffs)


def _toeplitz_row(G: LaurentLoop, n: int, width: int) -> np.ndarray:
    d = max(G.hi, -G.lo, 0)
    T = np.zeros((2 * n, 2 * n), dtype=complex)
    for m in range(-d, d + 1):
        blk = G.coeff(m).T
        for i in range(max(0, m), min(n, n + m)):
            j = i - m
            T[2 * i:2 * i + 2, 2 * j:2 * j + 2] = blk
    L = np.linalg.cholesky(T)
    row = L[-2:, :]
    out = np.zeros((width, 2, 2), dtype=complex)
    for k in range(min(width, n)):
        out[k] = row[:, 2 * (n - 1 - k):2 * (n - k)].T
    return _normalize_constant(out)


def spectral_factor(G: LaurentLoop, tol: float = 1e-10, order: int | None = None,
                    width: int | None = None, max_order: int = 4096) -> LaurentLoop:
    """Bplus with G = Bplus^H Bplus on the unit circle."""
    d = max(G.hi, -G.lo, 0)
    if len(G) == 0:
        raise IwasawaError("zero Gram loop")
    herm = np.max(np.abs(G.window(-d, d) - np.conj(np.swapaxes(G.window(-d, d)[::-1], 1, 2))))
    if herm > 1e-8 * max(1.0, np.max(np.abs(G.coeffs))):
        raise IwasawaError(f"Gram loop is not self-adjoint (defect {herm:.3g})")
    width = width if width is not None else max(2 * d, 1) + 1
    n = order if order is not None else max(4 * d, 4, width)
    try:
        prev = _toeplitz_row(G, n, width)
        while True:
            n2 = 2 * n
            if n2 > max_order:
                raise IwasawaError(f"Toeplitz boundary row did not stabilize up to order {n}; "
                                   "increase max_order")
            cur = _toeplitz_row(G, n2, width)
            if np.max(np.abs(cur - prev)) < tol:
                return LaurentLoop(0, cur)
            prev, n = cur, n2
    except np.linalg.LinAlgError as exc:
        raise IwasawaError("Gram loop is not positive definite") from exc


def iwasawa(phi: LaurentLoop, tol: float = 1e-8, n_samples: int | None = None) -> IwasawaFactors:
    """Factor phi = F @ Bplus; F unitary on the circle, Bplus in the positive loop group.

    For a Laurent polynomial phi with powers lo..hi the positive factor is a
    polynomial of degree hi - lo (matrix Fejer-Riesz), so F has powers in
    lo..2*hi - lo.
    """
    d = max(phi.hi - phi.lo, 0)
    lo, hi = phi.lo, phi.hi + d
    n = n_samples or max(64, 4 * (hi - lo + d + 1))
    lam = circle_points(n)
    ph = evaluate(phi, lam)
    det = np.linalg.det(ph)
    if np.max(np.abs(det - 1)) > max(tol, 1e-8):
        raise IwasawaError(f"det(phi) deviates from 1 by {np.max(np.abs(det - 1)):.3g}")
    Bp = spectral_factor(gram_loop(phi), tol=min(tol, 1e-10), width=d + 1)
    bs = evaluate(Bp, lam)
    F, _ = from_circle_samples(ph @ np.linalg.inv(bs), lo, hi)
    F = _trim(F, 1e-14)
    fv = evaluate(F, lam)
    fh = np.conj(np.swapaxes(fv, 1, 2))
    unit = float(np.max(np.linalg.norm(fh @ fv - np.eye(2), axis=(1, 2))))
    recon = float(np.max(np.linalg.norm(ph - fv @ bs, axis=(1, 2))))
    # negative powers of F^H phi should vanish
    back, _ = from_circle_samples(fh @ ph, -(n // 2) + 1, n // 2)
    neg = back.window(back.lo, -1) if back.lo < 0 else np.zeros((0, 2, 2))
    holo = float(np.max(np.abs(neg))) if neg.size else 0.0
    out = IwasawaFactors(F, Bp, recon, unit, holo)
    if max(recon, unit, holo) > tol:
        raise IwasawaError(f"Iwasawa errors above tolerance: recon {recon:.3g}, unitarity {unit:.3g}, "
                           f"holomorphy {holo:.3g}", out)
    return out


def _trim(loop: LaurentLoop, eps: float) -> LaurentLoop:
    if len(loop) == 0:
        return loop
    big = np.flatnonzero(np.max(np.abs(loop.coeffs), axis=(1, 2)) > eps)
    if big.size == 0:
        return LaurentLoop(0, np.zeros((0, 2, 2)))
    return LaurentLoop(loop.lo + int(big[0]), loop.coeffs[big[0]:big[-1] + 1])


def wilson_factor(G: np.ndarray, tol: float = 1e-12, max_iter: int = 60, X0: np.ndarray | None = None):
    """Spectral factor from samples of G at the N-th roots of unity (Newton iteration).

    G has shape (..., N, 2, 2); leading axes are independent loops.  Each step
    solves the linearized equation X^H dX + dX^H X = G - X^H X by taking the
    causal part (half weight on the constant term) of X^-H G X^-1 - I.
    Returns samples of X, normalized so that its constant coefficient is upper
    triangular with positive diagonal, and the final defect.
    """
    G = np.asarray(G, dtype=complex)
    N = G.shape[-3]
    if X0 is None:
        c = np.linalg.cholesky(np.mean(G, axis=-3))
        X = np.broadcast_to(np.conj(np.swapaxes(c, -1, -2))[..., None, :, :], G.shape).copy()
    else:
        X = np.array(X0, dtype=complex)
    half = np.zeros(N)
    half[0] = 0.5
    half[1:(N + 1) // 2] = 1.0
    half = half[:, None, None]
    I = np.eye(2)
    defect = np.inf
    for _ in range(max_iter):
        Xi = np.linalg.inv(X)
        E = np.conj(np.swapaxes(Xi, -1, -2)) @ G @ Xi - I
        defect = float(np.max(np.abs(E)))
        if not np.isfinite(defect):
            raise IwasawaError("spectral factor iteration diverged")
        if defect < tol:
            break
        P = np.fft.ifft(np.fft.fft(E, axis=-3) * half, axis=-3)
        X = (I + P) @ X
    else:
        if defect > 1e3 * tol:
            raise IwasawaError(f"spectral factor iteration did not converge (defect {defect:.3g})")
    c0 = np.mean(X, axis=-3)
    q, r = np.linalg.qr(c0)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    q = q * (d / np.abs(d))[..., None, :]
    return np.conj(np.swapaxes(q, -1, -2))[..., None, :, :] @ X, defect


def iwasawa_samples(phi: np.ndarray, tol: float = 1e-11, X0: np.ndarray | None = None):
    """Iwasawa factors of loops given by samples at the N-th roots of unity.

    phi has shape (..., N, 2, 2).  Returns samples of F and Bplus.  N must
    resolve the Gram loop, i.e. exceed twice the frame's Laurent width.
    """
    G = np.conj(np.swapaxes(phi, -1, -2)) @ phi
    X, _ = wilson_factor(G, tol=tol, X0=X0)
    return phi @ np.linalg.inv(X), X
