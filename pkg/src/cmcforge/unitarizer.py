"""Unitarizers for monodromy sets: a metric h with M^H h M = h for all generators.

Two solvers share one result type.  The diagonal solver restricts to
h = diag(rho, 1/rho); it applies when the monodromy is written in a basis
adapted to the z -> -z symmetry.  The hermitian solver finds the general
invariant metric and works in any basis (the keyhole base point used by
``monodromy`` is generic, so the surface pipeline uses this one).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .monodromy import MonodromyConfig, MonodromySet, monodromy_sets

ACCEPT = 1e-4
STRICT = 1e-6


class NotUnitarizableError(RuntimeError):
    def __init__(self, msg, index=None, result=None):
        super().__init__(msg)
        self.index = index
        self.result = result


@dataclass(frozen=True, eq=False)
class Unitarizer:
    h: np.ndarray         # hermitian positive, det 1
    D: np.ndarray         # D^H D = h
    residual: float
    threshold: float = ACCEPT

    @property
    def rho(self) -> float:
        return float(self.h[0, 0].real)

    @property
    def ok(self) -> bool:
        return self.residual <= self.threshold

    def conjugate(self, M) -> np.ndarray:
        return self.D @ M @ np.linalg.inv(self.D)


def unitarity_residual(D, Ms) -> float:
    Di = np.linalg.inv(D)
    out = 0.0
    for M in Ms:
        U = D @ M @ Di
        out = max(out, float(np.linalg.norm(U.conj().T @ U - np.eye(2))))
    return out


def _matrices(ms):
    return ms.M if isinstance(ms, MonodromySet) else np.asarray(ms, dtype=complex).reshape(-1, 2, 2)


def solve_diagonal(ms, threshold: float = ACCEPT) -> Unitarizer:
    """rho > 0 minimizing sum_i |M_i^H h M_i - h|_F^2 / (rho^2 + rho^-2).

    With u = rho^2 the objective is (a u^2 + 2 b u + c)/(u^2 + 1), whose
    stationary points solve b u^2 - (a - c) u - b = 0: one positive root.
    """
    Ms = _matrices(ms)
    E1, E2 = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    X = np.array([M.conj().T @ E1 @ M - E1 for M in Ms])
    Y = np.array([M.conj().T @ E2 @ M - E2 for M in Ms])
    a = float(np.sum(np.abs(X) ** 2))
    c = float(np.sum(np.abs(Y) ** 2))
    b = float(np.sum((X.conj() * Y).real))
    if abs(b) > 1e-300:
        u = ((a - c) + math.sqrt((a - c) ** 2 + 4 * b * b)) / (2 * b)
        if u <= 0:
            u = ((a - c) - math.sqrt((a - c) ** 2 + 4 * b * b)) / (2 * b)
    else:
        # objective monotone in u: identity is the only bounded choice unless a == c == 0
        u = 1.0
    rho = math.sqrt(u)
    D = np.diag([math.sqrt(rho), 1 / math.sqrt(rho)]).astype(complex)
    h = np.diag([rho, 1 / rho]).astype(complex)
    return Unitarizer(h, D, unitarity_residual(D, Ms), threshold)


def solve_hermitian(ms, threshold: float = ACCEPT) -> Unitarizer:
    """General invariant metric from the null space of h -> M^H h M - h."""
    Ms = _matrices(ms)
    basis = [np.array([[1, 0], [0, 0]], complex), np.array([[0, 0], [0, 1]], complex),
             np.array([[0, 1], [1, 0]], complex), np.array([[0, 1j], [-1j, 0]], complex)]
    rows = []
    for M in Ms:
        cols = [(M.conj().T @ e @ M - e) for e in basis]
        A = np.array([c.ravel() for c in cols]).T
        rows.append(np.vstack([A.real, A.imag]))
    A = np.vstack(rows)
    _, s, vt = np.linalg.svd(A)
    null = vt[s <= 1e-10 * max(s[0], 1e-300)]
    if len(null) > 1:
        # several invariant forms: take the one of largest det on the unit sphere,
        # det h = x1 x2 - x3^2 - x4^2 in these coordinates
        eta = np.array([[0, 0.5, 0, 0], [0.5, 0, 0, 0], [0, 0, -1, 0], [0, 0, 0, -1]])
        w, V = np.linalg.eigh(null @ eta @ null.T)
        v = V[:, -1] @ null
    else:
        v = vt[-1]
    h = sum(x * e for x, e in zip(v, basis))
    det = np.linalg.det(h).real
    if det <= 0:
        # indefinite invariant form: no unitarizer; report the best positive surrogate
        h = h @ h.conj().T
        det = np.linalg.det(h).real
    h = h / math.sqrt(det)
    if h[0, 0].real < 0:
        h = -h
    h = 0.5 * (h + h.conj().T)
    D = scipy.linalg.sqrtm(h)
    D = 0.5 * (D + D.conj().T)
    return Unitarizer(h, D, unitarity_residual(D, Ms), threshold)


def solve_unitarizer(ms, diagonal: bool = True, threshold: float = ACCEPT) -> Unitarizer:
    return solve_diagonal(ms, threshold) if diagonal else solve_hermitian(ms, threshold)


@dataclass(frozen=True, eq=False)
class UnitarizerField:
    lams: np.ndarray
    items: list
    max_residual: float
    max_log_rho_jump: float


def unitarizer_field(params, series, circle_samples, diagonal: bool = False,
                     threshold: float = ACCEPT, cfg: MonodromyConfig | None = None,
                     threads: int | None = None, strict: bool = True) -> UnitarizerField:
    """One unitarizer per spectral sample; raises naming the first failing sample."""
    lams = np.asarray(circle_samples, dtype=complex)
    for l in lams:
        if min(abs(l - params.lambda1), abs(l - params.lambda2)) < 1e-12:
            raise ValueError("sample coincides with a Sym point")
    sets = monodromy_sets(params, series, lams, cfg, threads)
    items = [solve_unitarizer(ms, diagonal, threshold) for ms in sets]
    res = [u.residual for u in items]
    logs = np.log([max(u.rho, 1e-300) for u in items])
    jump = float(np.max(np.abs(np.diff(logs)))) if len(logs) > 1 else 0.0
    if strict:
        for i, u in enumerate(items):
            if not u.ok:
                raise NotUnitarizableError(
                    f"sample {i} (lambda = {lams[i]:.6g}): residual {u.residual:.3g} > {threshold:.1g}",
                    index=i, result=u)
    return UnitarizerField(lams, items, float(max(res)), jump)
