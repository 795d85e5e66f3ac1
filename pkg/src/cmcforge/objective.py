"""Unitarizability objective: segment penalty, per-sample score, RMS aggregate."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import AccessorySeries, SurfaceParams
from .monodromy import (IntegrationError, MonodromyConfig, MonodromyError, half_trace_vector,
                        keyhole_paths, monodromy_set, resolve_threads)


class ObjectiveError(RuntimeError):
    def __init__(self, index, mu, cause):
        super().__init__(f"sample {index} (mu = {mu:.6g}) failed: {cause}")
        self.index = index
        self.mu = mu


@dataclass(frozen=True, eq=False)
class SampleSet:
    points: np.ndarray
    upper_half_only: bool = False

    @classmethod
    def equally_spaced(cls, K: int, upper_half_only: bool = False, avoid=()) -> "SampleSet":
        """K points offset by half a spacing; nudged by a quarter spacing if one hits ``avoid``."""
        if K < 1:
            raise ValueError("need at least one sample")
        span = math.pi if upper_half_only else 2 * math.pi
        for offset in (0.5, 0.25, 0.75):
            pts = np.exp(1j * span * (np.arange(K) + offset) / K)
            if all(np.min(np.abs(pts - a)) > 1e-9 for a in avoid):
                return cls(pts, upper_half_only)
        raise ValueError("could not place samples away from the Sym points")

    @classmethod
    def for_params(cls, params: SurfaceParams, K: int | None = None) -> "SampleSet":
        half = params.rectangular
        K = K if K is not None else (16 if half else 32)
        return cls.equally_spaced(K, half, avoid=(params.lambda1, params.lambda2))

    def mirrored(self) -> "SampleSet":
        """Full-circle completion of an upper-half set."""
        if not self.upper_half_only:
            return self
        return SampleSet(np.r_[self.points, np.conj(self.points)], False)

    def densified(self, factor: int) -> "SampleSet":
        K = len(self.points) * factor
        return SampleSet.equally_spaced(K, self.upper_half_only)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class ObjectiveReport:
    value: float
    per_sample: np.ndarray
    worst_sample: int
    trace_data: np.ndarray | None = None  # (K, 6) half-traces t12 t13 t14 t23 t24 t34

    def summary(self) -> dict:
        return {"value": self.value, "worst_sample": self.worst_sample,
                "max_F1": float(np.max(self.per_sample)), "K": len(self.per_sample)}


def chi(t) -> float:
    """Squared distance from t to the real segment [-1, 1]."""
    t = complex(t)
    return t.imag ** 2 + max(0.0, abs(t.real) - 1.0) ** 2


def F1_from_traces(ts) -> float:
    return 0.25 * sum(chi(t) for t in ts)


def F1(params: SurfaceParams, series: AccessorySeries, mu: complex,
       cfg: MonodromyConfig | None = None, paths=None) -> float:
    ms = monodromy_set(params, series, mu, cfg, paths)
    return F1_from_traces(half_trace_vector(ms))


_SIX = ((1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4))


def F(params: SurfaceParams, series: AccessorySeries, samples: SampleSet,
      cfg: MonodromyConfig | None = None, threads: int | None = None,
      archive: bool = False, all_six: bool = False) -> ObjectiveReport:
    """RMS over samples of the per-sample score.

    ``all_six`` scores every pair t_ij instead of the four used in the search
    (weights 1/6 instead of 1/4); used for re-validation.
    """
    cfg = cfg or MonodromyConfig()
    paths = keyhole_paths(params, cfg)
    pts = list(samples.points)

    def one(k):
        try:
            ms = monodromy_set(params, series, pts[k], cfg, paths)
        except (IntegrationError, MonodromyError, ZeroDivisionError, FloatingPointError) as exc:
            raise ObjectiveError(k, pts[k], exc) from exc
        six = np.array([ms.t[p] for p in _SIX])
        if all_six:
            val = sum(chi(t) for t in six) / 6.0
        else:
            val = F1_from_traces(half_trace_vector(ms))
        if not math.isfinite(val):
            raise ObjectiveError(k, pts[k], "non-finite half-traces")
        return val, six

    n = resolve_threads(threads)
    if n <= 1 or len(pts) <= 1:
        res = [one(k) for k in range(len(pts))]
    else:
        with ThreadPoolExecutor(min(n, len(pts))) as ex:
            res = list(ex.map(one, range(len(pts))))
    per = np.array([r[0] for r in res])
    value = math.sqrt(float(np.sum(per)) / len(per))
    traces = np.array([r[1] for r in res]) if archive else None
    return ObjectiveReport(value, per, int(np.argmax(per)), traces)


def residuals(params: SurfaceParams, series: AccessorySeries, samples: SampleSet,
              cfg: MonodromyConfig | None = None, threads: int | None = None) -> np.ndarray:
    """Least-squares form of F: a vector whose squared norm is F**2.

    Per sample and half-trace the two entries are Im t and the excess of
    |Re t| over 1, scaled by 1/sqrt(4K).
    """
    cfg = cfg or MonodromyConfig()
    paths = keyhole_paths(params, cfg)
    pts = list(samples.points)
    scale = 1.0 / math.sqrt(4 * len(pts))

    def one(k):
        try:
            ms = monodromy_set(params, series, pts[k], cfg, paths)
        except (IntegrationError, MonodromyError, ZeroDivisionError, FloatingPointError) as exc:
            raise ObjectiveError(k, pts[k], exc) from exc
        out = []
        for t in half_trace_vector(ms):
            out += [t.imag, max(0.0, abs(t.real) - 1.0)]
        return out

    n = resolve_threads(threads)
    if n <= 1 or len(pts) <= 1:
        res = [one(k) for k in range(len(pts))]
    else:
        with ThreadPoolExecutor(min(n, len(pts))) as ex:
            res = list(ex.map(one, range(len(pts))))
    r = np.asarray(res, dtype=float).ravel() * scale
    if not np.all(np.isfinite(r)):
        raise ObjectiveError(int(np.argmax(~np.isfinite(r)) // 8), 0j, "non-finite half-traces")
    return r
