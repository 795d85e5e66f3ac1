"""Zeros of B and A + 1 in the unit disk, stability counting and family tables."""
from __future__ import annotations

import cmath
import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

from .model import conformal_type, mean_curvature, reconstruct_B

RESIDUAL_TOL = 1e-8        # |p(root)| relative to the largest coefficient
MULTIPLICITY_TOL = 1e-6
MATCH_TOL = 1e-5


@dataclass(frozen=True)
class Zero:
    location: complex
    multiplicity: int
    residual: float
    low_confidence: bool = False

    def to_dict(self) -> dict:
        return {"location": [self.location.real, self.location.imag],
                "multiplicity": self.multiplicity, "residual": self.residual,
                "low_confidence": self.low_confidence}


def _trim(poly) -> np.ndarray:
    p = np.atleast_1d(np.asarray(poly, dtype=complex))
    scale = float(np.max(np.abs(p))) if p.size else 0.0
    if scale == 0.0:
        raise ValueError("zero polynomial has no isolated roots")
    nz = np.flatnonzero(np.abs(p) > 1e-15 * scale)
    return p[:nz[-1] + 1]


def _multiplicity(p, z, tol) -> int:
    """1 + number of consecutive derivatives (Taylor coefficients) vanishing at z."""
    scale = float(np.max(np.abs(p)))
    d = p.copy()
    m = 0
    k = 0
    while d.size > 1:
        d = P.polyder(d)
        k += 1
        if abs(P.polyval(z, d)) / (math.factorial(k) * scale) < tol:
            m += 1
        else:
            break
    return m + 1


def roots_in_disk(poly, radius: float = 1.0, tol: float = MULTIPLICITY_TOL,
                  cluster: float = 1e-4) -> list[Zero]:
    """Roots with |root| < radius, from companion-matrix eigenvalues.

    Nearby eigenvalues are merged when the derivative test confirms a
    multiple root of the same order; every reported root carries its residual.
    """
    p = _trim(poly)
    if p.size == 1:
        return []
    scale = float(np.max(np.abs(p)))
    roots = list(P.polyroots(p))
    roots.sort(key=lambda r: (round(r.real, 9), round(r.imag, 9)))
    used = [False] * len(roots)
    out = []
    for i, r in enumerate(roots):
        if used[i]:
            continue
        group = [j for j in range(len(roots))
                 if not used[j] and abs(roots[j] - r) < cluster * max(1.0, abs(r))]
        centre = complex(np.mean([roots[j] for j in group]))
        m = _multiplicity(p, centre, tol)
        if m == len(group):
            members = [(centre, m)]
        else:
            group = [i]
            members = [(r, 1)]
        for j in group:
            used[j] = True
        for z, mult in members:
            if abs(z) < radius:
                res = abs(P.polyval(z, p)) / scale
                out.append(Zero(complex(z), int(mult), float(res)))
    return out


@dataclass(frozen=True, eq=False)
class DiskZeroReport:
    zeros_B: list
    zeros_A_plus_1: list
    common_zeros: list            # dicts: location, ord_B, ord_A_plus_1, distance, unstable
    unstable_count: int
    residuals_ok: bool = True
    match_tol: float = MATCH_TOL

    def to_dict(self) -> dict:
        return {
            "zeros_B": [z.to_dict() for z in self.zeros_B],
            "zeros_A_plus_1": [z.to_dict() for z in self.zeros_A_plus_1],
            "common_zeros": [dict(c, location=[c["location"].real, c["location"].imag])
                             for c in self.common_zeros],
            "unstable_count": self.unstable_count,
            "residuals_ok": self.residuals_ok,
            "match_tol": self.match_tol,
        }


def _flag_low_confidence(zeros, coeffs, tail_terms: int = 2):
    """Mark zeros where the last coefficients contribute more than 10% of the local size."""
    c = np.abs(np.asarray(coeffs, dtype=complex))
    nz = np.flatnonzero(c)
    if nz.size == 0:
        return zeros
    last = nz[-tail_terms:]
    out = []
    for z in zeros:
        r = abs(z.location)
        powers = r ** np.arange(len(c))
        local = float(np.sum(c * powers))
        tail = float(np.sum(c[last] * powers[last]))
        out.append(Zero(z.location, z.multiplicity, z.residual, local > 0 and tail > 0.1 * local))
    return out


def classify_stability(run, radius: float = 1.0, match_tol: float = MATCH_TOL) -> DiskZeroReport:
    """Common zeros of B and A + 1 in the disk, unstable when ord B <= ord (A + 1)."""
    params, series = run.params, run.series
    B = reconstruct_B(series, params)
    A1 = np.array(series.a, dtype=complex)
    A1[0] += 1.0
    zB = _flag_low_confidence(roots_in_disk(B, radius), B)
    try:
        zA = _flag_low_confidence(roots_in_disk(A1, radius), A1)
        a_vanishes = False
    except ValueError:
        zA, a_vanishes = [], True           # A == -1 identically: infinite order everywhere
    common = []
    for zb in zB:
        if a_vanishes:
            common.append({"location": zb.location, "ord_B": zb.multiplicity,
                           "ord_A_plus_1": None, "distance": 0.0, "unstable": True,
                           "low_confidence": zb.low_confidence})
            continue
        best = min(zA, key=lambda za: abs(za.location - zb.location), default=None)
        if best is not None and abs(best.location - zb.location) < match_tol:
            common.append({"location": 0.5 * (zb.location + best.location), "ord_B": zb.multiplicity,
                           "ord_A_plus_1": best.multiplicity,
                           "distance": abs(best.location - zb.location),
                           "unstable": zb.multiplicity <= best.multiplicity,
                           "low_confidence": zb.low_confidence or best.low_confidence})
    ok = all(z.residual < RESIDUAL_TOL for z in zB + zA)
    return DiskZeroReport(zB, zA, common, sum(c["unstable"] for c in common), ok, match_tol)


# ---------------------------------------------------------------------------
# family tables

@dataclass(frozen=True, eq=False)
class FamilySummary:
    header: list
    rows: list

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, float) else v) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _driver(params, driver):
    return cmath.phase(params.lambda1) if driver == "sym" else cmath.phase(params.z0)


def family_summary(runs, driver: str = "sym", track_radius: float = 1.5) -> FamilySummary:
    """One row per run, ordered by driver angle; zeros of B tracked by nearest neighbours."""
    if not runs:
        raise ValueError("need at least one run")
    runs = sorted(runs, key=lambda r: _driver(r.params, driver))
    zero_sets = [[z.location for z in roots_in_disk(reconstruct_B(r.series, r.params), track_radius)]
                 for r in runs]
    tracks = []                       # per track: list of locations (None where absent)
    for k, zs in enumerate(zero_sets):
        free = list(zs)
        for tr in tracks:
            last = tr[-1]
            if last is not None and free:
                j = int(np.argmin([abs(z - last) for z in free]))
                tr.append(free.pop(j))
            else:
                tr.append(None)
        for z in free:
            tracks.append([None] * k + [z])
    header = ["driver", "cross_ratio_re", "cross_ratio_im", "H", "final_F", "unstable_count"]
    for t in range(len(tracks)):
        header += [f"zero{t}_re", f"zero{t}_im"]
    rows = []
    for k, r in enumerate(runs):
        cr = conformal_type(r.params)
        row = [_driver(r.params, driver), cr.real, cr.imag, mean_curvature(r.params),
               float(r.final_F), classify_stability(r).unstable_count]
        for tr in tracks:
            z = tr[k]
            row += [None, None] if z is None else [z.real, z.imag]
        rows.append(row)
    return FamilySummary(header, rows)
