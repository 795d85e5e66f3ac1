"""Derivative-free search for the accessory coefficients and family continuation.

The search variables are the real coordinates of (a_0..a_N, c_0..c_N) as laid
out by ``model.series_to_vector``; family runs append the free geometric
parameter (and, for family II, a coordinate of the common zero lambda_0).
Every optimizer sees the same budgeted evaluator, which also tracks the best
point seen, so the best value is monotone in the evaluation count whatever
the optimizer does.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.optimize

from numpy.polynomial import polynomial as P

from .model import (AccessorySeries, ModelError, SurfaceParams, build_closing, n_free, reconstruct_B,
                    rtilde, series_to_vector, vector_to_series)
from .monodromy import MonodromyConfig
from .objective import F as objective_F
from .objective import ObjectiveError, SampleSet, residuals

OPTIMIZERS = ("nelder_mead", "praxis", "bobyqa")
FAILED = 1e3      # residual entry / objective value reported for a failed evaluation


@dataclass(frozen=True)
class SearchConfig:
    optimizer: str = "bobyqa"
    max_evals: int = 6000              # total budget of one minimize_surface call
    rung_evals: int = 1500             # budget of one optimizer run
    target_F: float = 1e-6
    N_ladder: tuple = (0, 2, 4, 6)
    penalty_weight: float = 10.0       # family II
    barrier_eps: float = 0.02          # family II: |lambda_0| <= 1 - eps
    restarts: int = 2                  # extra grid starts refined at the first rung
    K: int | None = None               # samples; None -> 16 (upper half) or 32
    seed: int = 0
    grid_a0: tuple = (-1.0, 1.0, 5)
    grid_c0: tuple = (-3.0, 3.0, 7)
    nm_step: float = 0.1
    nm_tol: float = 1e-10
    rhobeg: float = 0.05
    revalidate_factor: int = 4
    revalidate_ratio: float = 10.0     # re-validated F must stay below ratio * target_F
    continuation_target_F: float = 1e-5

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if not self.target_F >= 0:
            raise ValueError("target_F must be non-negative")
        lad = tuple(int(n) for n in self.N_ladder)
        if not lad or any(b <= a for a, b in zip(lad, lad[1:])) or lad[0] < 0:
            raise ValueError("N_ladder must be strictly increasing and non-negative")
        object.__setattr__(self, "N_ladder", lad)
        if self.max_evals < 1:
            raise ValueError("max_evals must be positive")
        if self.penalty_weight < 0:
            raise ValueError("penalty_weight must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("N_ladder", "grid_a0", "grid_c0"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        d = dict(d)
        for k in ("N_ladder", "grid_a0", "grid_c0"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class SolvedRun:
    params: SurfaceParams
    series: AccessorySeries
    final_F: float
    eval_count: int
    converged: bool
    lambda0: complex | None = None
    revalidated_F: float | None = None
    penalty: float | None = None
    message: str = ""
    history: tuple = ()                # (N, best F, evaluations used) per rung
    provenance: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.series.N


@dataclass(frozen=True)
class FamilySpec:
    family: str                        # "I" or "II"
    driver: str                        # "sym" (Sym-point angle) or "conf" (branch point angle)
    start: SolvedRun
    step: float
    count: int

    def __post_init__(self):
        if self.family not in ("I", "II"):
            raise ValueError("family must be 'I' or 'II'")
        if self.driver not in ("sym", "conf"):
            raise ValueError("driver must be 'sym' or 'conf'")
        if self.count < 0:
            raise ValueError("count must be non-negative")


class BudgetExhausted(Exception):
    pass


# ---------------------------------------------------------------------------
# Nelder-Mead

@dataclass(frozen=True, eq=False)
class NMResult:
    x: np.ndarray
    f: float
    evals: int
    iterations: int
    reason: str
    best_history: tuple


def nelder_mead(fun, x0, step=0.1, xtol: float = 1e-10, ftol: float = 1e-14,
                max_evals: int = 2000) -> NMResult:
    """Nelder-Mead with reflection 1, expansion 2, contraction 0.5, shrink 0.5.

    A vertex whose evaluation raises or returns nan gets +inf.  Stops when the
    simplex diameter or the spread of values drops below its tolerance, or
    after ``max_evals`` evaluations.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = x0.size
    if n < 1:
        raise ValueError("need at least one variable")
    steps = np.broadcast_to(np.asarray(step, dtype=float), (n,))
    if np.any(steps == 0):
        raise ValueError("initial simplex is degenerate")
    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        try:
            v = float(fun(x))
        except (BudgetExhausted, KeyboardInterrupt):
            raise
        except Exception:
            return math.inf
        return v if not math.isnan(v) else math.inf

    sim = np.vstack([x0] + [x0 + steps[i] * np.eye(n)[i] for i in range(n)])
    fs = np.array([f(x) for x in sim])
    best = [float(np.min(fs))]
    it = 0
    reason = "max_evals"
    while evals < max_evals:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        diam = float(np.max(np.linalg.norm(sim[1:] - sim[0], axis=1)))
        spread = float(fs[-1] - fs[0]) if np.all(np.isfinite(fs)) else math.inf
        if diam < xtol:
            reason = "xtol"
            break
        if spread < ftol:
            reason = "ftol"
            break
        it += 1
        c = np.mean(sim[:-1], axis=0)
        xr = c + (c - sim[-1])
        fr = f(xr)
        if fr < fs[0]:
            xe = c + 2.0 * (c - sim[-1])
            fe = f(xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
        elif fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
        else:
            if fr < fs[-1]:
                xc = c + 0.5 * (xr - c)
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = c + 0.5 * (sim[-1] - c)
                fc = f(xc)
                accept = fc < fs[-1]
            if accept:
                sim[-1], fs[-1] = xc, fc
            else:
                sim[1:] = sim[0] + 0.5 * (sim[1:] - sim[0])
                fs[1:] = [f(x) for x in sim[1:]]
        best.append(min(best[-1], float(np.min(fs))))
    k = int(np.argmin(fs))
    return NMResult(sim[k].copy(), float(fs[k]), evals, it, reason, tuple(best))


# ---------------------------------------------------------------------------
# problem definition

class Problem:
    """Maps search vectors to (params, series, lambda_0) and evaluates residuals.

    ``free`` names an extra geometric variable appended after the series
    coordinates: "phi" (branch points exp(+-i phi)) or "theta" (Sym points
    exp(+-i theta)).  ``family2`` appends the coordinates of lambda_0.
    """

    def __init__(self, params: SurfaceParams, N: int, samples: SampleSet | None = None,
                 K: int | None = None, free: str | None = None, family2: bool = False,
                 weight: float = 10.0, eps: float = 0.02, cfg: MonodromyConfig | None = None,
                 threads: int | None = None):
        if free is not None and not params.rectangular:
            raise ModelError("geometric continuation needs a rectangular configuration")
        self.params = params
        self.N = N
        self.samples = samples or SampleSet.for_params(params, K)
        self.free = free
        self.family2 = family2
        self.weight = weight
        self.eps = eps
        self.cfg = cfg or MonodromyConfig()
        self.threads = threads
        self.n_series = n_free(N, params)
        self.n_lambda0 = (1 if params.rectangular else 2) if family2 else 0

    @property
    def dim(self) -> int:
        return self.n_series + (self.free is not None) + self.n_lambda0

    def geometry(self, x) -> SurfaceParams:
        if self.free is None:
            return self.params
        v = float(x[self.n_series])
        if self.free == "phi":
            return self.params.replace(z0=cmath.exp(1j * v), z1=cmath.exp(-1j * v))
        return self.params.replace(lambda1=cmath.exp(1j * v), lambda2=cmath.exp(-1j * v))

    def lambda0(self, x) -> complex | None:
        if not self.family2:
            return None
        u = np.asarray(x[self.dim - self.n_lambda0:], dtype=float)
        r = 1.0 - self.eps
        if self.n_lambda0 == 1:
            return complex(r * math.tanh(u[0]))
        w = complex(u[0], u[1])
        return 0j if w == 0 else r * math.tanh(abs(w)) * w / abs(w)

    def lambda0_coords(self, lam0: complex) -> list:
        r = 1.0 - self.eps
        if abs(lam0) >= r:
            raise ValueError(f"|lambda_0| = {abs(lam0):.6g} outside the barrier radius {r}")
        if self.n_lambda0 == 1:
            return [math.atanh(lam0.real / r)]
        if lam0 == 0:
            return [0.0, 0.0]
        s = math.atanh(abs(lam0) / r)
        return [s * lam0.real / abs(lam0), s * lam0.imag / abs(lam0)]

    def decode(self, x):
        x = np.asarray(x, dtype=float)
        p = self.geometry(x)
        return p, vector_to_series(x[:self.n_series], self.N, p), self.lambda0(x)

    def encode(self, params: SurfaceParams, series: AccessorySeries, lam0: complex | None = None):
        x = list(series_to_vector(series.padded(self.N) if series.N < self.N else series, self.params))
        if self.free == "phi":
            x.append(cmath.phase(params.z0))
        elif self.free == "theta":
            x.append(cmath.phase(params.lambda1))
        if self.family2:
            x += self.lambda0_coords(lam0)
        return np.array(x, dtype=float)

    def residuals(self, x) -> np.ndarray:
        p, s, lam0 = self.decode(x)
        r = residuals(p, s, self.samples, self.cfg, self.threads)
        if self.family2:
            r = np.r_[r, math.sqrt(self.weight) * _penalty_vector(p, s, lam0)]
        return r


def _penalty_vector(params, series, lam0):
    B = complex(np.polynomial.polynomial.polyval(lam0, reconstruct_B(series, params)))
    A1 = complex(series.A(lam0)) + 1.0
    return np.array([B.real, B.imag, A1.real, A1.imag])


def familyII_objective(params: SurfaceParams, series: AccessorySeries, lambda0: complex,
                       samples: SampleSet, weight: float = 10.0, eps: float = 0.02,
                       cfg: MonodromyConfig | None = None, threads: int | None = None) -> float:
    """F + weight * (|B(lambda_0)|^2 + |A(lambda_0) + 1|^2), with a wall at |lambda_0| > 1 - eps."""
    lambda0 = complex(lambda0)
    value = objective_F(params, series, samples, cfg, threads).value
    if weight:
        value += weight * float(np.sum(_penalty_vector(params, series, lambda0) ** 2))
    excess = abs(lambda0) - (1.0 - eps)
    if excess > 0:
        value += 1.0 + 1e3 * excess
    return value


class Evaluator:
    """Budgeted residual evaluation with best-point tracking."""

    def __init__(self, problem: Problem, budget: int, used: int = 0):
        self.problem = problem
        self.budget = budget
        self.used = used
        self.best_x = None
        self.best = math.inf

    def residuals(self, x) -> np.ndarray:
        if self.used >= self.budget:
            raise BudgetExhausted()
        self.used += 1
        x = np.asarray(x, dtype=float)
        try:
            r = self.problem.residuals(x)
        except (ObjectiveError, ModelError, ValueError, ZeroDivisionError, FloatingPointError):
            return None
        v = float(np.sqrt(np.sum(r * r)))
        if v < self.best:
            self.best, self.best_x = v, x.copy()
        return r

    def value(self, x) -> float:
        r = self.residuals(x)
        return math.inf if r is None else float(np.sqrt(np.sum(r * r)))

    def squared(self, x) -> float:
        r = self.residuals(x)
        return FAILED ** 2 if r is None else float(np.sum(r * r))

    def ls(self, m):
        def fun(x):
            r = self.residuals(x)
            return np.full(m, FAILED) if r is None else r
        return fun


def _optimize(ev: Evaluator, x0, config: SearchConfig):
    """One optimizer run from x0 within the evaluator budget (best point kept by ev)."""
    x0 = np.asarray(x0, dtype=float)
    outer = ev.budget
    ev.budget = min(outer, ev.used + config.rung_evals)
    try:
        if config.optimizer == "nelder_mead":
            nelder_mead(ev.value, x0, step=_nm_steps(x0, config.nm_step), xtol=config.nm_tol,
                        ftol=config.target_F * 1e-3, max_evals=ev.budget - ev.used)
        elif config.optimizer == "praxis":
            scipy.optimize.minimize(ev.squared, x0, method="Powell",
                                    options={"xtol": 1e-12, "ftol": 1e-16,
                                             "maxfev": ev.budget - ev.used})
        else:
            _dfols(ev, x0, config)
    except BudgetExhausted:
        pass
    finally:
        ev.budget = outer


def _nm_steps(x0, step):
    return np.where(np.abs(x0) > 1e-3, step * np.maximum(np.abs(x0), 0.05), step * 0.05)


def _dfols(ev: Evaluator, x0, config: SearchConfig):
    import dfols
    r0 = ev.residuals(x0)
    m = len(r0) if r0 is not None else len(ev.problem.samples) * 8 + 4 * ev.problem.family2
    state = np.random.get_state()
    np.random.seed(config.seed)
    try:
        dfols.solve(ev.ls(m), x0, rhobeg=config.rhobeg, rhoend=1e-13,
                    maxfun=max(1, ev.budget - ev.used),
                    user_params={"init.random_initial_directions": False,
                                 "restarts.use_restarts": False},
                    objfun_has_noise=False)
    finally:
        np.random.set_state(state)


# ---------------------------------------------------------------------------
# surface search

def _grid_stage(problem: Problem, ev: Evaluator, config: SearchConfig):
    """Coarse grid over (a0, c0) at the lowest rung, refined by Nelder-Mead from the best points."""
    a = np.linspace(*config.grid_a0[:2], int(config.grid_a0[2]))
    c = np.linspace(*config.grid_c0[:2], int(config.grid_c0[2]))
    n = problem.dim
    kA = problem.n_series // 2
    starts = []
    for a0 in a:
        for c0 in c:
            x = np.zeros(n)
            x[0], x[kA] = a0, c0
            starts.append((ev.value(x), tuple(x)))
    starts.sort()
    for _, x in starts[:1 + config.restarts]:
        try:
            nelder_mead(ev.value, np.array(x), step=_nm_steps(np.array(x), config.nm_step),
                        xtol=1e-8, ftol=1e-12, max_evals=min(400, ev.budget - ev.used))
        except BudgetExhausted:
            break


def _revalidate(params, series, samples: SampleSet, factor: int, cfg, threads) -> float:
    dense = samples.densified(factor)
    return objective_F(params, series, dense, cfg, threads, all_six=True).value


def minimize_surface(params: SurfaceParams, config: SearchConfig | None = None,
                     init: AccessorySeries | None = None, cfg: MonodromyConfig | None = None,
                     threads: int | None = None) -> SolvedRun:
    """Climb the truncation ladder; non-convergence is reported in the result, not raised."""
    config = config or SearchConfig()
    ladder = list(config.N_ladder)
    if init is not None:
        ladder = [n for n in ladder if n > init.N]
        ladder = [init.N] + ladder
    ev_used = 0
    history = []
    x_best, series_best, F_best = None, init, math.inf
    samples = None
    for rung, N in enumerate(ladder):
        problem = Problem(params, N, K=config.K, cfg=cfg, threads=threads)
        samples = problem.samples
        ev = Evaluator(problem, config.max_evals, ev_used)
        if series_best is not None:
            x0 = problem.encode(params, series_best)
        else:
            x0 = None
        try:
            if x0 is not None:
                ev.value(x0)
            if x0 is None and rung == 0:
                _grid_stage(problem, ev, config)
            elif x0 is not None and ev.best > config.target_F:
                _optimize(ev, ev.best_x if ev.best_x is not None else x0, config)
        except BudgetExhausted:
            pass
        ev_used = ev.used
        if ev.best_x is not None:
            series_best = vector_to_series(ev.best_x, N, params)
            F_best = ev.best
        history.append((N, F_best, ev.used))
        if ev.used >= config.max_evals:
            break
    if series_best is None:
        series_best = AccessorySeries.zeros(ladder[0])
    # fresh evaluation so that final_F is reproducible from the record alone
    samples = samples or SampleSet.for_params(params, config.K)
    try:
        final = objective_F(params, series_best, samples, cfg, threads).value
    except ObjectiveError:
        final = math.inf
    reached = series_best.N == ladder[-1] and final <= config.target_F
    reval = None
    msg = ""
    if reached:
        reval = _revalidate(params, series_best, samples, config.revalidate_factor, cfg, threads)
        if reval > config.revalidate_ratio * config.target_F:
            msg = f"re-validation at {config.revalidate_factor}x samples gave F = {reval:.3g}"
            reached = False
    elif final > config.target_F:
        msg = f"best F = {final:.3g} above target {config.target_F:.3g}"
    else:
        msg = f"evaluation budget exhausted before N = {ladder[-1]}"
    return SolvedRun(params, series_best, final, ev_used, reached, None, reval, None, msg,
                     tuple(history), {"config": config.to_dict(), "seed": config.seed})


# ---------------------------------------------------------------------------
# families

def driver_value(params: SurfaceParams, driver: str) -> float:
    return cmath.phase(params.lambda1) if driver == "sym" else cmath.phase(params.z0)


def _set_driver(params: SurfaceParams, driver: str, v: float) -> SurfaceParams:
    if driver == "sym":
        return params.replace(lambda1=cmath.exp(1j * v), lambda2=cmath.exp(-1j * v))
    return params.replace(z0=cmath.exp(1j * v), z1=cmath.exp(-1j * v))


def solve_step(params: SurfaceParams, series: AccessorySeries, driver: str, family: str,
               config: SearchConfig, lambda0: complex | None = None, x_guess=None,
               cfg: MonodromyConfig | None = None, threads: int | None = None,
               target: float | None = None) -> SolvedRun:
    """Solve at fixed driver value with the complementary angle free."""
    target = config.continuation_target_F if target is None else target
    params = params.replace(even_lambda=False)
    free = "phi" if driver == "sym" else "theta"
    problem = Problem(params, series.N, K=config.K, free=free, family2=(family == "II"),
                      weight=config.penalty_weight, eps=config.barrier_eps, cfg=cfg, threads=threads)
    x0 = problem.encode(params, series, lambda0) if x_guess is None else np.asarray(x_guess, float)
    ev = Evaluator(problem, config.max_evals)
    try:
        first = ev.value(x0)
        if first > target:
            _optimize(ev, x0, config)
    except BudgetExhausted:
        pass
    x = ev.best_x if ev.best_x is not None else x0
    p, s, lam0 = problem.decode(x)
    try:
        final = objective_F(p, s, problem.samples, cfg, threads).value
    except ObjectiveError:
        final = math.inf
    pen = None
    if family == "II":
        pen = float(np.sum(_penalty_vector(p, s, lam0) ** 2))
    ok = final <= target and (pen is None or pen <= target ** 2)
    reval, msg = None, ""
    if ok:
        reval = _revalidate(p, s, problem.samples, 2, cfg, threads)
        if reval > config.revalidate_ratio * target:
            ok = False
            msg = f"re-validation at 2x samples gave F = {reval:.3g}"
    else:
        msg = f"best F = {final:.3g} above target {target:.3g}"
    run = SolvedRun(p, s, final, ev.used, ok, lam0, reval, pen, msg, ((s.N, final, ev.used),),
                    {"config": config.to_dict(), "seed": config.seed, "driver": driver, "family": family})
    return run, x


def _common_zero_seed(params: SurfaceParams, lam0: float) -> AccessorySeries:
    """N = 0 series with A = -1 and the constant C making B vanish at lam0."""
    cp = build_closing(params)
    h0 = P.polyval(lam0, cp.h)
    c0 = -P.polyval(lam0, cp.f) * rtilde(params, [-1.0])[0] / h0
    return AccessorySeries([-1.0], [c0.real if params.rectangular else c0])


def find_familyII_start(params: SurfaceParams, config: SearchConfig | None = None,
                        phi_grid=(0.04, 0.34, 11), lambda0_grid=(-0.6, -0.05, 12), K_grid: int = 8,
                        cfg: MonodromyConfig | None = None, threads: int | None = None,
                        callback=None) -> SolvedRun:
    """Search a run with a common zero of B and A + 1 at fixed Sym points.

    At N = 0 the common zero fixes A = -1 and C, so a grid over the branch
    point angle phi and a real lambda_0 scores candidates cheaply; the best
    one is then carried up ``config.N_ladder`` with the penalized objective,
    phi and lambda_0 free.
    """
    config = config or SearchConfig()
    if not params.rectangular:
        raise ModelError("family II start search needs a rectangular configuration")
    best = (math.inf, None, None)
    for phi in np.linspace(*phi_grid[:2], int(phi_grid[2])):
        p = params.replace(z0=cmath.exp(-1j * phi), z1=cmath.exp(1j * phi), even_lambda=False)
        samples = SampleSet.for_params(p, K_grid)
        for lam0 in np.linspace(*lambda0_grid[:2], int(lambda0_grid[2])):
            s = _common_zero_seed(p, lam0)
            try:
                v = objective_F(p, s, samples, cfg, threads).value
            except ObjectiveError:
                continue
            if v < best[0]:
                best = (v, p, (s, complex(lam0)))
    if best[1] is None:
        raise ObjectiveError(0, 0j, "no grid point could be evaluated")
    p, (s, lam0) = best[1], best[2]
    history, used, run = [], 0, None
    for N in config.N_ladder:
        run, _ = solve_step(p, s.padded(max(N, s.N)), "sym", "II", config, lam0, None, cfg, threads,
                            target=config.target_F)
        used += run.eval_count
        history.append((N, run.final_F, used))
        if callback is not None:
            callback(N, run)
        p, s, lam0 = run.params, run.series, run.lambda0
        if run.converged:
            break
    prov = dict(run.provenance, grid_F=best[0])
    return replace(run, eval_count=used, history=tuple(history), provenance=prov)


def continue_family(spec: FamilySpec, config: SearchConfig | None = None,
                    cfg: MonodromyConfig | None = None, threads: int | None = None,
                    callback=None) -> tuple[list[SolvedRun], SolvedRun | None]:
    """Step the driver angle from the start run; returns (converged runs, failed run or None).

    Each step is warm-started by secant extrapolation of the previous two
    solutions (or the previous one).
    """
    config = config or SearchConfig()
    start = spec.start
    if spec.family == "II" and start.lambda0 is None:
        raise ValueError("family II needs a start run with a common zero lambda_0")
    runs = [start]
    free = "phi" if spec.driver == "sym" else "theta"
    p0 = start.params.replace(even_lambda=False)
    xs = [Problem(p0, start.series.N, K=config.K, free=free, family2=(spec.family == "II"),
                  eps=config.barrier_eps).encode(p0, start.series, start.lambda0)]
    v0 = driver_value(start.params, spec.driver)
    for k in range(1, spec.count + 1):
        prev = runs[-1]
        params = _set_driver(prev.params, spec.driver, v0 + k * spec.step)
        guess = xs[-1] if len(xs) == 1 or spec.step == 0 else 2 * xs[-1] - xs[-2]
        run, x = solve_step(params, prev.series, spec.driver, spec.family, config,
                            prev.lambda0, guess, cfg, threads)
        if not run.converged and len(xs) > 1:
            # retry from the previous solution without extrapolation
            run2, x2 = solve_step(params, prev.series, spec.driver, spec.family, config,
                                  prev.lambda0, xs[-1], cfg, threads)
            if run2.final_F < run.final_F:
                run, x = run2, x2
        if callback is not None:
            callback(k, run)
        if not run.converged:
            return runs[1:], run
        runs.append(run)
        xs.append(x)
    return runs[1:], None
