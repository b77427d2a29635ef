"""Bound-constrained local optimization and Latin hypercube multi-start."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from mdogen.errors import ConfigurationError, MdogenError, NumericalError, OptimizationFailure

logger = logging.getLogger(__name__)

Array = np.ndarray


class Status(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITER = "max-iter"
    LINE_SEARCH_FAIL = "line-search-fail"


@dataclass(frozen=True)
class OptimizerSettings:
    max_iterations: int = 1000
    gradient_tolerance: float = 1e-8
    objective_tolerance: float = 1e-12
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    memory: int = 10

    def __post_init__(self):
        if self.max_iterations < 1 or self.memory < 1 or self.max_backtracks < 1:
            raise ConfigurationError("iteration counts and memory must be >= 1")
        if not (self.gradient_tolerance > 0 and self.objective_tolerance > 0):
            raise ConfigurationError("tolerances must be positive")
        if not (0 < self.armijo < 1 and 0 < self.backtrack < 1):
            raise ConfigurationError("line-search constants must lie in (0, 1)")


@dataclass
class OptimizeResult:
    x_final: Array
    f_final: float
    iterations: int
    status: Status
    history: list[tuple[float, float]] = field(default_factory=list)
    start: Array | None = None
    start_statuses: list[str] = field(default_factory=list)


def lhs_sample(seed, n_points: int, bounds) -> Array:
    """Latin hypercube design of ``n_points`` rows in the box ``bounds``.

    Every coordinate has exactly one point per stratum
    ``[l + j (u - l) / n, l + (j + 1) (u - l) / n)``.
    """
    if n_points < 1:
        raise ConfigurationError("n_points must be >= 1")
    lower, upper = (np.asarray(b, dtype=float) for b in bounds)
    sampler = qmc.LatinHypercube(d=lower.size, seed=np.random.default_rng(seed))
    unit = sampler.random(n_points)
    return lower + unit * (upper - lower)


def projected_gradient(x, g, lower, upper) -> Array:
    return np.clip(x - g, lower, upper) - x


def _lbfgs_direction(g, pairs, free) -> Array:
    q = np.where(free, g, 0.0)
    used = []
    for s, y in reversed(pairs):
        s_f, y_f = s * free, y * free
        sy = s_f @ y_f
        if sy <= 1e-12 * np.linalg.norm(s_f) * np.linalg.norm(y_f) or sy <= 0.0:
            continue
        rho = 1.0 / sy
        a = rho * (s_f @ q)
        q -= a * y_f
        used.append((s_f, y_f, rho, a))
    if used:
        s_f, y_f, _, _ = used[0]
        q *= (s_f @ y_f) / (y_f @ y_f)
    else:
        q /= max(1.0, float(np.max(np.abs(q))))
    for s_f, y_f, rho, a in reversed(used):
        b = rho * (y_f @ q)
        q += (a - b) * s_f
    return -q


def minimize_box(
    objective: Callable[[Array], float],
    gradient: Callable[[Array], Array],
    x0,
    bounds,
    settings: OptimizerSettings | None = None,
    x_star=None,
) -> OptimizeResult:
    """Projected limited-memory BFGS with Armijo backtracking.

    Variables at a bound whose gradient points outward are frozen for the
    iteration; trial points are projected onto the box, so every iterate is
    feasible. ``x_star``, when given, fills the distance column of the history.
    """
    settings = settings or OptimizerSettings()
    lower, upper = (np.asarray(b, dtype=float) for b in bounds)
    x = np.asarray(x0, dtype=float).copy()
    if np.any(x < lower - 1e-12) or np.any(x > upper + 1e-12):
        raise ConfigurationError("starting point outside the bounds")
    x = np.clip(x, lower, upper)
    x_star = None if x_star is None else np.asarray(x_star, dtype=float)

    f = float(objective(x))
    if not np.isfinite(f):
        raise NumericalError(f"non-finite objective at the starting point {x}")
    g = np.asarray(gradient(x), dtype=float)
    pairs: list[tuple[Array, Array]] = []
    history: list[tuple[float, float]] = []
    status = Status.MAX_ITER

    for _ in range(settings.max_iterations):
        if np.max(np.abs(projected_gradient(x, g, lower, upper)), initial=0.0) <= settings.gradient_tolerance:
            status = Status.CONVERGED
            break
        free = ~(((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0)))
        d = _lbfgs_direction(g, pairs, free)
        if not g @ d < 0:
            pairs.clear()
            d = _lbfgs_direction(g, pairs, free)

        t = 1.0
        for _ in range(settings.max_backtracks):
            x_trial = np.clip(x + t * d, lower, upper)
            step = x_trial - x
            f_trial = float(objective(x_trial))
            if np.isfinite(f_trial) and f_trial <= f + settings.armijo * min(g @ step, 0.0):
                break
            t *= settings.backtrack
        else:
            status = Status.LINE_SEARCH_FAIL
            break
        if not np.any(step):
            status = Status.LINE_SEARCH_FAIL
            break

        g_trial = np.asarray(gradient(x_trial), dtype=float)
        pairs.append((step, g_trial - g))
        if len(pairs) > settings.memory:
            pairs.pop(0)
        f_prev = f
        x, f, g = x_trial, f_trial, g_trial
        history.append((f, np.nan if x_star is None else float(np.linalg.norm(x - x_star))))
        if f_prev - f <= settings.objective_tolerance * max(abs(f_prev), abs(f), 1.0):
            status = Status.CONVERGED
            break

    return OptimizeResult(x, f, len(history), status, history, start=np.asarray(x0, dtype=float))


def multistart(
    objective,
    gradient,
    bounds,
    n_starts: int,
    seed,
    settings: OptimizerSettings | None = None,
    x_star=None,
    starts=None,
) -> OptimizeResult:
    """Best of ``n_starts`` local runs from a Latin hypercube design.

    ``starts`` replaces the design with explicit points. Ties in the final
    objective go to the smaller distance to ``x_star`` when known, else to the
    earlier start.
    """
    if starts is None:
        if n_starts < 1:
            raise ConfigurationError("n_starts must be >= 1")
        starts = lhs_sample(seed, n_starts, bounds)
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    best = None
    best_key = None
    statuses = []
    for index, x0 in enumerate(starts):
        try:
            result = minimize_box(objective, gradient, x0, bounds, settings, x_star)
        except MdogenError as err:
            logger.warning("start %d failed: %s", index, err)
            statuses.append(f"error: {err}")
            continue
        statuses.append(result.status.value)
        dist = 0.0 if x_star is None else float(np.linalg.norm(result.x_final - x_star))
        key = (result.f_final, dist, index)
        if best_key is None or key < best_key:
            best, best_key = result, key
    if best is None:
        raise OptimizationFailure("every start failed", statuses)
    best.start_statuses = statuses
    return best
