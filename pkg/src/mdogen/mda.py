"""Fixed-point multidisciplinary analysis: Jacobi and Gauss-Seidel sweeps.

Both solvers stop on the normalized change between two successive iterates
and can be accelerated by cycling minimal polynomial extrapolation (MPE).
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from mdogen.errors import ConfigurationError, DivergenceError

Array = np.ndarray

RESIDUAL_FLOOR = 1.0


class Algorithm(str, enum.Enum):
    JACOBI = "jacobi"
    GAUSS_SEIDEL = "gauss-seidel"


class Acceleration(str, enum.Enum):
    NONE = "none"
    MPE = "mpe"


class InitialGuess(str, enum.Enum):
    AUTO = "auto"  # zeros for unbounded coupling spaces, box midpoint otherwise
    ZEROS = "zeros"
    BOX_MIDPOINT = "box-midpoint"
    GIVEN = "given"


@dataclass(frozen=True)
class MdaSettings:
    algorithm: Algorithm = Algorithm.GAUSS_SEIDEL
    tolerance: float = 1e-6
    max_iterations: int = 200
    acceleration: Acceleration = Acceleration.NONE
    mpe_window: int = 5
    initial_guess: InitialGuess = InitialGuess.AUTO
    given_y: tuple[float, ...] | None = None
    warm_start: bool = False

    def __post_init__(self):
        for name, kind in (
            ("algorithm", Algorithm),
            ("acceleration", Acceleration),
            ("initial_guess", InitialGuess),
        ):
            try:
                object.__setattr__(self, name, kind(getattr(self, name)))
            except ValueError as err:
                raise ConfigurationError(str(err)) from err
        if not self.tolerance > 0:
            raise ConfigurationError("MDA tolerance must be positive")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if self.mpe_window < 2:
            raise ConfigurationError("the MPE window must be >= 2")
        if self.initial_guess is InitialGuess.GIVEN and self.given_y is None:
            raise ConfigurationError("initial guess GIVEN needs given_y")
        if self.given_y is not None:
            object.__setattr__(self, "given_y", tuple(float(v) for v in self.given_y))

    @property
    def label(self) -> str:
        name = "J" if self.algorithm is Algorithm.JACOBI else "GS"
        if self.acceleration is Acceleration.MPE:
            name += "+MPE"
        return name


@dataclass
class MdaResult:
    y: Array
    iterations: int
    residual_history: list[float]
    converged: bool
    discipline_eval_counts: list[int] = field(default_factory=list)

    @property
    def residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else np.inf

    def write_residual_history(self, path):
        with open(path, "w", newline="") as stream:
            writer = csv.writer(stream)
            writer.writerow(["iteration", "residual"])
            for k, r in enumerate(self.residual_history, start=1):
                writer.writerow([k, repr(float(r))])


def normalized_residual(y_prev, y_next, y_initial) -> float:
    """``||y_next - y_prev|| / max(||y_initial||, 1)`` in the Euclidean norm."""
    step = np.linalg.norm(np.asarray(y_next, dtype=float) - np.asarray(y_prev, dtype=float))
    scale = max(float(np.linalg.norm(y_initial)), RESIDUAL_FLOOR)
    return float(step / scale)


def mpe_accelerate(iterates) -> Array:
    """Minimal polynomial extrapolation of a window of fixed-point iterates.

    With differences ``u_j = y_{j+1} - y_j`` the weights ``c`` minimize
    ``||sum_j c_j u_j||`` subject to ``sum_j c_j = 1``; the extrapolate is
    ``sum_j c_j y_{j+1}``. Returns the last iterate when the weights cannot be
    normalized (all differences zero or a degenerate system).
    """
    Y = np.array([np.asarray(v, dtype=float).ravel() for v in iterates])
    if len(Y) < 3:
        raise ConfigurationError("MPE needs at least three iterates")
    last = Y[-1].copy()
    U = np.diff(Y, axis=0).T
    if not np.any(U):
        return last
    # gamma_{k-1} = 1, the others from a least-squares fit of -u_{k-1}.
    gamma_head = np.linalg.lstsq(U[:, :-1], -U[:, -1], rcond=None)[0]
    gamma = np.append(gamma_head, 1.0)
    total = gamma.sum()
    if not np.isfinite(total) or abs(total) < 1e-12 * np.abs(gamma).sum():
        return last
    extrapolate = (gamma / total) @ Y[1:]
    if not np.all(np.isfinite(extrapolate)):
        return last
    return extrapolate


def initial_coupling(coupling, settings: MdaSettings) -> Array:
    space = coupling.space
    guess = settings.initial_guess
    if guess is InitialGuess.GIVEN:
        y0 = np.array(settings.given_y, dtype=float)
        if y0.shape != (space.dim,):
            raise ConfigurationError("given_y does not match the coupling size")
        return y0
    if guess is InitialGuess.ZEROS:
        return np.zeros(space.dim)
    if guess is InitialGuess.BOX_MIDPOINT and not space.is_box:
        raise ConfigurationError("box midpoint requested for an unbounded coupling space")
    return space.midpoint()


def run_mda(coupling, x, settings: MdaSettings | None = None, y0=None) -> MdaResult:
    """Solve ``y = h(x, y)`` by fixed-point sweeps.

    ``y0`` overrides the initial guess of ``settings`` (used for warm starts).
    """
    settings = settings or MdaSettings()
    space = coupling.space
    n = space.n_disciplines
    blocks = [space.block(i) for i in range(1, n + 1)]
    x = np.asarray(x, dtype=float)
    y_init = initial_coupling(coupling, settings) if y0 is None else np.array(y0, dtype=float)
    if y_init.shape != (space.dim,):
        raise ConfigurationError("initial coupling vector has the wrong size")

    shift = coupling.affine_part(x)
    if not np.all(np.isfinite(shift)):
        raise DivergenceError("non-finite coupling value", [y_init], x)
    counts = [0] * n
    residuals = []
    iterates = [y_init]
    cycle = [y_init]
    y = y_init
    accelerate = settings.acceleration is Acceleration.MPE
    converged = False
    for _ in range(settings.max_iterations):
        if settings.algorithm is Algorithm.JACOBI:
            y_new = coupling.evaluate_rows(slice(None), shift, y)
        else:
            y_new = y.copy()
            for rows in blocks:
                y_new[rows] = coupling.evaluate_rows(rows, shift, y_new)
        for i in range(n):
            counts[i] += 1
        iterates.append(y_new)
        if not np.all(np.isfinite(y_new)):
            raise DivergenceError("MDA produced a non-finite coupling value", iterates, x)
        residuals.append(normalized_residual(y, y_new, y_init))
        y = y_new
        if residuals[-1] <= settings.tolerance:
            converged = True
            break
        if accelerate:
            cycle.append(y)
            if len(cycle) == settings.mpe_window + 1:
                y = mpe_accelerate(cycle)
                cycle = [y]
    return MdaResult(y, len(residuals), residuals, converged, counts)
