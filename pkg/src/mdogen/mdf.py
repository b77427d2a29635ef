"""MDO problem built from a reference problem, a coupling and a link function.

The MDF formulation exposes ``x -> f(L(x, y(x)))`` where ``y(x)`` comes from
an MDA. Total gradients use the coupled adjoint::

    (I - dh/dy)^T lam = (dL/dy)^T grad_f
    grad = (dL/dx)^T grad_f + (dh/dx)^T lam
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from mdogen.coupling import (
    Coupling,
    LinearCoupling,
    LinkFunction,
    LinkKind,
    coupling_jacobians,
    domain_membership,
    eval_link,
    link_jacobians,
)
from mdogen.errors import DivergenceError, EmptyDomainError, SingularAdjointError
from mdogen.mda import MdaResult, MdaSettings, normalized_residual, run_mda
from mdogen.problems import EvaluationRecord, ReferenceProblem

logger = logging.getLogger(__name__)

Array = np.ndarray

FAILURE_PENALTY = 1e6


class MdoProblem:
    """Problem (f o L, h) with evaluation counters.

    Instances hold mutable state (counters, warm-start vector, last MDA) and
    belong to a single run.
    """

    def __init__(
        self,
        reference: ReferenceProblem,
        coupling: Coupling,
        link: LinkFunction,
        mda_settings: MdaSettings | None = None,
    ):
        if reference.partition.block_sizes != coupling.partition.block_sizes:
            raise ValueError("reference problem and coupling use different partitions")
        self.reference = reference
        self.coupling = coupling
        self.link = link
        self.mda_settings = mda_settings or MdaSettings()
        n = coupling.n_disciplines
        self.counters = {"f": EvaluationRecord(), "L": EvaluationRecord()}
        for i in range(1, n + 1):
            self.counters[f"h{i}"] = EvaluationRecord()
        if reference.constraints:
            self.counters["g"] = EvaluationRecord()
        self._warm_y = None
        self._last_x = None
        self._last_mda = None

    @property
    def coupling_space(self):
        return self.coupling.space

    @property
    def n_disciplines(self) -> int:
        return self.coupling.n_disciplines

    def reset(self):
        for record in self.counters.values():
            record.reset()
        self._warm_y = None
        self._last_x = None
        self._last_mda = None

    def solve_mda(self, x) -> MdaResult:
        """MDA at ``x``, reusing the previous result when ``x`` is unchanged."""
        x = np.asarray(x, dtype=float)
        if self._last_x is not None and np.array_equal(x, self._last_x):
            return self._last_mda
        y0 = self._warm_y if self.mda_settings.warm_start else None
        try:
            result = run_mda(self.coupling, x, self.mda_settings, y0=y0)
        except DivergenceError as err:
            err.x = x.copy()
            raise
        for i, n_evals in enumerate(result.discipline_eval_counts, start=1):
            self.counters[f"h{i}"].count_value(n_evals)
        if not result.converged:
            logger.warning(
                "MDA stopped after %d iterations with residual %.3e",
                result.iterations,
                result.residual,
            )
        self._last_x = x.copy()
        self._last_mda = result
        self._warm_y = result.y.copy()
        return result

    def coupled_derivative(self, x, y) -> Array:
        """Total derivative ``dL/dx + dL/dy (I - dh/dy)^-1 dh/dx`` (d x d)."""
        dL_dx, dL_dy, h_x, h_y = self._partials(x, y)
        return dL_dx + dL_dy @ self._solve(np.eye(h_y.shape[0]) - h_y, h_x)

    def _partials(self, x, y):
        h_x, h_y = coupling_jacobians(self.coupling, x, y)
        dL_dx, dL_dy = link_jacobians(self.link, self.coupling, x, y)
        return dL_dx, dL_dy, h_x, h_y

    @staticmethod
    def _solve(matrix, rhs):
        try:
            sol = np.linalg.solve(matrix, rhs)
        except np.linalg.LinAlgError as err:
            raise SingularAdjointError("I - dh/dy is singular") from err
        if not np.all(np.isfinite(sol)):
            raise SingularAdjointError("I - dh/dy is singular")
        return sol

    def objective(self, x) -> float:
        return mdf_objective(self, x)

    def gradient(self, x) -> Array:
        return mdf_gradient(self, x)

    def penalized_objective(self, x) -> float:
        """Objective returning a large finite value when the MDA diverges.

        The penalty is ``FAILURE_PENALTY`` plus the normalized residual between
        the last two finite iterates, capped so that it stays finite.
        """
        try:
            return mdf_objective(self, x)
        except DivergenceError as err:
            finite = [v for v in err.history if np.all(np.isfinite(v))]
            residual = normalized_residual(finite[-2], finite[-1], finite[0]) if len(finite) > 1 else 0.0
            penalty = FAILURE_PENALTY + min(residual, FAILURE_PENALTY)
            logger.warning("MDA diverged at x=%s; returning penalty %.3e", x, penalty)
            return penalty

    def constraints(self, x) -> Array:
        return mdf_constraints(self, x)

    def metrics(self, x_final) -> RunMetrics:
        return run_metrics(self, x_final)


def mdf_objective(problem: MdoProblem, x) -> float:
    """``f(L(x, y(x)))`` with ``y(x)`` from the MDA."""
    x = np.asarray(x, dtype=float)
    y = problem.solve_mda(x).y
    problem.counters["L"].count_value()
    z = eval_link(problem.link, problem.coupling, x, y)
    problem.counters["f"].count_value()
    return float(problem.reference.objective(z))


def mdf_gradient(problem: MdoProblem, x) -> Array:
    """Coupled-adjoint total gradient of :func:`mdf_objective`."""
    x = np.asarray(x, dtype=float)
    y = problem.solve_mda(x).y
    z = eval_link(problem.link, problem.coupling, x, y)
    grad_f = problem.reference.gradient(z)
    dL_dx, dL_dy, h_x, h_y = problem._partials(x, y)
    problem.counters["f"].count_gradient()
    problem.counters["L"].count_gradient()
    for i in range(1, problem.n_disciplines + 1):
        problem.counters[f"h{i}"].count_gradient()
    adjoint = problem._solve((np.eye(h_y.shape[0]) - h_y).T, dL_dy.T @ grad_f)
    return dL_dx.T @ grad_f + h_x.T @ adjoint


def mdf_constraints(problem: MdoProblem, x) -> Array:
    """Composed constraints ``g(L(x, y(x)))``."""
    x = np.asarray(x, dtype=float)
    y = problem.solve_mda(x).y
    problem.counters["L"].count_value()
    z = eval_link(problem.link, problem.coupling, x, y)
    problem.counters["g"].count_value()
    return problem.reference.constraint_values(z)


def mdf_constraint_jacobian(problem: MdoProblem, x) -> Array:
    x = np.asarray(x, dtype=float)
    y = problem.solve_mda(x).y
    z = eval_link(problem.link, problem.coupling, x, y)
    problem.counters["g"].count_gradient()
    problem.counters["L"].count_gradient()
    for i in range(1, problem.n_disciplines + 1):
        problem.counters[f"h{i}"].count_gradient()
    return problem.reference.constraint_jacobian(z) @ problem.coupled_derivative(x, y)


@dataclass
class RunMetrics:
    delta_x: float
    delta_f: float
    n_f: int
    n_f_grad: int
    n_L: int
    n_L_grad: int
    n_h: list[int]
    n_h_grad: list[int]

    @property
    def n_h_mean(self) -> float:
        return float(np.mean(self.n_h))

    @property
    def n_h_grad_mean(self) -> float:
        return float(np.mean(self.n_h_grad))

    @property
    def n_h_total(self) -> int:
        return int(sum(self.n_h))


def run_metrics(problem: MdoProblem, x_final) -> RunMetrics:
    """Distances to the known solution and a snapshot of the counters.

    ``delta_f`` uses the reference objective directly so it is not counted.
    """
    ref = problem.reference
    x_final = np.asarray(x_final, dtype=float)
    c = problem.counters
    n = problem.n_disciplines
    return RunMetrics(
        delta_x=float(np.linalg.norm(x_final - ref.known_solution)),
        delta_f=float(abs(ref.objective(x_final) - ref.known_objective)),
        n_f=c["f"].values,
        n_f_grad=c["f"].gradients,
        n_L=c["L"].values,
        n_L_grad=c["L"].gradients,
        n_h=[c[f"h{i}"].values for i in range(1, n + 1)],
        n_h_grad=[c[f"h{i}"].gradients for i in range(1, n + 1)],
    )


@dataclass
class EquivalenceSummary:
    n_samples: int
    n_attempts: int
    max_objective_gap: float
    max_link_gap: float
    max_mda_residual: float


def equivalence_report(problem: MdoProblem, sample_count: int, seed) -> EquivalenceSummary:
    """Compare ``f(L(x, y(x)))`` with ``f(x)`` at uniformly sampled points.

    With a linear coupling and a box coupling space, samples outside the
    domain where the coupling solution lies in the box are rejected.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    part = problem.reference.partition
    rng = np.random.default_rng(seed)
    filtered = problem.coupling_space.is_box and isinstance(problem.coupling, LinearCoupling)
    max_attempts = 100 * sample_count
    attempts = 0
    obj_gap = link_gap = residual = 0.0
    accepted = 0
    while accepted < sample_count:
        if attempts >= max_attempts:
            raise EmptyDomainError(
                f"only {accepted} of {sample_count} samples in the coupling domain "
                f"after {attempts} attempts"
            )
        attempts += 1
        x = rng.uniform(part.lower, part.upper)
        if filtered and not domain_membership(problem.coupling, problem.coupling_space, x):
            continue
        accepted += 1
        mda = problem.solve_mda(x)
        z = eval_link(problem.link, problem.coupling, x, mda.y)
        f_x = problem.reference.objective(x)
        obj_gap = max(obj_gap, abs(problem.reference.objective(z) - f_x))
        link_gap = max(link_gap, float(np.max(np.abs(z - x))))
        residual = max(residual, mda.residual)
    return EquivalenceSummary(accepted, attempts, obj_gap, link_gap, residual)


def export_coupling_graph(problem: MdoProblem) -> str:
    """DOT description of the data flow ``x -> h_i -> y_i -> L -> f``.

    Design variables are boxes, coupling variables diamonds and functions
    circles. ``y_j -> h_i`` and the bold ``h_j -> h_i`` edge exist only when
    ``C_ij`` has a nonzero entry.
    """
    coupling = problem.coupling
    part = coupling.partition
    space = coupling.space
    n = coupling.n_disciplines
    lines = [
        "digraph coupling {",
        "  rankdir=LR;",
    ]
    design = [f"x{i}" for i in range(n + 1) if part.block_sizes[i] > 0]
    for name in design:
        lines.append(f'  {name} [shape=box, label="{name}"];')
    for i in range(1, n + 1):
        lines.append(f'  y{i} [shape=diamond, label="y{i}"];')
    for name in [f"h{i}" for i in range(1, n + 1)] + ["L", "f"]:
        lines.append(f'  {name} [shape=circle, label="{name}"];')
    for i in range(1, n + 1):
        if part.block_sizes[0] > 0:
            lines.append(f"  x0 -> h{i};")
        lines.append(f"  x{i} -> h{i};")
        lines.append(f"  h{i} -> y{i};")
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            if i != j and np.any(coupling.C_off[space.block(i), space.block(j)] != 0.0):
                lines.append(f"  y{j} -> h{i};")
                lines.append(f"  h{j} -> h{i} [penwidth=3];")
    for name in design:
        lines.append(f"  {name} -> L;")
    for i in range(1, n + 1):
        lines.append(f"  y{i} -> L;")
    lines.append("  L -> f;")
    lines.append("}")
    return "\n".join(lines) + "\n"


def build_problem(reference, coupling, link_kind="linear-explicit", mda_settings=None, exp_scale=1.0):
    """Convenience constructor selecting the link by name."""
    kind = LinkKind(link_kind)
    if kind is LinkKind.LINEAR_EXPLICIT:
        link = LinkFunction.linear_explicit(coupling)
    elif kind is LinkKind.ADDITIVE:
        link = LinkFunction.additive()
    else:
        link = LinkFunction.exponential(exp_scale)
    return MdoProblem(reference, coupling, link, mda_settings)
