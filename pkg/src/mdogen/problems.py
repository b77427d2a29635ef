"""Reference optimization problems and the partitioned design space.

A reference problem is a box-constrained minimization problem with a known
solution. Its variables are split into a shared block ``x0`` and one local
block ``xi`` per discipline.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from mdogen.errors import ConfigurationError, InvalidDimensionError, InvalidPartitionError

Array = np.ndarray


@dataclass(frozen=True, eq=False)
class DesignPartition:
    """Decomposition ``x = (x0, x1, ..., xN)`` with per-component bounds.

    ``block_sizes[0]`` is the size of the shared block and may be zero;
    every discipline block has at least one component.
    """

    block_sizes: tuple[int, ...]
    lower: Array
    upper: Array

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.block_sizes)
        object.__setattr__(self, "block_sizes", sizes)
        if len(sizes) < 3:
            raise InvalidPartitionError(
                f"at least two disciplines are required, got block sizes {sizes}"
            )
        if sizes[0] < 0 or any(s < 1 for s in sizes[1:]):
            raise InvalidPartitionError(f"invalid block sizes {sizes}")
        d = sum(sizes)
        lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (d,)).copy()
        upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (d,)).copy()
        if not np.all(lower < upper):
            raise InvalidPartitionError("every lower bound must be below its upper bound")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def uniform(cls, block_sizes: Sequence[int], lower=-2.0, upper=2.0) -> DesignPartition:
        return cls(tuple(block_sizes), lower, upper)

    @property
    def n_disciplines(self) -> int:
        return len(self.block_sizes) - 1

    @property
    def dim(self) -> int:
        return sum(self.block_sizes)

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.block_sizes)]))

    def block(self, i: int) -> slice:
        """Slice of block ``i`` (0 is the shared block) in the full vector."""
        off = self.offsets
        return slice(off[i], off[i + 1])

    def split(self, x) -> list[Array]:
        x = np.asarray(x, dtype=float)
        return [x[self.block(i)] for i in range(len(self.block_sizes))]

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


@dataclass(frozen=True)
class Constraint:
    """Inequality constraint ``g(...) <= 0``.

    ``discipline == 0`` means ``fun(x)`` on the full vector; otherwise
    ``fun(x0, xi)`` on the shared and local blocks of that discipline.
    ``jac`` follows the same calling convention and returns the Jacobian with
    respect to the arguments it receives (stacked column-wise for
    ``(x0, xi)``).
    """

    fun: Callable
    discipline: int = 0
    jac: Callable | None = None


class EvaluationRecord:
    """Monotone value/gradient counters of one function.

    Increments are serialized by a lock so a record may be shared by threads.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.values = 0
        self.gradients = 0

    def count_value(self, n: int = 1):
        with self._lock:
            self.values += n

    def count_gradient(self, n: int = 1):
        with self._lock:
            self.gradients += n

    def reset(self):
        with self._lock:
            self.values = 0
            self.gradients = 0

    def __repr__(self):
        return f"EvaluationRecord(values={self.values}, gradients={self.gradients})"


def counted(func: Callable, record: EvaluationRecord, kind: str = "value") -> Callable:
    """Wrap ``func`` so every call increments ``record``."""
    if kind not in ("value", "gradient"):
        raise ValueError(f"unknown counter kind {kind!r}")
    bump = record.count_value if kind == "value" else record.count_gradient

    def wrapper(*args, **kwargs):
        bump()
        return func(*args, **kwargs)

    wrapper.__wrapped__ = func
    return wrapper


@dataclass(eq=False)
class ReferenceProblem:
    """Box-constrained problem with a known global solution."""

    objective: Callable[[Array], float]
    gradient: Callable[[Array], Array]
    partition: DesignPartition
    known_solution: Array
    known_objective: float
    constraints: list[Constraint] = field(default_factory=list)
    known_local_minima: list[tuple[Array, float]] = field(default_factory=list)
    name: str = "problem"

    def __post_init__(self):
        self.known_solution = np.asarray(self.known_solution, dtype=float)
        if self.known_solution.shape != (self.partition.dim,):
            raise InvalidPartitionError("known solution does not match the partition")
        if not self.partition.contains(self.known_solution):
            raise ConfigurationError("known solution lies outside the bounds")
        for c in self.constraints:
            if not 0 <= c.discipline <= self.partition.n_disciplines:
                raise ConfigurationError(f"constraint on unknown discipline {c.discipline}")
        if self.constraints and np.any(self.constraint_values(self.known_solution) > 1e-12):
            raise ConfigurationError("known solution violates a constraint")

    @property
    def dim(self) -> int:
        return self.partition.dim

    def constraint_values(self, x) -> Array:
        """Concatenated values of all constraints at ``x`` (empty if none)."""
        blocks = self.partition.split(x)
        out = []
        for c in self.constraints:
            if c.discipline == 0:
                out.append(np.atleast_1d(c.fun(np.asarray(x, dtype=float))))
            else:
                out.append(np.atleast_1d(c.fun(blocks[0], blocks[c.discipline])))
        if not out:
            return np.zeros(0)
        return np.concatenate(out).astype(float)

    def constraint_jacobian(self, x) -> Array:
        """Jacobian of :meth:`constraint_values` with respect to the full ``x``."""
        part = self.partition
        blocks = part.split(x)
        rows = []
        for c in self.constraints:
            if c.jac is None:
                raise ConfigurationError("constraint has no Jacobian")
            if c.discipline == 0:
                rows.append(np.atleast_2d(c.jac(np.asarray(x, dtype=float))))
                continue
            local = np.atleast_2d(c.jac(blocks[0], blocks[c.discipline]))
            full = np.zeros((local.shape[0], part.dim))
            d0 = part.block_sizes[0]
            full[:, part.block(0)] = local[:, :d0]
            full[:, part.block(c.discipline)] = local[:, d0:]
            rows.append(full)
        if not rows:
            return np.zeros((0, part.dim))
        return np.vstack(rows)


def _check_dim(x) -> Array:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise InvalidDimensionError(
            f"the Rosenbrock function needs a vector of length >= 2, got shape {x.shape}"
        )
    return x


def rosenbrock_value(x) -> float:
    """Multidimensional Rosenbrock function, zero at ``(1, ..., 1)``."""
    x = _check_dim(x)
    head, tail = x[:-1], x[1:]
    return float(np.sum(100.0 * (tail - head**2) ** 2 + (1.0 - head) ** 2))


def rosenbrock_gradient(x) -> Array:
    x = _check_dim(x)
    head, tail = x[:-1], x[1:]
    inner = tail - head**2
    grad = np.zeros_like(x)
    grad[:-1] = -400.0 * head * inner - 2.0 * (1.0 - head)
    grad[1:] += 200.0 * inner
    return grad


def make_rosenbrock_problem(partition: DesignPartition | Sequence[int]) -> ReferenceProblem:
    """Rosenbrock problem over the given partition.

    A bare sequence of block sizes uses the default box ``[-2, 2]``.
    From dimension 4 on, ``(-1, 1, ..., 1)`` is registered as a local minimum
    with value 4.
    """
    if not isinstance(partition, DesignPartition):
        partition = DesignPartition.uniform(partition)
    d = partition.dim
    if d < 2:
        raise InvalidPartitionError("the Rosenbrock function needs at least two variables")
    local = []
    if d >= 4:
        x_local = np.ones(d)
        x_local[0] = -1.0
        local.append((x_local, 4.0))
    return ReferenceProblem(
        objective=rosenbrock_value,
        gradient=rosenbrock_gradient,
        partition=partition,
        known_solution=np.ones(d),
        known_objective=0.0,
        known_local_minima=local,
        name=f"rosenbrock-{d}",
    )
