"""Coupling functions, link functions and the linear closed-form solve.

Discipline ``i`` computes its coupling output from the shared variables, its
local variables and the other disciplines' outputs::

    linear:   h_i = a_i - B_i0 x0 - B_ii xi + sum_{j != i} C_ij y_j
    sigmoid:  h_i = m_i + (M_i - m_i) * logistic(slope * psi_i)

where ``psi_i`` is the linear expression above. Coefficients are stored
assembled: ``a`` (p), ``B`` (p x d) and ``C_off`` (p x p, zero diagonal
blocks), so that the coupling equations read ``(I - C_off) y = a - B x``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import expit

from mdogen.errors import ConfigurationError, InvalidDimensionError, SingularSystemError
from mdogen.problems import DesignPartition

Array = np.ndarray

RCOND_MIN = 1e-12
MAX_SAMPLING_ATTEMPTS = 10
POWER_ITERATIONS = 50
DEFAULT_SIGMOID_SLOPE = 0.3


@dataclass(frozen=True, eq=False)
class CouplingSpace:
    """Coupling space ``Y``: all of ``R^p`` or a box.

    ``lower``/``upper`` are ``None`` for the unbounded space.
    """

    sizes: tuple[int, ...]
    lower: Array | None = None
    upper: Array | None = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise ConfigurationError(f"coupling sizes must be >= 1, got {sizes}")
        object.__setattr__(self, "sizes", sizes)
        if (self.lower is None) != (self.upper is None):
            raise ConfigurationError("a box coupling space needs both bounds")
        if self.lower is not None:
            p = sum(sizes)
            lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (p,)).copy()
            upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (p,)).copy()
            if not np.all(lower < upper):
                raise ConfigurationError("box coupling space needs lower < upper")
            object.__setattr__(self, "lower", lower)
            object.__setattr__(self, "upper", upper)

    @classmethod
    def unbounded(cls, sizes: Sequence[int]) -> CouplingSpace:
        return cls(tuple(sizes))

    @classmethod
    def box(cls, sizes: Sequence[int], lower=-1.0, upper=1.0) -> CouplingSpace:
        return cls(tuple(sizes), lower, upper)

    @property
    def is_box(self) -> bool:
        return self.lower is not None

    @property
    def n_disciplines(self) -> int:
        return len(self.sizes)

    @property
    def dim(self) -> int:
        return sum(self.sizes)

    def block(self, i: int) -> slice:
        """Slice of discipline ``i`` (1-based) in the full coupling vector."""
        start = sum(self.sizes[: i - 1])
        return slice(start, start + self.sizes[i - 1])

    def midpoint(self) -> Array:
        if not self.is_box:
            return np.zeros(self.dim)
        return 0.5 * (self.lower + self.upper)

    def contains(self, y, tol: float = 1e-12) -> bool:
        if not self.is_box:
            return True
        y = np.asarray(y, dtype=float)
        return bool(np.all(y >= self.lower - tol) and np.all(y <= self.upper + tol))


def _check_shapes(partition: DesignPartition, space: CouplingSpace):
    if partition.n_disciplines != space.n_disciplines:
        raise InvalidDimensionError(
            f"{partition.n_disciplines} design blocks but {space.n_disciplines} coupling blocks"
        )


def _structure_masks(partition: DesignPartition, space: CouplingSpace) -> tuple[Array, Array]:
    """Boolean masks of the entries of ``B`` and ``C_off`` allowed to be nonzero."""
    p, d = space.dim, partition.dim
    b_mask = np.zeros((p, d), dtype=bool)
    c_mask = np.zeros((p, p), dtype=bool)
    for i in range(1, space.n_disciplines + 1):
        rows = space.block(i)
        b_mask[rows, partition.block(0)] = True
        b_mask[rows, partition.block(i)] = True
        c_mask[rows, :] = True
        c_mask[rows, rows] = False
    return b_mask, c_mask


@dataclass(eq=False)
class LinearCoupling:
    """Affine coupling functions with constant coefficients."""

    partition: DesignPartition
    space: CouplingSpace
    a: Array
    B: Array
    C_off: Array

    def __post_init__(self):
        _check_shapes(self.partition, self.space)
        p, d = self.space.dim, self.partition.dim
        self.a = np.array(self.a, dtype=float).reshape(p)
        self.B = np.array(self.B, dtype=float).reshape(p, d)
        self.C_off = np.array(self.C_off, dtype=float).reshape(p, p)
        b_mask, c_mask = _structure_masks(self.partition, self.space)
        if np.any(self.B[~b_mask] != 0.0):
            raise ConfigurationError("B has nonzero entries outside the (x0, xi) blocks")
        if np.any(self.C_off[~c_mask] != 0.0):
            raise ConfigurationError("C has nonzero entries in its diagonal blocks")
        self._alpha_beta = None

    @classmethod
    def from_blocks(cls, partition, space, a_blocks, b_shared, b_local, c_blocks) -> LinearCoupling:
        """Assemble from per-discipline blocks.

        ``a_blocks[i-1]`` is ``a_i``, ``b_shared[i-1]`` is ``B_i0``,
        ``b_local[i-1]`` is ``B_ii`` and ``c_blocks`` maps ``(i, j)`` to
        ``C_ij`` (missing pairs are zero).
        """
        _check_shapes(partition, space)
        p, d = space.dim, partition.dim
        a = np.zeros(p)
        B = np.zeros((p, d))
        C_off = np.zeros((p, p))
        for i in range(1, space.n_disciplines + 1):
            rows = space.block(i)
            pi = space.sizes[i - 1]
            a[rows] = np.reshape(a_blocks[i - 1], pi)
            B[rows, partition.block(0)] = np.reshape(b_shared[i - 1], (pi, partition.block_sizes[0]))
            B[rows, partition.block(i)] = np.reshape(b_local[i - 1], (pi, partition.block_sizes[i]))
        for (i, j), block in c_blocks.items():
            if i == j:
                raise ConfigurationError("C_ii is not a coupling coefficient")
            C_off[space.block(i), space.block(j)] = np.reshape(
                block, (space.sizes[i - 1], space.sizes[j - 1])
            )
        return cls(partition, space, a, B, C_off)

    @property
    def n_disciplines(self) -> int:
        return self.space.n_disciplines

    @property
    def C(self) -> Array:
        """Assembled system matrix ``I - C_off``."""
        return np.eye(self.space.dim) - self.C_off

    def block_a(self, i: int) -> Array:
        return self.a[self.space.block(i)]

    def block_B(self, i: int, j: int) -> Array:
        """``B_ij`` for ``j`` in ``{0, i}``."""
        return self.B[self.space.block(i), self.partition.block(j)]

    def block_C(self, i: int, j: int) -> Array:
        return self.C_off[self.space.block(i), self.space.block(j)]

    def affine_part(self, x) -> Array:
        """``a - B x``, the part of every ``h_i`` not depending on ``y``."""
        return self.a - self.B @ np.asarray(x, dtype=float)

    def evaluate(self, x, y) -> Array:
        return self.affine_part(x) + self.C_off @ np.asarray(y, dtype=float)

    def evaluate_rows(self, rows: slice, shift: Array, y: Array) -> Array:
        return shift[rows] + self.C_off[rows] @ y

    def derivative_scale(self, x, y) -> Array:
        return np.ones(self.space.dim)

    def alpha_beta(self) -> tuple[Array, Array]:
        if self._alpha_beta is None:
            C = self.C
            _check_invertible(C)
            rhs = np.column_stack([self.a, -self.B])
            sol = np.linalg.solve(C, rhs)
            self._alpha_beta = (sol[:, 0].copy(), sol[:, 1:].copy())
        return self._alpha_beta


@dataclass(eq=False)
class SigmoidCoupling:
    """Bounded coupling ``m + (M - m) * logistic(slope * psi)``.

    ``inner`` is the affine map ``psi`` and its coupling space gives the
    sizes; the box of ``space`` gives ``m`` and ``M``.
    """

    inner: LinearCoupling
    space: CouplingSpace
    slope: float = DEFAULT_SIGMOID_SLOPE

    def __post_init__(self):
        if not self.space.is_box:
            raise ConfigurationError("sigmoid couplings need a box coupling space")
        if self.space.sizes != self.inner.space.sizes:
            raise InvalidDimensionError("inner map and coupling space sizes differ")
        if not self.slope > 0:
            raise ConfigurationError("the logistic slope must be positive")

    @property
    def partition(self) -> DesignPartition:
        return self.inner.partition

    @property
    def n_disciplines(self) -> int:
        return self.space.n_disciplines

    @property
    def C_off(self) -> Array:
        return self.inner.C_off

    @property
    def B(self) -> Array:
        return self.inner.B

    def affine_part(self, x) -> Array:
        return self.inner.affine_part(x)

    def _squash(self, psi, rows=slice(None)) -> Array:
        lo, hi = self.space.lower[rows], self.space.upper[rows]
        return lo + (hi - lo) * expit(self.slope * psi)

    def evaluate(self, x, y) -> Array:
        return self._squash(self.inner.evaluate(x, y))

    def evaluate_rows(self, rows: slice, shift: Array, y: Array) -> Array:
        return self._squash(self.inner.evaluate_rows(rows, shift, y), rows)

    def derivative_scale(self, x, y) -> Array:
        """Diagonal of d h / d psi."""
        s = expit(self.slope * self.inner.evaluate(x, y))
        return (self.space.upper - self.space.lower) * self.slope * s * (1.0 - s)


Coupling = Union[LinearCoupling, SigmoidCoupling]


class LinkKind(str, enum.Enum):
    ADDITIVE = "additive"
    EXPONENTIAL = "exponential"
    LINEAR_EXPLICIT = "linear-explicit"


@dataclass(frozen=True, eq=False)
class LinkFunction:
    """Map ``L(x, y)`` equal to ``x`` whenever ``y`` solves the coupling equations."""

    kind: LinkKind
    scale: float = 1.0
    alpha: Array | None = None
    beta: Array | None = None

    @classmethod
    def additive(cls) -> LinkFunction:
        return cls(LinkKind.ADDITIVE)

    @classmethod
    def exponential(cls, scale: float = 1.0) -> LinkFunction:
        return cls(LinkKind.EXPONENTIAL, scale=float(scale))

    @classmethod
    def linear_explicit(cls, coupling: LinearCoupling) -> LinkFunction:
        if not isinstance(coupling, LinearCoupling):
            raise ConfigurationError("the explicit link exists for linear couplings only")
        alpha, beta = compute_alpha_beta(coupling)
        return cls(LinkKind.LINEAR_EXPLICIT, alpha=alpha, beta=beta)


def _check_invertible(C: Array):
    if not np.all(np.isfinite(C)):
        raise SingularSystemError("coupling matrix has non-finite entries")
    rcond = 1.0 / np.linalg.cond(C)
    if not rcond >= RCOND_MIN:
        raise SingularSystemError(f"coupling matrix is numerically singular (rcond={rcond:.3e})")


def _require_linear(coupling) -> LinearCoupling:
    if not isinstance(coupling, LinearCoupling):
        raise ConfigurationError("operation defined for linear couplings only")
    return coupling


def eval_coupling(coupling: Coupling, i: int, x0, xi, y_minus_i) -> Array:
    """Output ``y_i`` of discipline ``i`` (1-based).

    ``y_minus_i`` concatenates the outputs of the other disciplines in
    increasing order.
    """
    part = coupling.partition
    space = coupling.space
    n = coupling.n_disciplines
    if not 1 <= i <= n:
        raise InvalidDimensionError(f"discipline index {i} not in 1..{n}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    y_minus_i = np.atleast_1d(np.asarray(y_minus_i, dtype=float))
    if x0.size != part.block_sizes[0] or xi.size != part.block_sizes[i]:
        raise InvalidDimensionError("design blocks do not match the partition")
    if y_minus_i.size != space.dim - space.sizes[i - 1]:
        raise InvalidDimensionError("y_minus_i has the wrong size")
    rows = space.block(i)
    linear = coupling.inner if isinstance(coupling, SigmoidCoupling) else coupling
    psi = linear.block_a(i) - linear.block_B(i, 0) @ x0 - linear.block_B(i, i) @ xi
    others = np.delete(linear.C_off[rows], np.arange(space.dim)[rows], axis=1)
    psi = psi + others @ y_minus_i
    if isinstance(coupling, SigmoidCoupling):
        return coupling._squash(psi, rows)
    return psi


def solve_couplings_exact(coupling: LinearCoupling, x) -> Array:
    """Unique solution ``y = C^-1 (a - B x)`` of the linear coupling equations."""
    coupling = _require_linear(coupling)
    alpha, beta = coupling.alpha_beta()
    return alpha + beta @ np.asarray(x, dtype=float)


def compute_alpha_beta(coupling: LinearCoupling) -> tuple[Array, Array]:
    """``alpha = C^-1 a`` and ``beta = -C^-1 B``."""
    alpha, beta = _require_linear(coupling).alpha_beta()
    return alpha.copy(), beta.copy()


def spectral_radius_bound(matrix: Array, iterations: int = POWER_ITERATIONS) -> float:
    """Upper bound on the spectral radius of ``matrix``.

    Power iteration on ``|matrix|`` with the Collatz-Wielandt ratio
    ``max_k (|A| v)_k / v_k``, which bounds ``rho(|A|) >= rho(A)`` from above
    for any positive ``v``.
    """
    A = np.abs(np.asarray(matrix, dtype=float))
    if A.size == 0 or not A.any():
        return 0.0
    v = np.ones(A.shape[0])
    bound = np.inf
    for _ in range(iterations):
        w = A @ v
        bound = min(bound, float(np.max(w / v)))
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm + 1e-12
    return bound


def sample_linear_coupling(
    seed,
    partition: DesignPartition,
    coupling_space: CouplingSpace | None = None,
    coefficient_range: float = 1.0,
    contraction_target: float = 0.9,
) -> LinearCoupling:
    """Random linear coupling with iid uniform coefficients.

    The off-diagonal part of ``C`` is scaled down so that its spectral radius
    bound does not exceed ``contraction_target``, which makes Jacobi and
    Gauss-Seidel iterations contract. ``coupling_space`` defaults to the
    unbounded space with ``p_i = d_i``.
    """
    if not coefficient_range > 0:
        raise ConfigurationError("coefficient_range must be positive")
    if not 0 < contraction_target < 1:
        raise ConfigurationError("contraction_target must lie in (0, 1)")
    if coupling_space is None:
        coupling_space = CouplingSpace.unbounded(partition.block_sizes[1:])
    _check_shapes(partition, coupling_space)
    b_mask, c_mask = _structure_masks(partition, coupling_space)
    p, d = coupling_space.dim, partition.dim
    c = float(coefficient_range)
    last_error = None
    for attempt in range(MAX_SAMPLING_ATTEMPTS):
        rng = np.random.default_rng([int(seed), attempt])
        a = rng.uniform(-c, c, size=p)
        B = np.where(b_mask, rng.uniform(-c, c, size=(p, d)), 0.0)
        C_off = np.where(c_mask, rng.uniform(-c, c, size=(p, p)), 0.0)
        radius = spectral_radius_bound(C_off)
        if radius > contraction_target:
            C_off = C_off * (contraction_target / radius)
        coupling = LinearCoupling(partition, coupling_space, a, B, C_off)
        try:
            coupling.alpha_beta()
        except SingularSystemError as err:
            last_error = err
            continue
        return coupling
    raise SingularSystemError(
        f"no invertible coupling matrix after {MAX_SAMPLING_ATTEMPTS} attempts: {last_error}"
    )


def sample_sigmoid_coupling(
    seed,
    partition: DesignPartition,
    coupling_space: CouplingSpace | None = None,
    slope: float = DEFAULT_SIGMOID_SLOPE,
    coefficient_range: float = 1.0,
    contraction_target: float = 0.9,
) -> SigmoidCoupling:
    """Sigmoid coupling whose inner affine map is sampled like a linear one."""
    if coupling_space is None:
        coupling_space = CouplingSpace.box(partition.block_sizes[1:])
    inner = sample_linear_coupling(
        seed,
        partition,
        CouplingSpace.unbounded(coupling_space.sizes),
        coefficient_range,
        contraction_target,
    )
    return SigmoidCoupling(inner, coupling_space, slope)


def domain_membership(coupling: LinearCoupling, coupling_space: CouplingSpace | None, x) -> bool:
    """Whether the coupling solution at ``x`` lies in the coupling space."""
    coupling = _require_linear(coupling)
    space = coupling.space if coupling_space is None else coupling_space
    y = solve_couplings_exact(coupling, x)
    return space.contains(y, tol=1e-12)


def _embedding(partition: DesignPartition) -> Array:
    """``d x p`` matrix placing a coupling vector on the local design blocks."""
    d0 = partition.block_sizes[0]
    E = np.zeros((partition.dim, partition.dim - d0))
    E[d0:, :] = np.eye(partition.dim - d0)
    return E


def _check_additive_sizes(coupling: Coupling):
    if coupling.partition.block_sizes[1:] != coupling.space.sizes:
        raise ConfigurationError(
            "this link adds y_i to x_i and needs p_i == d_i for every discipline"
        )


def eval_link(link: LinkFunction, coupling: Coupling, x, y) -> Array:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if link.kind is LinkKind.EXPONENTIAL:
        r = coupling.evaluate(x, y) - y
        return x * np.exp(link.scale * np.linalg.norm(r))
    _check_additive_sizes(coupling)
    d0 = coupling.partition.block_sizes[0]
    out = x.copy()
    if link.kind is LinkKind.ADDITIVE:
        out[d0:] += coupling.evaluate(x, y) - y
    else:
        out[d0:] += y - link.alpha - link.beta @ x
    return out


def coupling_jacobians(coupling: Coupling, x, y) -> tuple[Array, Array]:
    """``(dh/dx, dh/dy)`` of the stacked coupling function."""
    scale = coupling.derivative_scale(x, y)[:, None]
    return -scale * coupling.B, scale * coupling.C_off


def link_jacobians(link: LinkFunction, coupling: Coupling, x, y) -> tuple[Array, Array]:
    """``(dL/dx, dL/dy)``.

    For the exponential link the norm term is not differentiable where
    ``h(x, y) = y``; its contribution is taken as zero there.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    part = coupling.partition
    d, p = part.dim, coupling.space.dim
    if link.kind is LinkKind.EXPONENTIAL:
        r = coupling.evaluate(x, y) - y
        norm = np.linalg.norm(r)
        factor = np.exp(link.scale * norm)
        dL_dx = factor * np.eye(d)
        dL_dy = np.zeros((d, p))
        if norm > 0.0:
            h_x, h_y = coupling_jacobians(coupling, x, y)
            grad_norm = r / norm
            outer = link.scale * factor * x[:, None]
            dL_dx += outer * (grad_norm @ h_x)[None, :]
            dL_dy += outer * (grad_norm @ (h_y - np.eye(p)))[None, :]
        return dL_dx, dL_dy
    _check_additive_sizes(coupling)
    E = _embedding(part)
    if link.kind is LinkKind.ADDITIVE:
        h_x, h_y = coupling_jacobians(coupling, x, y)
        return np.eye(d) + E @ h_x, E @ (h_y - np.eye(p))
    return np.eye(d) - E @ link.beta, E.copy()


# Serialization. Floats are written as hexadecimal strings so that a round trip
# is bit-exact.

def _encode_array(values: Array) -> dict:
    values = np.asarray(values, dtype=float)
    return {"shape": list(values.shape), "data": [float(v).hex() for v in values.ravel()]}


def _decode_array(doc) -> Array:
    data = [float.fromhex(v) if isinstance(v, str) else float(v) for v in doc["data"]]
    return np.array(data, dtype=float).reshape(doc["shape"])


def coupling_to_dict(coupling: Coupling) -> dict:
    part = coupling.partition
    space = coupling.space
    linear = coupling.inner if isinstance(coupling, SigmoidCoupling) else coupling
    doc = {
        "family": "sigmoid" if isinstance(coupling, SigmoidCoupling) else "linear",
        "block_sizes": list(part.block_sizes),
        "design_lower": _encode_array(part.lower),
        "design_upper": _encode_array(part.upper),
        "coupling_sizes": list(space.sizes),
        "coupling_lower": None if not space.is_box else _encode_array(space.lower),
        "coupling_upper": None if not space.is_box else _encode_array(space.upper),
        "a": _encode_array(linear.a),
        "B": _encode_array(linear.B),
        "C_off": _encode_array(linear.C_off),
    }
    if isinstance(coupling, SigmoidCoupling):
        doc["slope"] = float(coupling.slope).hex()
    return doc


def coupling_from_dict(doc: dict) -> Coupling:
    try:
        part = DesignPartition(
            tuple(doc["block_sizes"]),
            _decode_array(doc["design_lower"]),
            _decode_array(doc["design_upper"]),
        )
        sizes = tuple(doc["coupling_sizes"])
        if doc.get("coupling_lower") is None:
            space = CouplingSpace(sizes)
        else:
            space = CouplingSpace(
                sizes, _decode_array(doc["coupling_lower"]), _decode_array(doc["coupling_upper"])
            )
        a, B, C_off = (_decode_array(doc[k]) for k in ("a", "B", "C_off"))
        family = doc["family"]
    except (KeyError, TypeError, ValueError) as err:
        if isinstance(err, ConfigurationError):
            raise
        raise ConfigurationError(f"malformed coupling document: {err}") from err
    if family == "linear":
        return LinearCoupling(part, space, a, B, C_off)
    if family == "sigmoid":
        slope = doc.get("slope", DEFAULT_SIGMOID_SLOPE)
        slope = float.fromhex(slope) if isinstance(slope, str) else float(slope)
        inner = LinearCoupling(part, CouplingSpace(sizes), a, B, C_off)
        return SigmoidCoupling(inner, space, slope)
    raise ConfigurationError(f"unknown coupling family {family!r}")


def dumps_coupling(coupling: Coupling) -> str:
    return json.dumps(coupling_to_dict(coupling), indent=2)


def loads_coupling(text: str) -> Coupling:
    return coupling_from_dict(json.loads(text))
