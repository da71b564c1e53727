"""Linear forward operators, their adjoints and the proximal data-consistency solve."""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np

from cascadesr.errors import ConfigurationError, ConvergenceError, ShapeError
from cascadesr.grid import Field, Shape
from cascadesr.pyramid import DEFAULT_KERNEL, PyramidKernel, down_array, separable_apply

MAX_DENSE_SIZE = 4096
DEFAULT_CG_TOL = 1e-8
DEFAULT_CG_MAX_ITER = 500


class MapKind(str, Enum):
    DOWN2 = "down2"
    IDENTITY = "identity"
    COMPOSE = "compose"


@dataclass(frozen=True, eq=False)
class LinearMap:
    """A linear operator on Fields with an exact adjoint.

    Maps are shape-polymorphic until bound: ``in_shape`` is None for a map
    built without a shape, and :meth:`bind` fixes it. ``parts`` holds the
    factors of a ``COMPOSE`` map, applied right to left.
    """

    kind: MapKind
    in_shape: Optional[Shape] = None
    parts: Tuple["LinearMap", ...] = ()
    kernel: PyramidKernel = field(default=DEFAULT_KERNEL)

    def output_shape(self, in_shape: Shape) -> Shape:
        h, w, c = in_shape
        if self.kind == MapKind.IDENTITY:
            return (h, w, c)
        if self.kind == MapKind.DOWN2:
            if h % 2 or w % 2:
                raise ShapeError(f"Down2 needs even height and width, got {in_shape}")
            return (h // 2, w // 2, c)
        shape = (h, w, c)
        for part in reversed(self.parts):
            shape = part.output_shape(shape)
        return shape

    @property
    def out_shape(self) -> Shape:
        if self.in_shape is None:
            raise ConfigurationError(f"{self!r} is not bound to an input shape")
        return self.output_shape(self.in_shape)

    def bind(self, in_shape: Shape) -> "LinearMap":
        in_shape = tuple(int(s) for s in in_shape)
        self.output_shape(in_shape)
        return replace(self, in_shape=in_shape)

    def apply_array(self, data: np.ndarray) -> np.ndarray:
        if self.kind == MapKind.IDENTITY:
            return data
        if self.kind == MapKind.DOWN2:
            return down_array(data, self.kernel)
        for part in reversed(self.parts):
            data = part.apply_array(data)
        return data

    def adjoint_array(self, data: np.ndarray) -> np.ndarray:
        if self.kind == MapKind.IDENTITY:
            return data
        if self.kind == MapKind.DOWN2:
            h, w = data.shape[:2]
            rows = self.kernel.down_matrix(2 * h)
            cols = self.kernel.down_matrix(2 * w)
            return separable_apply(rows.T, cols.T, data)
        for part in self.parts:
            data = part.adjoint_array(data)
        return data

    def apply(self, x: Field) -> Field:
        if self.in_shape is not None and x.shape != self.in_shape:
            raise ShapeError(f"{self!r} expects input {self.in_shape}, got {x.shape}")
        self.output_shape(x.shape)
        return Field(self.apply_array(x.data))

    def adjoint(self, y: Field) -> Field:
        if self.in_shape is not None and y.shape != self.out_shape:
            raise ShapeError(f"{self!r} adjoint expects {self.out_shape}, got {y.shape}")
        return Field(self.adjoint_array(y.data))

    def __repr__(self) -> str:
        if self.kind == MapKind.COMPOSE:
            inner = ", ".join(part.kind.value for part in self.parts)
            return f"LinearMap(compose[{inner}], in_shape={self.in_shape})"
        return f"LinearMap({self.kind.value}, in_shape={self.in_shape})"


@dataclass(frozen=True, eq=False)
class Measurement:
    """y = H x + z with z ~ N(0, noise_sigma^2 I); `op` must be bound."""

    y: Field
    op: LinearMap
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ConfigurationError(
                f"noise_sigma must be non-negative, got {self.noise_sigma}"
            )
        if self.y.shape != self.op.out_shape:
            raise ShapeError(
                f"Measurement y has shape {self.y.shape}, operator outputs {self.op.out_shape}"
            )

    @property
    def x_shape(self) -> Shape:
        return self.op.in_shape


def make_identity(in_shape: Optional[Shape] = None) -> LinearMap:
    op = LinearMap(kind=MapKind.IDENTITY)
    return op if in_shape is None else op.bind(in_shape)


def make_down2(
    in_shape: Optional[Shape] = None, kernel: PyramidKernel = DEFAULT_KERNEL
) -> LinearMap:
    """H_2: the pyramid's blur-and-decimate as a LinearMap."""
    op = LinearMap(kind=MapKind.DOWN2, kernel=kernel)
    return op if in_shape is None else op.bind(in_shape)


def compose(*maps: LinearMap, in_shape: Optional[Shape] = None) -> LinearMap:
    """``compose(A, B)`` applies B first, then A."""
    parts = tuple(replace(m, in_shape=None) for m in maps)
    op = LinearMap(kind=MapKind.COMPOSE, parts=parts)
    return op if in_shape is None else op.bind(in_shape)


def make_down2_chain(count: int, in_shape: Optional[Shape] = None) -> LinearMap:
    """`count` copies of Down2; Identity for 0, a bare Down2 for 1."""
    if count < 0:
        raise ConfigurationError(f"Down2 count must be non-negative, got {count}")
    if count == 0:
        return make_identity(in_shape)
    if count == 1:
        return make_down2(in_shape)
    return compose(*([make_down2()] * count), in_shape=in_shape)


def make_sr_operator(factor: int, in_shape: Optional[Shape] = None) -> LinearMap:
    if factor < 2 or factor & (factor - 1):
        raise ConfigurationError(
            f"Super-resolution factor must be a power of two ≥ 2, got {factor}"
        )
    return make_down2_chain(int(math.log2(factor)), in_shape)


def materialize_dense(m: LinearMap) -> np.ndarray:
    """Matrix M with M @ vec(x) == vec(m.apply(x)), built by impulse probing."""
    if m.in_shape is None:
        raise ConfigurationError("materialize_dense needs a bound LinearMap")
    n_in = int(np.prod(m.in_shape))
    if n_in > MAX_DENSE_SIZE:
        raise ConfigurationError(
            f"Input size {n_in} exceeds the dense materialization limit {MAX_DENSE_SIZE}"
        )
    n_out = int(np.prod(m.out_shape))
    matrix = np.zeros((n_out, n_in))
    impulse = np.zeros(n_in)
    for j in range(n_in):
        impulse[j] = 1.0
        matrix[:, j] = m.apply_array(impulse.reshape(m.in_shape)).ravel()
        impulse[j] = 0.0
    return matrix


def conjugate_gradient(
    normal_op: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    x0: np.ndarray,
    tol: float = DEFAULT_CG_TOL,
    max_iter: int = DEFAULT_CG_MAX_ITER,
) -> Tuple[np.ndarray, int]:
    """Solve A x = rhs for symmetric positive definite A.

    Stops when ||rhs - A x|| <= tol * ||rhs|| (absolute when rhs is zero).

    Returns
    -------
    x : np.ndarray
        The solution, same shape as `rhs`.
    iterations : int
        Number of CG iterations performed.
    """

    rhs_norm = np.linalg.norm(rhs)
    threshold = tol * rhs_norm if rhs_norm > 0 else tol
    x = x0.copy()
    r = rhs - normal_op(x)
    rs = np.vdot(r, r)
    if math.sqrt(rs) <= threshold:
        return x, 0
    p = r.copy()
    for iteration in range(1, max_iter + 1):
        ap = normal_op(p)
        alpha = rs / np.vdot(p, ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = np.vdot(r, r)
        if math.sqrt(rs_new) <= threshold:
            return x, iteration
        p = r + (rs_new / rs) * p
        rs = rs_new
    residual = math.sqrt(rs) / (rhs_norm if rhs_norm > 0 else 1.0)
    raise ConvergenceError(residual=residual, iterations=max_iter, tol=tol)


def prox_array(
    m: Measurement,
    x0_hat: np.ndarray,
    tau: float,
    tol: float = DEFAULT_CG_TOL,
    max_iter: int = DEFAULT_CG_MAX_ITER,
) -> np.ndarray:
    op = m.op

    def normal(v):
        return op.adjoint_array(op.apply_array(v)) + tau * v

    rhs = op.adjoint_array(m.y.data) + tau * x0_hat
    solution, _ = conjugate_gradient(normal, rhs, x0_hat, tol=tol, max_iter=max_iter)
    return solution


def prox_data_consistency(
    m: Measurement,
    x0_hat: Field,
    tau: float,
    tol: float = DEFAULT_CG_TOL,
    max_iter: int = DEFAULT_CG_MAX_ITER,
) -> Field:
    """argmin_x ||y - Hx||^2 + tau ||x - x0_hat||^2, solved with CG.

    Parameters
    ----------
    m : Measurement
        Holds y and the bound operator H.
    x0_hat : Field
        Prior estimate, shape ``m.op.in_shape``.
    tau : float
        Prior weight, strictly positive.
    tol, max_iter :
        CG relative residual target and iteration cap.
    """

    if tau <= 0:
        raise ConfigurationError(f"tau must be positive, got {tau}")
    if x0_hat.shape != m.x_shape:
        raise ShapeError(
            f"x0_hat has shape {x0_hat.shape}, operator expects {m.x_shape}"
        )
    return Field(prox_array(m, x0_hat.data, tau, tol=tol, max_iter=max_iter))
