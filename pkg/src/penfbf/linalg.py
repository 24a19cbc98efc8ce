"""Finite-dimensional Hilbert-space primitives.

Vectors are plain 1-d float64 numpy arrays; :func:`as_vector` is the single
validation gate (dimension, finiteness).  Linear continuous operators are
dense matrices wrapped in :class:`LinearMap`, which carries the adjoint and
an operator-norm estimate via power iteration on ``L* L``.

Everything here is an immutable value after construction and all operations
are pure, so objects can be shared freely between concurrent runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DimensionMismatchError",
    "PowerIterationError",
    "as_vector",
    "inner",
    "norm",
    "LinearMap",
    "adjoint",
    "operator_norm",
]


class DimensionMismatchError(ValueError):
    """Two objects live in incompatible spaces."""


class PowerIterationError(RuntimeError):
    """Operator-norm estimation did not converge.

    Attributes
    ----------
    last_estimate : float
        The singular-value estimate at the final iteration.
    """

    def __init__(self, message: str, last_estimate: float):
        super().__init__(message)
        self.last_estimate = last_estimate


def as_vector(x) -> np.ndarray:
    """Coerce ``x`` to a finite 1-d float64 array.

    Scalars become length-1 vectors.  Raises ``ValueError`` on non-finite
    entries or higher-dimensional input.
    """
    v = np.asarray(x, dtype=np.float64)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise ValueError(f"expected a vector, got array of shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector entries must be finite")
    return v


def inner(a, b) -> float:
    """Euclidean inner product ``sum_i a_i b_i``."""
    va, vb = as_vector(a), as_vector(b)
    if va.shape[0] != vb.shape[0]:
        raise DimensionMismatchError(
            f"inner product between dim {va.shape[0]} and dim {vb.shape[0]}"
        )
    return float(va @ vb)


def norm(a) -> float:
    """Euclidean norm induced by :func:`inner`."""
    return float(np.linalg.norm(as_vector(a)))


@dataclass(frozen=True)
class LinearMap:
    """Dense linear continuous operator between finite-dimensional spaces.

    The matrix is stored row-major with rows = codomain dimension and
    cols = domain dimension.  JSON serialization uses nested row-major
    lists.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError(f"LinearMap needs a 2-d matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("LinearMap entries must be finite")
        m = np.ascontiguousarray(m)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def domain_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def codomain_dim(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, x) -> np.ndarray:
        v = as_vector(x)
        if v.shape[0] != self.domain_dim:
            raise DimensionMismatchError(
                f"map expects dim {self.domain_dim}, got {v.shape[0]}"
            )
        return self.matrix @ v

    def adjoint_apply(self, y) -> np.ndarray:
        """Apply the adjoint: ``L* y`` with <L*y, x> = <y, Lx>."""
        v = as_vector(y)
        if v.shape[0] != self.codomain_dim:
            raise DimensionMismatchError(
                f"adjoint expects dim {self.codomain_dim}, got {v.shape[0]}"
            )
        return self.matrix.T @ v

    def to_json(self) -> list:
        return self.matrix.tolist()

    @classmethod
    def from_json(cls, rows) -> "LinearMap":
        return cls(np.asarray(rows, dtype=np.float64))


def adjoint(L: LinearMap) -> LinearMap:
    """Adjoint (matrix transpose); an involution."""
    return LinearMap(L.matrix.T.copy())


def operator_norm(L: LinearMap, tol: float = 1e-9, max_iter: int = 5000,
                  seed: int = 0) -> float:
    """Largest singular value of ``L`` by power iteration on ``L* L``.

    Uses a random unit start (deterministic for a fixed ``seed``) and stops
    when the eigen-residual of ``L* L`` drops below ``tol`` relative to the
    current Rayleigh quotient.

    Raises
    ------
    ValueError
        If ``L`` is the zero map or ``tol`` is not positive.
    PowerIterationError
        If the residual test is not met within ``max_iter`` sweeps; the
        error carries the last estimate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = L.matrix
    if not np.any(A):
        raise ValueError("operator_norm requires a nonzero map")
    rng = np.random.default_rng(seed)
    v = rng.normal(size=A.shape[1])
    v /= np.linalg.norm(v)
    theta = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start landed in the null space; re-draw
            v = rng.normal(size=A.shape[1])
            v /= np.linalg.norm(v)
            continue
        v = w / nw
        theta = float(v @ (A.T @ (A @ v)))
        residual = np.linalg.norm(A.T @ (A @ v) - theta * v)
        if residual <= tol * max(theta, np.finfo(float).tiny):
            return float(np.sqrt(theta))
    raise PowerIterationError(
        f"power iteration did not reach tol={tol} in {max_iter} sweeps",
        last_estimate=float(np.sqrt(max(theta, 0.0))),
    )
