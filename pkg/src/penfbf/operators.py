"""Operator toolkit: Lipschitz forward operators and resolvent-presented
maximally monotone operators.

Set-valued monotone operators never appear as graphs here; they are accessed
exclusively through resolvents ``J_{gamma A} = (id + gamma A)^{-1}``, which is
the only access pattern the splitting iterations need.  Declared Lipschitz
constants and monotonicity flags are trusted inputs, but every constructed
forward operator is audited on random sample pairs and construction fails
fast on a violation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, InitVar
from typing import Callable

import numpy as np

from .linalg import as_vector, norm

__all__ = [
    "OperatorAuditError",
    "LipschitzOperator",
    "ResolventOperator",
    "zero_operator",
    "identity_resolvent",
    "normal_cone_resolvent",
    "resolvent_inverse_identity_check",
    "firm_nonexpansiveness_residual",
]

AUDIT_PAIRS = 100
AUDIT_TOL = 1e-8
_AUDIT_SEED = 20240901


class OperatorAuditError(RuntimeError):
    """A declared operator property failed its randomized construction audit."""


@dataclass(frozen=True)
class LipschitzOperator:
    """Single-valued operator with a declared Lipschitz constant.

    Parameters
    ----------
    eval_fn : callable
        Maps a 1-d array of length ``dim`` to one of length ``dim``.
    lipschitz_constant : float
        Declared global Lipschitz constant (0 is allowed and means the
        operator is constant, e.g. the zero operator).
    monotone : bool
        Declared monotonicity; audited when True.
    dim : int
        Dimension of the underlying space.
    audit : bool, keyword-only init flag
        Skip the construction audit when False (used for operators whose
        parts were already audited).
    """

    eval_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    lipschitz_constant: float
    monotone: bool
    dim: int
    audit: InitVar[bool] = True

    def __post_init__(self, audit: bool):
        if self.lipschitz_constant < 0:
            raise ValueError("Lipschitz constant must be nonnegative")
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if audit:
            self._run_audit()

    def __call__(self, x) -> np.ndarray:
        return self.eval_fn(as_vector(x))

    def _run_audit(self, pairs: int = AUDIT_PAIRS, tol: float = AUDIT_TOL):
        rng = np.random.default_rng(_AUDIT_SEED)
        for _ in range(pairs):
            x = rng.normal(size=self.dim)
            y = rng.normal(size=self.dim)
            fx, fy = self.eval_fn(x), self.eval_fn(y)
            gap = np.linalg.norm(fx - fy)
            allowed = self.lipschitz_constant * np.linalg.norm(x - y)
            if gap > allowed * (1.0 + tol) + tol:
                raise OperatorAuditError(
                    f"Lipschitz audit failed: |f(x)-f(y)|={gap:.3e} exceeds "
                    f"L|x-y|={allowed:.3e}"
                )
            if self.monotone:
                prod = float((x - y) @ (fx - fy))
                if prod < -tol * (1.0 + float((x - y) @ (x - y))):
                    raise OperatorAuditError(
                        f"monotonicity audit failed: <x-y, f(x)-f(y)> = {prod:.3e}"
                    )


@dataclass(frozen=True)
class ResolventOperator:
    """Maximally monotone operator presented through its resolvent.

    ``resolve(gamma, x)`` evaluates ``J_{gamma A}(x)``; it must be defined for
    every ``gamma > 0``.  ``strong_monotonicity`` is the modulus of strong
    monotonicity of the underlying operator (0 when merely monotone).
    """

    resolve_fn: Callable[[float, np.ndarray], np.ndarray] = field(repr=False)
    strong_monotonicity: float
    dim: int

    def __post_init__(self):
        if self.strong_monotonicity < 0:
            raise ValueError("strong monotonicity modulus must be nonnegative")
        if self.dim <= 0:
            raise ValueError("dim must be positive")

    def resolve(self, gamma: float, x) -> np.ndarray:
        if gamma <= 0:
            raise ValueError("resolvent parameter must be positive")
        return self.resolve_fn(gamma, as_vector(x))


def zero_operator(dim: int) -> LipschitzOperator:
    """The zero map; monotone with Lipschitz constant 0."""
    return LipschitzOperator(
        eval_fn=lambda x: np.zeros(dim),
        lipschitz_constant=0.0,
        monotone=True,
        dim=dim,
        audit=False,
    )


def identity_resolvent(dim: int) -> ResolventOperator:
    """Resolvent of the zero operator A = 0, i.e. the identity for every gamma."""
    return ResolventOperator(
        resolve_fn=lambda gamma, x: x.copy(),
        strong_monotonicity=0.0,
        dim=dim,
    )


def normal_cone_resolvent(M_projection: Callable[[np.ndarray], np.ndarray],
                          dim: int) -> ResolventOperator:
    """Resolvent of the normal cone of a nonempty closed convex set.

    For every ``gamma > 0`` the resolvent of ``gamma N_M`` is the metric
    projection onto M, so the returned operator ignores ``gamma``.
    """
    return ResolventOperator(
        resolve_fn=lambda gamma, x: as_vector(M_projection(x)),
        strong_monotonicity=0.0,
        dim=dim,
    )


def resolvent_inverse_identity_check(R: ResolventOperator,
                                     R_inv: ResolventOperator,
                                     gamma: float,
                                     samples) -> float:
    """Max residual of the inversion identity linking J_{gamma A} and A^{-1}.

    For operators A and A^{-1} presented by ``R`` and ``R_inv``, the identity

        J_{gamma A}(x) + gamma * J_{gamma^{-1} A^{-1}}(x / gamma) = x

    holds exactly; returns ``max_x ||lhs - x||`` over the samples.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    worst = 0.0
    for x in samples:
        v = as_vector(x)
        lhs = R.resolve(gamma, v) + gamma * R_inv.resolve(1.0 / gamma, v / gamma)
        worst = max(worst, norm(lhs - v))
    return worst


def firm_nonexpansiveness_residual(R: ResolventOperator, gamma: float,
                                   pairs: int, seed: int = 0) -> float:
    """Worst violation of ||Jx-Jy||^2 <= <x-y, Jx-Jy> over random pairs.

    Nonpositive (up to rounding) for the resolvent of any maximally monotone
    operator; used by property tests.
    """
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(pairs):
        x = rng.normal(size=R.dim)
        y = rng.normal(size=R.dim)
        jx = R.resolve(gamma, x)
        jy = R.resolve(gamma, y)
        d = jx - jy
        worst = max(worst, float(d @ d) - float((x - y) @ d))
    return worst
