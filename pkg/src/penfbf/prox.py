"""Proximal-operator catalog.

Each entry bundles an analytically exact prox map with the function value,
a constructible subgradient, a domain descriptor, and the conjugate prox
derived through Moreau's decomposition.  Numeric prox computation for
arbitrary black-box functions is out of scope; everything is catalog-only
and composes through the translation/scaling calculus of
``scaled_translate``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .linalg import LinearMap, as_vector

__all__ = [
    "CatalogMissError",
    "ProxCatalogEntry",
    "moreau_conjugate_prox",
    "prox_catalog_lookup",
    "make_l1_norm",
    "make_squared_l2",
    "make_indicator_affine",
    "make_indicator_box",
    "make_quadratic_psd",
    "make_scaled_translate",
    "affine_kernel_projection",
]

CATALOG_NAMES = (
    "l1_norm",
    "squared_l2",
    "indicator_affine",
    "indicator_box",
    "quadratic_psd",
    "scaled_translate",
)

_FEAS_TOL = 1e-9


class CatalogMissError(KeyError):
    """Requested prox entry is not in the catalog."""


@dataclass(frozen=True)
class ProxCatalogEntry:
    """A proper convex lsc function with closed-form proximal map.

    ``prox(gamma, x)`` solves ``argmin_y f(y) + |y-x|^2 / (2 gamma)``
    exactly.  ``subgradient(x)`` returns one element of the subdifferential
    at x (or None where none is constructible).  ``domain`` is a coarse
    descriptor used by qualification checks: one of ``full_space``, ``box``,
    ``affine``, ``unknown``.
    """

    name: str
    parameters: dict = field(repr=False)
    prox: Callable[[float, np.ndarray], np.ndarray] = field(repr=False)
    value: Callable[[np.ndarray], float] = field(repr=False)
    subgradient: Optional[Callable[[np.ndarray], np.ndarray]] = field(repr=False)
    domain: str = "full_space"
    strong_convexity: float = 0.0
    grad_lipschitz: Optional[float] = None

    def conjugate_prox(self, gamma: float, x) -> np.ndarray:
        """Prox of the Fenchel conjugate, via Moreau's decomposition.

        ``prox_{gamma f*}(x) = x - gamma * prox_{f / gamma}(x / gamma)``.
        """
        v = as_vector(x)
        return v - gamma * self.prox(1.0 / gamma, v / gamma)


def moreau_conjugate_prox(entry: ProxCatalogEntry, gamma: float, x) -> float | np.ndarray:
    """The conjugate leg of Moreau's decomposition at x.

    Returns ``(x - prox_{gamma f}(x)) / gamma``, which equals
    ``prox_{(1/gamma) f*}(x / gamma)``; hence
    ``prox_{gamma f}(x) + gamma * moreau_conjugate_prox(entry, gamma, x) = x``
    holds exactly.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    v = as_vector(x)
    return (v - entry.prox(gamma, v)) / gamma


def _soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def make_l1_norm(weight: float = 1.0) -> ProxCatalogEntry:
    """f(x) = weight * ||x||_1; prox is soft thresholding."""
    if weight <= 0:
        raise ValueError("l1 weight must be positive")
    w = float(weight)
    return ProxCatalogEntry(
        name="l1_norm",
        parameters={"weight": w},
        prox=lambda gamma, x: _soft_threshold(x, gamma * w),
        value=lambda x: w * float(np.sum(np.abs(x))),
        subgradient=lambda x: w * np.sign(x),
        domain="full_space",
    )


def make_squared_l2(center=None, dim: Optional[int] = None) -> ProxCatalogEntry:
    """f(x) = 0.5 * ||x - c||^2; 1-strongly convex with 1-Lipschitz gradient."""
    c = None if center is None else as_vector(center)

    def _c(x):
        return np.zeros_like(x) if c is None else c

    return ProxCatalogEntry(
        name="squared_l2",
        parameters={"center": None if c is None else c.tolist()},
        prox=lambda gamma, x: (x + gamma * _c(x)) / (1.0 + gamma),
        value=lambda x: 0.5 * float(np.sum((x - _c(x)) ** 2)),
        subgradient=lambda x: x - _c(x),
        domain="full_space",
        strong_convexity=1.0,
        grad_lipschitz=1.0,
    )


def affine_kernel_projection(L: LinearMap) -> Callable[[np.ndarray], np.ndarray]:
    """Metric projection onto ker L, precomputed via pseudo-inverse.

    ``P = I - pinv(L) L`` (rank-revealing SVD under the hood), exact for any
    rank; for full-row-rank L this equals ``I - L*(L L*)^{-1} L``.
    """
    P = np.eye(L.domain_dim) - np.linalg.pinv(L.matrix, rcond=1e-12) @ L.matrix
    return lambda x: P @ as_vector(x)


def make_indicator_affine(L, b=None) -> ProxCatalogEntry:
    """Indicator of the affine set {x : Lx = b} (b = 0 gives ker L).

    The prox is the metric projection, independent of gamma; computed from a
    precomputed pseudo-inverse factorization.
    """
    Lm = L if isinstance(L, LinearMap) else LinearMap(np.asarray(L, dtype=float))
    bv = np.zeros(Lm.codomain_dim) if b is None else as_vector(b)
    if bv.shape[0] != Lm.codomain_dim:
        raise ValueError("offset dimension does not match the map codomain")
    Lp = np.linalg.pinv(Lm.matrix, rcond=1e-12)
    x_part = Lp @ bv
    if np.linalg.norm(Lm.matrix @ x_part - bv) > _FEAS_TOL * max(1.0, float(np.linalg.norm(bv))):
        raise ValueError("affine set {Lx = b} is empty")

    def _project(x):
        return x - Lp @ (Lm.matrix @ x - bv)

    def _value(x):
        r = float(np.linalg.norm(Lm.matrix @ x - bv))
        return 0.0 if r <= _FEAS_TOL * max(1.0, float(np.linalg.norm(x))) else np.inf

    return ProxCatalogEntry(
        name="indicator_affine",
        parameters={"L": Lm.to_json(), "b": bv.tolist()},
        prox=lambda gamma, x: _project(x),
        value=_value,
        subgradient=lambda x: np.zeros_like(x),
        domain="affine",
    )


def make_indicator_box(lower, upper) -> ProxCatalogEntry:
    """Indicator of the box {x : lower <= x <= upper}; prox is clipping."""
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if np.any(lo > hi):
        raise ValueError("box is empty (lower > upper)")

    def _value(x):
        inside = np.all(x >= lo - _FEAS_TOL) and np.all(x <= hi + _FEAS_TOL)
        return 0.0 if inside else np.inf

    return ProxCatalogEntry(
        name="indicator_box",
        parameters={"lower": np.atleast_1d(lo).tolist(),
                    "upper": np.atleast_1d(hi).tolist()},
        prox=lambda gamma, x: np.clip(x, lo, hi),
        value=_value,
        subgradient=lambda x: np.zeros_like(x),
        domain="box",
    )


def make_quadratic_psd(Q, b=None) -> ProxCatalogEntry:
    """f(x) = 0.5 x'Qx + b'x with Q symmetric positive semidefinite.

    The prox solves ``(I + gamma Q) p = x - gamma b`` through a one-time
    eigendecomposition of Q, so repeated calls with varying gamma stay cheap.
    """
    Qm = np.asarray(Q, dtype=float)
    if Qm.ndim != 2 or Qm.shape[0] != Qm.shape[1]:
        raise ValueError("Q must be square")
    if np.linalg.norm(Qm - Qm.T) > 1e-10 * max(1.0, float(np.linalg.norm(Qm))):
        raise ValueError("Q must be symmetric")
    bv = np.zeros(Qm.shape[0]) if b is None else as_vector(b)
    evals, evecs = np.linalg.eigh(Qm)
    if evals[0] < -1e-10 * max(1.0, evals[-1]):
        raise ValueError("Q must be positive semidefinite")
    evals = np.maximum(evals, 0.0)

    def _prox(gamma, x):
        rhs = evecs.T @ (x - gamma * bv)
        return evecs @ (rhs / (1.0 + gamma * evals))

    return ProxCatalogEntry(
        name="quadratic_psd",
        parameters={"Q": Qm.tolist(), "b": bv.tolist()},
        prox=_prox,
        value=lambda x: 0.5 * float(x @ (Qm @ x)) + float(bv @ x),
        subgradient=lambda x: Qm @ x + bv,
        domain="full_space",
        strong_convexity=float(evals[0]),
        grad_lipschitz=float(evals[-1]),
    )


def make_scaled_translate(base: ProxCatalogEntry, scale: float = 1.0,
                          shift=None, weight: float = 1.0) -> ProxCatalogEntry:
    """g(x) = weight * base(scale * x + shift), via the prox calculus.

    ``prox_{gamma g}(x) = (prox_{gamma w a^2 base}(a x + s) - s) / a``
    for scalar ``a = scale != 0``.
    """
    if scale == 0.0:
        raise ValueError("scale must be nonzero")
    if weight <= 0.0:
        raise ValueError("weight must be positive")
    a, w = float(scale), float(weight)

    def _s(x):
        return np.zeros_like(x) if shift is None else as_vector(shift)

    def _prox(gamma, x):
        z = base.prox(gamma * w * a * a, a * x + _s(x))
        return (z - _s(x)) / a

    def _value(x):
        return w * base.value(a * x + _s(x))

    sub = None
    if base.subgradient is not None:
        def sub(x):
            return w * a * base.subgradient(a * x + _s(x))

    sc = w * a * a * base.strong_convexity
    gl = None if base.grad_lipschitz is None else w * a * a * base.grad_lipschitz
    return ProxCatalogEntry(
        name="scaled_translate",
        parameters={"base": {"name": base.name, "parameters": base.parameters},
                    "scale": a,
                    "shift": None if shift is None else as_vector(shift).tolist(),
                    "weight": w},
        prox=_prox,
        value=_value,
        subgradient=sub,
        domain=base.domain,
        strong_convexity=sc,
        grad_lipschitz=gl,
    )


_FACTORIES = {
    "l1_norm": lambda p: make_l1_norm(weight=p.get("weight", 1.0)),
    "squared_l2": lambda p: make_squared_l2(center=p.get("center")),
    "indicator_affine": lambda p: make_indicator_affine(p["L"], p.get("b")),
    "indicator_box": lambda p: make_indicator_box(p["lower"], p["upper"]),
    "quadratic_psd": lambda p: make_quadratic_psd(p["Q"], p.get("b")),
    "scaled_translate": lambda p: make_scaled_translate(
        prox_catalog_lookup(p["base"]["name"], p["base"].get("parameters", {})),
        scale=p.get("scale", 1.0),
        shift=p.get("shift"),
        weight=p.get("weight", 1.0),
    ),
}


def prox_catalog_lookup(name: str, parameters: Optional[dict] = None) -> ProxCatalogEntry:
    """Instantiate a catalog entry by name and parameter dict.

    Raises :class:`CatalogMissError` for unknown names; this is the entry
    point used by the problem-config JSON loader.
    """
    if name not in _FACTORIES:
        raise CatalogMissError(
            f"unknown prox entry {name!r}; catalog has {sorted(_FACTORIES)}"
        )
    return _FACTORIES[name](parameters or {})
