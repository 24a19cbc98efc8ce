"""Convex minimization over the minimizers of a smooth penalty function.

Target problem:

    minimize  f(x) + sum_i (g_i box l_i)(L_i x) + h(x)
    over      x in argmin Psi,

with f proper convex lsc (prox-friendly), h smooth convex, g_i box l_i an
infimal convolution with l_i strongly convex (so its conjugate gradient is
Lipschitz), and Psi smooth convex with min Psi = 0.  The problem is lowered
to a primal-dual inclusion via the subdifferential calculus
A = prox-presented df, B_i^{-1} = prox of g_i*, D_i^{-1} = grad l_i*,
B = grad Psi, C = grad h, and solved by the penalty splitting scheme.

The module also hosts the penalty summability certificate for the quadratic
family Psi(x) = 0.5 ||Lx||^2 (where the conjugate has the closed form
0.5 <q, (L*L)^+ q> on ran L*) and the advisory qualification check.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .linalg import LinearMap, as_vector, norm
from .operators import LipschitzOperator, ResolventOperator, zero_operator
from .primal_dual import (Block, PdRunResult, PrimalDualProblem,
                          composite_lipschitz_constant, pd_run)
from .prox import ProxCatalogEntry, affine_kernel_projection
from .schedules import (Schedule, ScheduleFamily, build_power_law_schedule,
                        _eval_seq)
from .fbf import StoppingRule

__all__ = [
    "SmoothTerm",
    "PenaltyTerm",
    "quadratic_penalty",
    "MinimizationBlock",
    "MinimizationProblem",
    "lower_problem",
    "schedule_for",
    "solve_min",
    "MinimizeResult",
    "PenaltyCertificate",
    "penalty_certificate_quadratic",
    "penalty_certificate",
    "InvalidPenaltySampleError",
    "qualification_check",
    "QualificationReport",
]

_AUDIT_SAMP = 25
_RANGE_TOL = 1e-8


@dataclass(frozen=True)
class SmoothTerm:
    """Differentiable convex function given by value and Lipschitz gradient."""

    gradient: LipschitzOperator
    value: Callable[[np.ndarray], float] = field(repr=False)


@dataclass(frozen=True)
class PenaltyTerm:
    """Smooth convex penalty with min = 0; its minimizers form the constraint set.

    ``quadratic_map`` is set when the penalty is 0.5||Lx||^2, which unlocks
    the closed-form conjugate used by the summability certificate.
    """

    gradient: LipschitzOperator
    value: Callable[[np.ndarray], float] = field(repr=False)
    conjugate_value: Optional[Callable[[np.ndarray], float]] = field(
        default=None, repr=False)
    set_projection: Optional[Callable[[np.ndarray], np.ndarray]] = field(
        default=None, repr=False)
    quadratic_map: Optional[LinearMap] = None


def _pinv_gram(L: LinearMap):
    """Eigendecomposition-backed pseudo-inverse of L*L with spectral cutoff."""
    G = L.matrix.T @ L.matrix
    evals, evecs = np.linalg.eigh(G)
    cutoff = 1e-12 * max(float(evals[-1]), np.finfo(float).tiny)
    keep = evals > cutoff
    return evals, evecs, keep


def quadratic_penalty(L: LinearMap | np.ndarray) -> PenaltyTerm:
    """Penalty Psi(x) = 0.5 ||Lx||^2 with argmin Psi = ker L.

    Gradient L*Lx with Lipschitz constant ||L||^2 (exact from the Gram
    spectrum), exact kernel projection, and the conjugate
    Psi*(q) = 0.5 <q, (L*L)^+ q> for q in ran L* (+inf outside).
    """
    Lm = L if isinstance(L, LinearMap) else LinearMap(np.asarray(L, dtype=float))
    G = Lm.matrix.T @ Lm.matrix
    evals, evecs, keep = _pinv_gram(Lm)
    lip = float(max(evals[-1], 0.0))
    if lip == 0.0:
        raise ValueError("quadratic penalty needs a nonzero map")

    grad = LipschitzOperator(
        eval_fn=lambda x: G @ x, lipschitz_constant=lip, monotone=True,
        dim=Lm.domain_dim, audit=False,
    )

    def conj(q):
        qv = as_vector(q)
        coeffs = evecs.T @ qv
        if np.linalg.norm(coeffs[~keep]) > _RANGE_TOL:
            return math.inf
        return 0.5 * float(np.sum(coeffs[keep] ** 2 / evals[keep]))

    return PenaltyTerm(
        gradient=grad,
        value=lambda x: 0.5 * float(np.sum((Lm.matrix @ x) ** 2)),
        conjugate_value=conj,
        set_projection=affine_kernel_projection(Lm),
        quadratic_map=Lm,
    )


@dataclass(frozen=True)
class MinimizationBlock:
    """One composed term (g box l)(L x) of the objective.

    ``g`` comes from the prox catalog; ``l_conj_grad`` is the gradient of
    l*, monotone and Lipschitz with a strictly positive constant (an exact,
    unsmoothed block is rejected: the scheme needs l strongly convex).
    ``parallel_sum_value`` may register a closed form of g box l for
    objective traces.
    """

    g: ProxCatalogEntry
    l_conj_grad: LipschitzOperator
    L: LinearMap
    l_domain: str = "full_space"
    parallel_sum_value: Optional[Callable[[np.ndarray], float]] = field(
        default=None, repr=False)

    def __post_init__(self):
        if self.l_conj_grad.lipschitz_constant <= 0:
            raise ValueError(
                "block smoothing must have a finite, positive Lipschitz "
                "constant for grad l*; exact (unsmoothed) blocks are not "
                "representable"
            )
        if self.l_conj_grad.dim != self.L.codomain_dim:
            raise ValueError("grad l* must live on the codomain of L")


@dataclass(frozen=True)
class MinimizationProblem:
    """Problem data for penalty-constrained structured minimization."""

    f: ProxCatalogEntry
    h: Optional[SmoothTerm]
    blocks: tuple
    psi: PenaltyTerm
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.psi.gradient.dim != self.dim:
            raise ValueError("penalty gradient dimension mismatch")
        if self.h is not None and self.h.gradient.dim != self.dim:
            raise ValueError("smooth term dimension mismatch")
        for blk in self.blocks:
            if blk.L.domain_dim != self.dim:
                raise ValueError("block coupling map domain mismatch")
        self._audit_penalty()

    def _audit_penalty(self):
        """Check min Psi = 0 and grad Psi = 0 on the constraint set."""
        proj = self.psi.set_projection
        if proj is None:
            return
        rng = np.random.default_rng(7)
        for _ in range(_AUDIT_SAMP):
            u = as_vector(proj(rng.normal(size=self.dim)))
            if abs(self.psi.value(u)) > 1e-10:
                raise ValueError(
                    "penalty audit failed: Psi does not vanish on its argmin"
                )
            if norm(self.psi.gradient(u)) > 1e-8:
                raise ValueError(
                    "penalty audit failed: grad Psi does not vanish on argmin"
                )


def lower_problem(min_prob: MinimizationProblem) -> PrimalDualProblem:
    """Map functions to operators and assemble the primal-dual problem.

    A's resolvent is prox of f; each block's B_i^{-1} resolvent is the prox
    of g_i* (obtained from the prox of g_i through Moreau's decomposition);
    D_i^{-1} = grad l_i*; B = grad Psi; C = grad h (zero when h is absent).
    """
    f = min_prob.f
    A = ResolventOperator(
        resolve_fn=f.prox,
        strong_monotonicity=f.strong_convexity,
        dim=min_prob.dim,
    )
    C = (min_prob.h.gradient if min_prob.h is not None
         else zero_operator(min_prob.dim))
    blocks = []
    for blk in min_prob.blocks:
        g = blk.g
        conj_sc = 0.0 if g.grad_lipschitz in (None, 0.0) else 1.0 / g.grad_lipschitz
        blocks.append(Block(
            B_inverse=ResolventOperator(
                resolve_fn=g.conjugate_prox,
                strong_monotonicity=conj_sc,
                dim=blk.L.codomain_dim,
            ),
            D_inverse=blk.l_conj_grad,
            L=blk.L,
        ))
    return PrimalDualProblem(
        A=A, C=C, B=min_prob.psi.gradient, blocks=tuple(blocks),
        dim=min_prob.dim, M_projection=min_prob.psi.set_projection,
    )


def schedule_for(prob: PrimalDualProblem, family: ScheduleFamily,
                 require_summable_ratio: bool = False) -> Schedule:
    """Build a feasible schedule for a lowered problem.

    Uses mu from the penalty operator and the composite Lipschitz constant
    of the lifted smooth part for the eta term of the step-size condition.
    """
    beta_comp = composite_lipschitz_constant(prob)
    eta = math.inf if beta_comp == 0 else 1.0 / beta_comp
    return build_power_law_schedule(
        family, mu=prob.mu, eta=eta,
        require_summable_ratio=require_summable_ratio,
    )


@dataclass
class MinimizeResult:
    """Solver output plus objective traces.

    ``objective_trace`` rows are (n, F(x_n), Psi(x_n)) at the recorded
    iterations; block terms enter F only when every block registered a
    closed form (``objective_includes_blocks``), otherwise they are omitted.
    """

    x_final: np.ndarray
    z_final: np.ndarray
    duals_final: tuple
    run: PdRunResult
    objective_trace: list
    objective_includes_blocks: bool
    qualification: "QualificationReport"


def _objective(min_prob: MinimizationProblem, x: np.ndarray,
               include_blocks: bool) -> float:
    val = min_prob.f.value(x)
    if min_prob.h is not None:
        val += min_prob.h.value(x)
    if include_blocks:
        for blk in min_prob.blocks:
            val += blk.parallel_sum_value(blk.L(x))
    return float(val)


def solve_min(min_prob: MinimizationProblem,
              schedule: Schedule | ScheduleFamily,
              x0, x1, stop: StoppingRule,
              v0=None, v1=None, u_ref=None,
              check_schedule: bool = True) -> MinimizeResult:
    """Lower the minimization problem and run the primal-dual solver.

    ``schedule`` may be a ready schedule or a power-law family (then the
    feasibility constants are derived from the lowered operators).  Dual
    seeds default to zero.  Records the objective value and the penalty
    value along the recorded trace.
    """
    prob = lower_problem(min_prob)
    if isinstance(schedule, ScheduleFamily):
        schedule = schedule_for(prob, schedule)
    qual = qualification_check(min_prob)
    if not qual.certain:
        warnings.warn(
            "qualification condition undecidable from domain descriptors; "
            "solving the inclusion anyway (its zeros are optimal solutions)",
            RuntimeWarning,
        )
    zeros = [np.zeros(d) for d in prob.block_dims]
    v0 = zeros if v0 is None else v0
    v1 = [z.copy() for z in zeros] if v1 is None else v1
    include_blocks = all(
        blk.parallel_sum_value is not None for blk in min_prob.blocks
    )
    obj_trace = []

    def _observe(n, state):
        obj_trace.append((n,
                          _objective(min_prob, state.x_curr, include_blocks),
                          float(min_prob.psi.value(state.x_curr))))

    result = pd_run(prob, schedule, x0, v0, x1, v1, stop, u_ref=u_ref,
                    check_schedule=check_schedule, observer=_observe)
    return MinimizeResult(
        x_final=result.x_final,
        z_final=result.z_final,
        duals_final=result.duals_final,
        run=result,
        objective_trace=obj_trace,
        objective_includes_blocks=include_blocks,
        qualification=qual,
    )


class InvalidPenaltySampleError(ValueError):
    """A certificate sample lies outside the range of the normal cone.

    For the quadratic penalty family the normal-cone range is ran L*; a
    sample outside it makes the certificate sum +inf by the support-function
    convention, so it is rejected with the projection residual attached.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class PenaltyCertificate:
    """Partial sums of the penalty summability condition.

    ``partial_sums`` is the nondecreasing cumulative sequence (worst sample
    when several are given; every summand is nonnegative).  The verdict is
    ``converging`` when the per-iteration tail increment passes a Cauchy
    test, ``diverging`` when it does not, and ``inconclusive`` when the
    penalty is outside the family with a computable conjugate.
    """

    p_samples: tuple
    partial_sums: np.ndarray
    per_sample_totals: tuple
    verdict: str
    horizon: int
    ratio_partial_sum: float


_CERT_TAIL_WINDOW = 10
_CERT_REL_TOL = 1e-6


def _cauchy_tail_verdict(partial_sums: np.ndarray) -> str:
    total = float(partial_sums[-1])
    if total == 0.0:
        return "converging"
    w = min(_CERT_TAIL_WINDOW, partial_sums.size - 1)
    if w <= 0:
        return "diverging"
    mean_tail_inc = (total - float(partial_sums[-1 - w])) / w
    return "converging" if mean_tail_inc < _CERT_REL_TOL * total else "diverging"


def penalty_certificate_quadratic(L: LinearMap | np.ndarray,
                                  schedule: Schedule,
                                  p_samples,
                                  horizon: int) -> PenaltyCertificate:
    """Summability certificate for the quadratic penalty 0.5 ||Lx||^2.

    Evaluates the truncated sums

        sum_{n <= horizon} lambda_n beta_n Psi*(p / beta_n),

    using Psi*(q) = 0.5 <q, (L*L)^+ q> on ran L* (the support function of
    ker L vanishes there).  Samples must lie in ran L* up to a projection
    residual of 1e-8, otherwise :class:`InvalidPenaltySampleError` is
    raised.  The verdict applies a Cauchy tail test: converging iff the
    mean per-iteration increment over the last ten indices is below 1e-6 of
    the total (identically zero sums are converging).
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    Lm = L if isinstance(L, LinearMap) else LinearMap(np.asarray(L, dtype=float))
    evals, evecs, keep = _pinv_gram(Lm)
    samples = tuple(as_vector(p) for p in p_samples)
    quad = []
    for p in samples:
        coeffs = evecs.T @ p
        residual = float(np.linalg.norm(coeffs[~keep]))
        if residual > _RANGE_TOL:
            raise InvalidPenaltySampleError(
                f"sample leaves ran L* (projection residual {residual:.3e} > "
                f"{_RANGE_TOL}); its certificate sum is +inf", residual)
        quad.append(0.5 * float(np.sum(coeffs[keep] ** 2
                                       / np.maximum(evals[keep], np.finfo(float).tiny))))

    ns = np.arange(1, horizon + 1, dtype=float)
    lam = _eval_seq(schedule.lambda_, ns)
    bet = _eval_seq(schedule.beta, ns)
    ratio = lam / bet
    ratio_cum = np.cumsum(ratio)
    totals = tuple(q * float(ratio_cum[-1]) for q in quad)
    if quad:
        worst = int(np.argmax(totals))
        partial = quad[worst] * ratio_cum
    else:
        partial = np.zeros(horizon)
    return PenaltyCertificate(
        p_samples=samples,
        partial_sums=partial,
        per_sample_totals=totals,
        verdict=_cauchy_tail_verdict(partial),
        horizon=horizon,
        ratio_partial_sum=float(ratio_cum[-1]),
    )


def penalty_certificate(psi: PenaltyTerm, schedule: Schedule, p_samples,
                        horizon: int) -> PenaltyCertificate:
    """Certificate dispatch: closed form for the quadratic family, otherwise
    an inconclusive verdict with the lambda/beta partial sum attached."""
    if psi.quadratic_map is not None:
        return penalty_certificate_quadratic(psi.quadratic_map, schedule,
                                             p_samples, horizon)
    ns = np.arange(1, horizon + 1, dtype=float)
    ratio = _eval_seq(schedule.lambda_, ns) / _eval_seq(schedule.beta, ns)
    ratio_cum = np.cumsum(ratio)
    return PenaltyCertificate(
        p_samples=tuple(as_vector(p) for p in p_samples),
        partial_sums=np.zeros(horizon),
        per_sample_totals=(),
        verdict="inconclusive",
        horizon=horizon,
        ratio_partial_sum=float(ratio_cum[-1]),
    )


@dataclass(frozen=True)
class QualificationReport:
    """Outcome of the interiority-type qualification check.

    ``satisfied`` is asserted only when decidable from the domain
    descriptors (every block has dom g_i + dom l_i equal to the whole
    space); otherwise the check is inconclusive (``certain = False``) and
    solving proceeds, since any zero of the lowered inclusion is an optimal
    solution regardless.
    """

    satisfied: bool
    certain: bool
    circumstance: str


def qualification_check(min_prob: MinimizationProblem) -> QualificationReport:
    """Advisory qualification check from catalog domain descriptors.

    dom g_i + dom l_i covers the whole block space whenever either
    descriptor is ``full_space`` (Minkowski sum with the full space); with
    box/affine/unknown descriptors on both sides the condition is
    undecidable here and the report says so.
    """
    for blk in min_prob.blocks:
        if blk.g.domain != "full_space" and blk.l_domain != "full_space":
            return QualificationReport(
                satisfied=False, certain=False, circumstance="unknown")
    return QualificationReport(
        satisfied=True, certain=True, circumstance="full_domain")
