"""Primal-dual penalty splitting for linearly composed parallel-sum models.

Target inclusion:

    0 in Ax + sum_i L_i* (B_i box D_i)(L_i x) + Cx + N_M(x),

with M the zero set of a monotone Lipschitz operator B.  The parallel sums
``B_i box D_i = (B_i^{-1} + D_i^{-1})^{-1}`` are never evaluated directly:
the scheme works with the resolvents of ``B_i^{-1}`` and forward evaluations
of ``D_i^{-1}``, updating one dual variable per block.

The same iteration can be realized by stacking (x, v_1, ..., v_m) into a
product space and running the plain penalty splitting on the lifted
operators; :func:`build_product_problem` constructs that lift explicitly and
the two paths agree to rounding, which is the central correctness property
tested for this module.  The direct path exists to avoid stacking
allocations and to expose per-block traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fbf import (DivergenceError, InclusionProblem, ScheduleViolationError,
                  StoppingRule, TraceRecord, _should_record)
from .linalg import LinearMap, as_vector, norm, operator_norm
from .operators import LipschitzOperator, ResolventOperator
from .schedules import Schedule

__all__ = [
    "Block",
    "PrimalDualProblem",
    "ProductState",
    "composite_lipschitz_constant",
    "build_product_problem",
    "stack",
    "unstack",
    "pd_initial_state",
    "pd_step",
    "pd_run",
    "PdRunResult",
]


@dataclass(frozen=True)
class Block:
    """One linearly composed parallel-sum term L* (B box D) L.

    ``B_inverse`` presents B^{-1} through its resolvent (for subdifferential
    blocks this resolvent is the prox of the conjugate function);
    ``D_inverse`` is the single-valued monotone Lipschitz inverse of the
    smoothing operator; ``L`` couples the block to the primal space.
    """

    B_inverse: ResolventOperator
    D_inverse: LipschitzOperator
    L: LinearMap

    def __post_init__(self):
        if not np.any(self.L.matrix):
            raise ValueError("block coupling map L must be nonzero")
        if self.B_inverse.dim != self.L.codomain_dim:
            raise ValueError("B_inverse dimension must match the codomain of L")
        if self.D_inverse.dim != self.L.codomain_dim:
            raise ValueError("D_inverse dimension must match the codomain of L")
        if not self.D_inverse.monotone:
            raise ValueError("D_inverse must be declared monotone")


@dataclass(frozen=True)
class PrimalDualProblem:
    """Problem data; operator norms of the couplings are cached at build time."""

    A: ResolventOperator
    C: LipschitzOperator
    B: LipschitzOperator
    blocks: tuple
    dim: int
    M_projection: Optional[Callable[[np.ndarray], np.ndarray]] = None
    coupling_norms: tuple = field(default=(), init=False)

    def __post_init__(self):
        if not (self.A.dim == self.C.dim == self.B.dim == self.dim):
            raise ValueError("primal operator dimensions disagree")
        if not self.C.monotone:
            raise ValueError("C must be declared monotone")
        if not self.B.monotone:
            raise ValueError("B must be declared monotone")
        for blk in self.blocks:
            if blk.L.domain_dim != self.dim:
                raise ValueError("block coupling map domain must match the primal dim")
        norms = tuple(operator_norm(blk.L) for blk in self.blocks)
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "coupling_norms", norms)

    @property
    def block_dims(self) -> tuple:
        return tuple(blk.L.codomain_dim for blk in self.blocks)

    @property
    def total_dim(self) -> int:
        return self.dim + sum(self.block_dims)

    @property
    def mu(self) -> float:
        lip = self.B.lipschitz_constant
        return math.inf if lip == 0 else 1.0 / lip


def composite_lipschitz_constant(prob: PrimalDualProblem) -> float:
    """Lipschitz constant of the lifted smooth part.

    ``max(nu, nu_1, ..., nu_m) + sqrt(sum_i ||L_i||^2)`` where nu is the
    Lipschitz constant of C and nu_i of the D_i^{-1}; uses the operator-norm
    estimates cached on the problem.  With no blocks this is just nu.
    """
    lips = [prob.C.lipschitz_constant]
    lips.extend(blk.D_inverse.lipschitz_constant for blk in prob.blocks)
    return max(lips) + math.sqrt(sum(nl * nl for nl in prob.coupling_norms))


def stack(x, vs) -> np.ndarray:
    """Concatenate primal and dual variables into one product-space vector."""
    parts = [as_vector(x)]
    parts.extend(as_vector(v) for v in vs)
    return np.concatenate(parts)


def unstack(w, prob: PrimalDualProblem):
    """Split a product-space vector into (x, [v_1, ..., v_m])."""
    v = as_vector(w)
    if v.shape[0] != prob.total_dim:
        raise ValueError("stacked vector has the wrong total dimension")
    x = v[:prob.dim]
    vs, off = [], prob.dim
    for d in prob.block_dims:
        vs.append(v[off:off + d])
        off += d
    return x, vs


def build_product_problem(prob: PrimalDualProblem) -> InclusionProblem:
    """Lift to an equivalent plain inclusion on the product space.

    The lifted resolvent acts blockwise (A on the primal slot, each
    B_i^{-1} on its dual slot); the lifted smooth part fuses Cx, all L_i x,
    and all L_i* v_i into one pass and is monotone with Lipschitz constant
    :func:`composite_lipschitz_constant`; the lifted penalty operator is
    (Bx, 0, ..., 0), whose zero set is M x G_1 x ... x G_m.
    """
    dims = prob.block_dims
    total = prob.total_dim
    beta_lift = composite_lipschitz_constant(prob)

    def _resolve(gamma, w):
        x, vs = unstack(w, prob)
        parts = [prob.A.resolve(gamma, x)]
        parts.extend(blk.B_inverse.resolve(gamma, v)
                     for blk, v in zip(prob.blocks, vs))
        return np.concatenate(parts)

    def _smooth(w):
        x, vs = unstack(w, prob)
        coupling = np.zeros(prob.dim)
        duals = []
        for blk, v in zip(prob.blocks, vs):
            coupling = coupling + blk.L.adjoint_apply(v)
            duals.append(blk.D_inverse(v) - blk.L(x))
        primal = prob.C(x) + coupling
        return np.concatenate([primal] + duals) if duals else primal

    def _penalty(w):
        x, _ = unstack(w, prob)
        out = np.zeros(total)
        out[:prob.dim] = prob.B(x)
        return out

    projection = None
    if prob.M_projection is not None:
        def projection(w):
            x, vs = unstack(w, prob)
            return np.concatenate([as_vector(prob.M_projection(x))] + list(vs)) \
                if vs else as_vector(prob.M_projection(x))

    A_tilde = ResolventOperator(
        resolve_fn=_resolve,
        strong_monotonicity=min(
            [prob.A.strong_monotonicity]
            + [blk.B_inverse.strong_monotonicity for blk in prob.blocks]
        ),
        dim=total,
    )
    D_tilde = LipschitzOperator(
        eval_fn=_smooth, lipschitz_constant=beta_lift, monotone=True, dim=total,
    )
    B_tilde = LipschitzOperator(
        eval_fn=_penalty, lipschitz_constant=prob.B.lipschitz_constant,
        monotone=True, dim=total,
    )
    return InclusionProblem(A=A_tilde, D=D_tilde, B=B_tilde, dim=total,
                            M_projection=projection)


@dataclass(frozen=True)
class ProductState:
    """Iteration state: primal x, duals (v_1, ..., v_m), previous copies,
    and the ergodic accumulators over the full product vector."""

    n: int
    x_prev: np.ndarray
    x_curr: np.ndarray
    v_prev: tuple
    v_curr: tuple
    p_curr: Optional[np.ndarray]
    q_curr: tuple
    z_accum_x: np.ndarray
    z_accum_v: tuple
    tau: float

    @property
    def ergodic_x(self) -> np.ndarray:
        return self.z_accum_x / self.tau

    @property
    def ergodic_v(self) -> tuple:
        return tuple(z / self.tau for z in self.z_accum_v)


def pd_initial_state(prob: PrimalDualProblem, schedule: Schedule,
                     x0, v0, x1, v1) -> ProductState:
    x0v, x1v = as_vector(x0), as_vector(x1)
    v0t = tuple(as_vector(v) for v in v0)
    v1t = tuple(as_vector(v) for v in v1)
    if len(v0t) != len(prob.blocks) or len(v1t) != len(prob.blocks):
        raise ValueError("need one dual seed per block")
    for v, d in zip(v0t + v1t, prob.block_dims * 2):
        if v.shape[0] != d:
            raise ValueError("dual seed dimension mismatch")
    lam1 = float(schedule.lambda_(1))
    return ProductState(
        n=1,
        x_prev=x0v, x_curr=x1v,
        v_prev=v0t, v_curr=v1t,
        p_curr=None, q_curr=(),
        z_accum_x=lam1 * x1v,
        z_accum_v=tuple(lam1 * v for v in v1t),
        tau=lam1,
    )


def pd_step(prob: PrimalDualProblem, schedule: Schedule,
            state: ProductState) -> ProductState:
    """One primal-dual iteration (direct path, no stacking).

    Matches the lifted iteration of :func:`build_product_problem` +
    ``fbf_step`` coordinate for coordinate.  Block updates are mutually
    independent; the coupling sums run in block order for reproducibility.
    """
    n = state.n
    lam = float(schedule.lambda_(n))
    bet = float(schedule.beta(n))
    al = float(schedule.alpha(n))
    x, x_prev = state.x_curr, state.x_prev

    Bx = prob.B(x)
    Cx = prob.C(x)
    Lx = [blk.L(x) for blk in prob.blocks]
    Dinv_v = [blk.D_inverse(v) for blk, v in zip(prob.blocks, state.v_curr)]
    Lad_v = np.zeros(prob.dim)
    for blk, v in zip(prob.blocks, state.v_curr):
        Lad_v = Lad_v + blk.L.adjoint_apply(v)

    p = prob.A.resolve(
        lam, x - lam * (Cx + Lad_v) - lam * bet * Bx + al * (x - x_prev)
    )
    q = tuple(
        blk.B_inverse.resolve(
            lam, v + lam * (lx - dv) + al * (v - v_prev)
        )
        for blk, v, v_prev, lx, dv in zip(
            prob.blocks, state.v_curr, state.v_prev, Lx, Dinv_v
        )
    )

    Bp = prob.B(p)
    Cp = prob.C(p)
    Lad_q = np.zeros(prob.dim)
    for blk, qi in zip(prob.blocks, q):
        Lad_q = Lad_q + blk.L.adjoint_apply(qi)
    x_next = lam * bet * (Bx - Bp) + lam * (Cx - Cp) + lam * (Lad_v - Lad_q) + p

    v_next = tuple(
        lam * (blk.L(p) - lx) + lam * (dv - blk.D_inverse(qi)) + qi
        for blk, lx, dv, qi in zip(prob.blocks, Lx, Dinv_v, q)
    )

    if not (np.all(np.isfinite(x_next))
            and all(np.all(np.isfinite(v)) for v in v_next)):
        raise DivergenceError(f"non-finite iterate at n={n+1}", n=n + 1)

    lam_next = float(schedule.lambda_(n + 1))
    return ProductState(
        n=n + 1,
        x_prev=x, x_curr=x_next,
        v_prev=state.v_curr, v_curr=v_next,
        p_curr=p, q_curr=q,
        z_accum_x=state.z_accum_x + lam_next * x_next,
        z_accum_v=tuple(z + lam_next * v for z, v in zip(state.z_accum_v, v_next)),
        tau=state.tau + lam_next,
    )


@dataclass
class PdRunResult:
    """Primal-dual run output; headline ergodic average is the primal block,
    the full product-space average is kept alongside."""

    trace: list
    x_final: np.ndarray
    z_final: np.ndarray
    duals_final: tuple
    z_duals_final: tuple
    p_final: Optional[np.ndarray]
    q_final: tuple
    iterations: int
    tau: float
    stop_reason: str
    step_norms: np.ndarray
    gap_norms: np.ndarray
    step_sq_cumsum: np.ndarray
    gap_sq_cumsum: np.ndarray
    alpha_history: np.ndarray
    phi: Optional[np.ndarray] = None
    fejer_excess_cumsum: Optional[np.ndarray] = None


def pd_run(prob: PrimalDualProblem, schedule: Schedule, x0, v0, x1, v1,
           stop: StoppingRule, u_ref=None,
           check_schedule: bool = True,
           observer: Optional[Callable[[int, ProductState], None]] = None
           ) -> PdRunResult:
    """Iterate :func:`pd_step`; contract mirrors the plain solver run.

    ``u_ref`` is a primal reference point; distances and the quasi-Fejer
    history are tracked for the primal iterate.  Gap and step norms are
    product-space norms (primal and dual parts combined); each trace record
    additionally carries the per-block dual gaps ||v_i - q_i||.
    ``observer(n, state)`` is invoked at every recorded iteration.
    """
    u = None if u_ref is None else as_vector(u_ref)
    state = pd_initial_state(prob, schedule, x0, v0, x1, v1)
    trace: list[TraceRecord] = []
    step_norms: list[float] = []
    gap_norms: list[float] = []
    alphas: list[float] = []
    phi_hist: list[float] = []
    fejer_cum: list[float] = []
    if u is not None:
        d0, d1 = state.x_prev - u, state.x_curr - u
        phi_hist.extend((float(d0 @ d0), float(d1 @ d1)))

    stop_reason = "max_iter"
    fejer_total = 0.0
    while state.n <= stop.max_iter:
        n = state.n
        if check_schedule and n >= schedule.n0:
            lhs = float(schedule.condition_lhs(n))
            if lhs > 1.0 + 1e-12:
                raise ScheduleViolationError(
                    f"step-size condition violated at n={n}: lhs={lhs:.6f} > 1"
                )
        try:
            new_state = pd_step(prob, schedule, state)
        except DivergenceError as err:
            raise DivergenceError(str(err), n=err.n, trace=trace) from None

        gap_sq = float(np.sum((state.x_curr - new_state.p_curr) ** 2))
        dual_gaps = []
        for v, qi in zip(state.v_curr, new_state.q_curr):
            dg = float(np.sum((v - qi) ** 2))
            dual_gaps.append(math.sqrt(dg))
            gap_sq += dg
        gap = math.sqrt(gap_sq)
        step_sq = float(np.sum((new_state.x_curr - state.x_curr) ** 2))
        for v_new, v_old in zip(new_state.v_curr, state.v_curr):
            step_sq += float(np.sum((v_new - v_old) ** 2))
        step = math.sqrt(step_sq)
        step_norms.append(step)
        gap_norms.append(gap)
        alphas.append(float(schedule.alpha(n)))

        excess = None
        if u is not None:
            d = new_state.x_curr - u
            phi_hist.append(float(d @ d))
            if len(phi_hist) >= 3:
                ph_next, ph, ph_prev = phi_hist[-1], phi_hist[-2], phi_hist[-3]
                excess = max(ph_next - ph - alphas[-1] * (ph - ph_prev), 0.0)
            else:
                excess = 0.0
            fejer_total += excess
            fejer_cum.append(fejer_total)

        n_final = new_state.n
        if _should_record(n_final) or stop.satisfied(gap, step) or n_final > stop.max_iter:
            trace.append(TraceRecord(
                n=n_final,
                lambda_n=float(schedule.lambda_(n)),
                beta_n=float(schedule.beta(n)),
                alpha_n=alphas[-1],
                step_norm=step,
                gap_norm=gap,
                iterate_dist=None if u is None else norm(new_state.x_curr - u),
                ergodic_dist=None if u is None else norm(new_state.ergodic_x - u),
                fejer_excess=excess,
                dual_gaps=tuple(dual_gaps),
            ))
            if observer is not None:
                observer(n_final, new_state)
        state = new_state
        if stop.satisfied(gap, step):
            stop_reason = "tolerance"
            break

    steps = np.asarray(step_norms)
    gaps = np.asarray(gap_norms)
    return PdRunResult(
        trace=trace,
        x_final=state.x_curr,
        z_final=state.ergodic_x,
        duals_final=state.v_curr,
        z_duals_final=state.ergodic_v,
        p_final=state.p_curr,
        q_final=state.q_curr,
        iterations=state.n - 1,
        tau=state.tau,
        stop_reason=stop_reason,
        step_norms=steps,
        gap_norms=gaps,
        step_sq_cumsum=np.cumsum(steps**2),
        gap_sq_cumsum=np.cumsum(gaps**2),
        alpha_history=np.asarray(alphas),
        phi=None if u is None else np.asarray(phi_hist),
        fejer_excess_cumsum=None if u is None else np.asarray(fejer_cum),
    )
