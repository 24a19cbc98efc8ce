"""Inertial forward-backward-forward penalty iteration.

Solves the monotone inclusion 0 in Ax + Dx + N_M(x), where A is maximally
monotone (given through its resolvent), D is monotone Lipschitz, and M is
the zero set of the monotone Lipschitz operator B.  One iteration reads

    p_n   = J_{lambda_n A}(x_n - lambda_n D x_n - lambda_n beta_n B x_n
                           + alpha_n (x_n - x_{n-1}))
    x_n+1 = lambda_n beta_n (B x_n - B p_n) + lambda_n (D x_n - D p_n) + p_n,

a forward-backward-forward structure with exactly two evaluations of B and
of D per iteration.  With B = 0 and alpha = 0 this is Tseng's splitting for
0 in Ax + Dx; the penalty term beta_n B x_n steers iterates toward M without
ever projecting onto it.

Absent strong monotonicity, only the weighted ergodic averages
z_n = (1/tau_n) sum_k lambda_k x_k carry a convergence guarantee, so the
solver reports both the final iterate and the final ergodic average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .linalg import as_vector, norm
from .operators import LipschitzOperator, ResolventOperator
from .schedules import Schedule

__all__ = [
    "DivergenceError",
    "InclusionProblem",
    "SolverState",
    "TraceRecord",
    "StoppingRule",
    "RunResult",
    "initial_state",
    "fbf_step",
    "run",
    "vi_residual",
    "fejer_diagnostic",
    "FejerReport",
]

TRACE_DENSE_LIMIT = 10**4


class DivergenceError(RuntimeError):
    """An iterate left the realm of finite floats.

    Attributes
    ----------
    n : int
        Iteration at which divergence was detected.
    trace : list[TraceRecord] | None
        Partial trace collected up to the failure, when available.
    """

    def __init__(self, message: str, n: int, trace=None):
        super().__init__(message)
        self.n = n
        self.trace = trace


class ScheduleViolationError(RuntimeError):
    """The schedule failed its step-size condition at runtime."""


@dataclass(frozen=True)
class InclusionProblem:
    """Data of the inclusion 0 in Ax + Dx + N_M(x).

    ``A`` is the resolvent-presented maximally monotone operator, ``D`` the
    single-valued monotone Lipschitz part, ``B`` the monotone Lipschitz
    operator whose zero set is the constraint set M.  ``M_projection`` is an
    optional exact projection onto M used only for diagnostics.
    """

    A: ResolventOperator
    D: LipschitzOperator
    B: LipschitzOperator
    dim: int
    M_projection: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if not (self.A.dim == self.D.dim == self.B.dim == self.dim):
            raise ValueError("operator dimensions disagree with the problem dimension")
        if not self.D.monotone:
            raise ValueError("D must be declared monotone")
        if not self.B.monotone:
            raise ValueError("B must be declared monotone")

    @property
    def mu(self) -> float:
        """Inverse Lipschitz constant of B (inf for B = 0)."""
        lip = self.B.lipschitz_constant
        return math.inf if lip == 0 else 1.0 / lip

    @property
    def eta(self) -> float:
        """Inverse Lipschitz constant of D (inf for D = 0)."""
        lip = self.D.lipschitz_constant
        return math.inf if lip == 0 else 1.0 / lip


@dataclass(frozen=True)
class SolverState:
    """State after completing iteration n (x_curr is x_n).

    ``z_accum`` accumulates sum_k lambda_k x_k and ``tau`` the weight total,
    so the ergodic average is ``z_accum / tau``.  ``phi_last`` keeps the last
    three squared distances to an optional reference point.
    """

    n: int
    x_prev: np.ndarray
    x_curr: np.ndarray
    p_curr: Optional[np.ndarray]
    z_accum: np.ndarray
    tau: float
    phi_last: Optional[tuple] = None

    @property
    def ergodic(self) -> np.ndarray:
        return self.z_accum / self.tau


def initial_state(schedule: Schedule, x0, x1, u_ref=None) -> SolverState:
    """State at n = 1 from the two seeds (default usage: x0 = x1)."""
    v0, v1 = as_vector(x0), as_vector(x1)
    if v0.shape != v1.shape:
        raise ValueError("seeds must have equal dimension")
    lam1 = float(schedule.lambda_(1))
    phi = None
    if u_ref is not None:
        u = as_vector(u_ref)
        phi = (float((v0 - u) @ (v0 - u)), float((v1 - u) @ (v1 - u)))
    return SolverState(
        n=1,
        x_prev=v0,
        x_curr=v1,
        p_curr=None,
        z_accum=lam1 * v1,
        tau=lam1,
        phi_last=phi,
    )


def fbf_step(prob: InclusionProblem, schedule: Schedule,
             state: SolverState, u_ref=None) -> SolverState:
    """Advance one iteration: returns the state at n+1.

    The forward values B(x_n) and D(x_n) are evaluated once and reused in
    the correction step, keeping the per-iteration cost at two evaluations
    of each forward operator.
    """
    n = state.n
    lam = float(schedule.lambda_(n))
    bet = float(schedule.beta(n))
    al = float(schedule.alpha(n))
    x, x_prev = state.x_curr, state.x_prev

    Bx = prob.B(x)
    Dx = prob.D(x)
    p = prob.A.resolve(lam, x - lam * Dx - lam * bet * Bx + al * (x - x_prev))
    Bp = prob.B(p)
    Dp = prob.D(p)
    x_next = lam * bet * (Bx - Bp) + lam * (Dx - Dp) + p

    if not np.all(np.isfinite(x_next)):
        raise DivergenceError(f"non-finite iterate at n={n+1}", n=n + 1)

    lam_next = float(schedule.lambda_(n + 1))
    phi = None
    if state.phi_last is not None:
        u = as_vector(u_ref) if u_ref is not None else None
        if u is None:
            raise ValueError("state tracks a reference point; pass u_ref")
        d = x_next - u
        phi = (*state.phi_last[-2:], float(d @ d))
    return SolverState(
        n=n + 1,
        x_prev=x,
        x_curr=x_next,
        p_curr=p,
        z_accum=state.z_accum + lam_next * x_next,
        tau=state.tau + lam_next,
        phi_last=phi,
    )


@dataclass(frozen=True)
class TraceRecord:
    """Per-iteration diagnostics (entries are all finite)."""

    n: int
    lambda_n: float
    beta_n: float
    alpha_n: float
    step_norm: float
    gap_norm: float
    iterate_dist: Optional[float] = None
    ergodic_dist: Optional[float] = None
    fejer_excess: Optional[float] = None
    dual_gaps: tuple = ()


@dataclass(frozen=True)
class StoppingRule:
    """Stop at max_iter, or earlier once the residual pair is small.

    The computable residual ||x_n - p_n|| is guaranteed to vanish along the
    iteration, so the early-stop rule is
    ``gap_norm <= tol_gap AND step_norm <= tol_step``.
    """

    max_iter: int
    tol_gap: float = 1e-8
    tol_step: float = 1e-8

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    def satisfied(self, gap_norm: float, step_norm: float) -> bool:
        return gap_norm <= self.tol_gap and step_norm <= self.tol_step


@dataclass
class RunResult:
    """Output of a solver run.

    ``trace`` is density-thinned (every iteration up to 10^4, then every
    ceil(n/10^4)-th); the scalar per-iteration histories (``step_norms``,
    ``gap_norms``, cumulative squared sums, ``phi``) are kept in full.
    """

    trace: list
    x_final: np.ndarray
    z_final: np.ndarray
    p_final: Optional[np.ndarray]
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

    @property
    def fejer(self) -> "FejerReport":
        if self.phi is None:
            raise ValueError("run had no reference point; no Fejer history")
        return fejer_diagnostic(self.phi, self.alpha_history)


def _should_record(n: int) -> bool:
    if n <= TRACE_DENSE_LIMIT:
        return True
    return n % math.ceil(n / TRACE_DENSE_LIMIT) == 0


def run(prob: InclusionProblem, schedule: Schedule, x0, x1,
        stop: StoppingRule, u_ref=None,
        check_schedule: bool = True) -> RunResult:
    """Iterate the penalty splitting scheme from the seeds (x0, x1).

    Parameters
    ----------
    u_ref : array_like, optional
        A known solution (or any reference point in the solution set).
        When given, the trace records distances of the iterate and of the
        ergodic average to it, and the full history of squared distances
        phi_n with the quasi-Fejer excess accumulation is returned.
    check_schedule : bool
        Verify the step-size condition at runtime for every n >= n0 and
        abort with a diagnostic on violation.

    Raises
    ------
    DivergenceError
        On non-finite iterates; carries the partial trace.
    ScheduleViolationError
        When the schedule fails its condition at some reached n >= n0.
    """
    u = None if u_ref is None else as_vector(u_ref)
    state = initial_state(schedule, x0, x1, u_ref=u)
    trace: list[TraceRecord] = []
    step_norms: list[float] = []
    gap_norms: list[float] = []
    alphas: list[float] = []
    phi_hist: list[float] = []
    fejer_cum: list[float] = []
    if u is not None:
        phi_hist.extend(state.phi_last)

    stop_reason = "max_iter"
    fejer_total = 0.0
    n_final = state.n
    while state.n <= stop.max_iter:
        n = state.n
        if check_schedule and n >= schedule.n0:
            lhs = float(schedule.condition_lhs(n))
            if lhs > 1.0 + 1e-12:
                raise ScheduleViolationError(
                    f"step-size condition violated at n={n}: lhs={lhs:.6f} > 1"
                )
        try:
            new_state = fbf_step(prob, schedule, state, u_ref=u)
        except DivergenceError as err:
            raise DivergenceError(str(err), n=err.n, trace=trace) from None

        gap = norm(state.x_curr - new_state.p_curr)
        step = norm(new_state.x_curr - state.x_curr)
        step_norms.append(step)
        gap_norms.append(gap)
        alphas.append(float(schedule.alpha(n)))

        excess = None
        if u is not None:
            phi_hist.append(new_state.phi_last[-1])
            if len(phi_hist) >= 3:
                ph_next, ph, ph_prev = phi_hist[-1], phi_hist[-2], phi_hist[-3]
                excess = max(ph_next - ph - alphas[-1] * (ph - ph_prev), 0.0)
            else:
                excess = 0.0
            fejer_total += excess
            fejer_cum.append(fejer_total)

        n_final = new_state.n
        if _should_record(n_final) or stop.satisfied(gap, step) or n_final > stop.max_iter:
            rec = TraceRecord(
                n=n_final,
                lambda_n=float(schedule.lambda_(n)),
                beta_n=float(schedule.beta(n)),
                alpha_n=alphas[-1],
                step_norm=step,
                gap_norm=gap,
                iterate_dist=None if u is None else norm(new_state.x_curr - u),
                ergodic_dist=None if u is None else norm(new_state.ergodic - u),
                fejer_excess=excess,
            )
            trace.append(rec)
        state = new_state
        if stop.satisfied(gap, step):
            stop_reason = "tolerance"
            break

    steps = np.asarray(step_norms)
    gaps = np.asarray(gap_norms)
    return RunResult(
        trace=trace,
        x_final=state.x_curr,
        z_final=state.ergodic,
        p_final=state.p_curr,
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


def vi_residual(candidate, graph_samples: Sequence) -> float:
    """Variational-inequality residual of a candidate zero.

    Given certified graph points (u, w) of the governing maximally monotone
    operator, a point z is a zero iff <u - z, w> >= 0 for all of them;
    returns the minimum of these inner products (negative values witness
    infeasibility, an empty sample list yields +inf).
    """
    z = as_vector(candidate)
    residual = math.inf
    for u, w in graph_samples:
        residual = min(residual, float((as_vector(u) - z) @ as_vector(w)))
    return residual


@dataclass(frozen=True)
class FejerReport:
    """Summary of the quasi-Fejer excess diagnostic."""

    excess_partial_sum: float
    growth_last_half: float
    phi_limit_estimate: float
    flagged: bool


def fejer_diagnostic(phi, alphas, flag_threshold: float = 1e-6) -> FejerReport:
    """Quasi-Fejer monotonicity diagnostic on a squared-distance history.

    For phi_n = ||x_n - u_ref||^2 the quantity
    ``e_n = [phi_{n+1} - phi_n - alpha_n (phi_n - phi_{n-1})]_+`` must have a
    bounded partial sum along a convergent run; the report gives the total,
    the growth of the partial sum over the final 50% of iterations (flagged
    when above ``flag_threshold``), and the tail average of phi as a limit
    estimate.

    ``phi`` is indexed from n = 0; ``alphas[j]`` is the inertia weight used
    at global iteration j+1, so ``len(alphas) >= len(phi) - 2``.
    """
    ph = np.asarray(phi, dtype=float)
    al = np.asarray(alphas, dtype=float)
    if ph.ndim != 1 or ph.size < 3:
        raise ValueError("need at least three phi values")
    if np.any(ph < 0):
        raise ValueError("phi values must be nonnegative")
    if al.size < ph.size - 2:
        raise ValueError("need an inertia weight for every interior phi index")
    diffs = np.diff(ph)                       # diffs[j] = phi_{j+1} - phi_j
    # excess at n = 1..N-1 pairs alpha_n = alphas[n-1] with the two diffs at n
    al_used = al[:ph.size - 2]
    excess = np.maximum(diffs[1:] - al_used * diffs[:-1], 0.0)
    cum = np.cumsum(excess)
    total = float(cum[-1]) if cum.size else 0.0
    half = cum.size // 2
    growth = total - (float(cum[half - 1]) if half >= 1 else 0.0)
    tail = ph[int(0.9 * ph.size):]
    return FejerReport(
        excess_partial_sum=total,
        growth_last_half=growth,
        phi_limit_estimate=float(np.mean(tail)),
        flagged=growth > flag_threshold,
    )
