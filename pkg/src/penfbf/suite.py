"""Test-problem generators with independently computed reference solutions.

Every generator returns a :class:`ProblemInstance` carrying the problem
data, an oracle solution produced by a method that shares no code with the
solvers (closed-form projection, vertex enumeration, linear programming, or
projected gradient on a smooth reformulation), and machinery to build
certified graph points for variational-inequality residual checks.

Instances are deterministic functions of their seed and are exportable as
JSON for cross-implementation comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional

import numpy as np

from .linalg import LinearMap, as_vector, norm
from .minimize import (MinimizationProblem, PenaltyTerm, SmoothTerm,
                       quadratic_penalty)
from .operators import LipschitzOperator, ResolventOperator
from .primal_dual import Block, PrimalDualProblem
from .prox import (ProxCatalogEntry, make_l1_norm, make_quadratic_psd,
                   make_scaled_translate, make_squared_l2)
from .schedules import ScheduleFamily

__all__ = [
    "OracleFailureError",
    "GraphSampleError",
    "ProblemInstance",
    "gen_projection_problem",
    "gen_l1_constrained_problem",
    "gen_composite_problem",
    "graph_samples",
    "default_schedule_family",
    "project_l1_ball",
]

ORACLE_TOL = 1e-10
_ENUM_MAX_DIM = 6


class OracleFailureError(RuntimeError):
    """The independent reference method failed to reach oracle accuracy."""


class GraphSampleError(RuntimeError):
    """Too many rejected draws while building certified graph points."""


@dataclass(frozen=True)
class ProblemInstance:
    """A generated problem together with its oracle.

    ``problem`` is a :class:`MinimizationProblem` (projection / l1 kinds,
    solved through the plain penalty splitting after lowering) or a
    :class:`PrimalDualProblem` (composite kind).  ``oracle_solution`` is a
    primal reference point; for instances whose solution set is not a
    singleton, ``solution_set_distance`` measures the distance to the whole
    set.  Private fields carry the pieces graph sampling needs.
    """

    id: str
    kind: str
    problem: object
    dim: int
    solver: str
    oracle_solution: Optional[np.ndarray]
    oracle_method: str
    regime_tags: frozenset
    seed: int
    params: dict = field(repr=False)
    oracle_duals: tuple = ()
    oracle_objective: Optional[float] = None
    solution_set_distance: Optional[Callable[[np.ndarray], float]] = field(
        default=None, repr=False)
    f_entry: Optional[ProxCatalogEntry] = field(default=None, repr=False)
    vi_forward: Optional[Callable[[np.ndarray], np.ndarray]] = field(
        default=None, repr=False)
    M_projection: Optional[Callable[[np.ndarray], np.ndarray]] = field(
        default=None, repr=False)

    def distance_to_solution(self, z) -> float:
        zv = as_vector(z)
        if self.solution_set_distance is not None:
            return float(self.solution_set_distance(zv))
        return norm(zv - self.oracle_solution)

    def to_json(self) -> dict:
        return {
            "generator": self.kind,
            "params": self.params,
            "seed": self.seed,
            "oracle_solution": None if self.oracle_solution is None
            else self.oracle_solution.tolist(),
            "oracle_method": self.oracle_method,
            "regime_tags": sorted(self.regime_tags),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ProblemInstance":
        gen = _GENERATORS[obj["generator"]]
        inst = gen(seed=obj["seed"], **obj["params"])
        if obj.get("oracle_solution") is not None:
            stored = np.asarray(obj["oracle_solution"], dtype=float)
            if norm(stored - inst.oracle_solution) > 1e-9:
                raise OracleFailureError(
                    "stored oracle disagrees with the regenerated instance")
        return inst


def _random_map_with_spectrum(rng, rows: int, cols: int,
                              smin: float = 0.6, smax: float = 1.0) -> np.ndarray:
    """Random full-row-rank matrix with singular values in [smin, smax]."""
    qu, _ = np.linalg.qr(rng.normal(size=(rows, rows)))
    qv, _ = np.linalg.qr(rng.normal(size=(cols, cols)))
    sv = np.linspace(smax, smin, rows)
    return qu @ (sv[:, None] * qv[:rows, :])


def gen_projection_problem(d: int, rank: int, seed: int) -> ProblemInstance:
    """Strongly monotone projection benchmark.

    minimize 0.5 ||x - c||^2 over ker L, posed with the quadratic penalty
    0.5 ||Lx||^2.  L is a random full-row-rank rank x d map with singular
    values in [0.6, 1] (so its spectral norm is 1 and conditioning is
    controlled); c is a random anchor of roughly unit norm.  The oracle is
    the closed-form kernel projection of c.
    """
    if not (1 <= rank < d):
        raise ValueError("need 1 <= rank < d")
    rng = np.random.default_rng(seed)
    Lmat = _random_map_with_spectrum(rng, rank, d)
    if np.linalg.matrix_rank(Lmat) != rank:
        raise OracleFailureError("degenerate draw: constructed map lost rank")
    c = rng.normal(size=d) / math.sqrt(d)
    L = LinearMap(Lmat)
    psi = quadratic_penalty(L)
    f = make_squared_l2(center=c)
    problem = MinimizationProblem(f=f, h=None, blocks=(), psi=psi, dim=d)
    oracle = as_vector(psi.set_projection(c))
    return ProblemInstance(
        id=f"projection-d{d}-r{rank}-s{seed}",
        kind="projection",
        problem=problem,
        dim=d,
        solver="fbf",
        oracle_solution=oracle,
        oracle_method="closed-form kernel projection via pseudo-inverse",
        regime_tags=frozenset({"strongly_monotone", "penalty_active"}),
        seed=seed,
        params={"d": d, "rank": rank},
        oracle_objective=0.5 * float(np.sum((oracle - c) ** 2)),
        f_entry=f,
        vi_forward=lambda x: np.zeros(d),
        M_projection=psi.set_projection,
    )


def project_l1_ball(u: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto {x : ||x||_1 <= radius} (sort-based, exact)."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    a = np.abs(u)
    if float(a.sum()) <= radius:
        return u.copy()
    s = np.sort(a)[::-1]
    cs = np.cumsum(s)
    ks = np.arange(1, s.size + 1)
    ts = (cs - radius) / ks
    k = int(np.max(np.flatnonzero(ts < s)))
    t = ts[k]
    return np.sign(u) * np.maximum(a - t, 0.0)


def _dykstra_distance(z: np.ndarray, proj_a, proj_b,
                      max_iter: int = 20000, tol: float = 1e-12) -> float:
    """Distance from z to the intersection of two closed convex sets.

    Dykstra's alternating projections converge to the exact metric
    projection onto the intersection; classical and solver-independent.
    """
    x = z.copy()
    p = np.zeros_like(z)
    q = np.zeros_like(z)
    for _ in range(max_iter):
        y = proj_a(x + p)
        p = x + p - y
        x_new = proj_b(y + q)
        q = y + q - x_new
        if norm(x_new - x) <= tol * (1.0 + norm(x_new)):
            x = x_new
            break
        x = x_new
    return norm(z - x)


def _l1_vertex_enumeration(N: np.ndarray, c: np.ndarray):
    """Minimize ||N t - c||_1 by enumerating basic points.

    A minimizer exists at a point where k = dim(t) residual coordinates
    vanish; every such basic point is obtained by solving the k x k system
    over a coordinate subset.  Exhaustive over C(d, k) subsets.
    """
    d, k = N.shape
    if k == 0:
        return float(np.sum(np.abs(c))), np.zeros(d), [np.zeros(d)]
    best = math.inf
    candidates = []
    for subset in combinations(range(d), k):
        M = N[list(subset), :]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        t = np.linalg.solve(M, c[list(subset)])
        x = N @ t
        obj = float(np.sum(np.abs(x - c)))
        candidates.append((obj, x))
        best = min(best, obj)
    if not candidates:
        raise OracleFailureError("no nondegenerate basic point found")
    vertices = [x for obj, x in candidates if obj <= best + 1e-9]
    # deterministic representative: lexicographically smallest vertex
    rep = min(vertices, key=lambda x: tuple(np.round(x, 12)))
    return best, rep, vertices


def _l1_linprog(Lmat: np.ndarray, c: np.ndarray):
    """LP formulation of min ||x-c||_1 s.t. Lx = 0 (used for d > 6)."""
    from scipy.optimize import linprog
    d = c.size
    # variables (x, t): minimize 1't  s.t.  x - t <= c, -x - t <= -c, Lx = 0
    cost = np.concatenate([np.zeros(d), np.ones(d)])
    A_ub = np.block([[np.eye(d), -np.eye(d)], [-np.eye(d), -np.eye(d)]])
    b_ub = np.concatenate([c, -c])
    A_eq = np.hstack([Lmat, np.zeros((Lmat.shape[0], d))])
    b_eq = np.zeros(Lmat.shape[0])
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=[(None, None)] * (2 * d), method="highs")
    if not res.success:
        raise OracleFailureError(f"reference LP failed: {res.message}")
    return float(res.fun), res.x[:d]


def gen_l1_constrained_problem(d: int, rank: int, seed: int,
                               anchor_scale: float = 1.0) -> ProblemInstance:
    """Merely convex benchmark: minimize ||x - c||_1 over ker L.

    The solution set is generally a polytope, so the instance carries a
    distance-to-set oracle: the optimal value comes from exhaustive basic
    point enumeration (d <= 6) or a reference LP, and distances are
    measured by Dykstra projection onto ker L intersected with the optimal
    l1 sublevel set.  ``rank = d`` is allowed and makes the constraint set
    the origin.
    """
    if not (1 <= rank <= d):
        raise ValueError("need 1 <= rank <= d")
    rng = np.random.default_rng(seed)
    Lmat = _random_map_with_spectrum(rng, rank, d)
    c = rng.normal(size=d) * (anchor_scale / math.sqrt(d))
    L = LinearMap(Lmat)
    psi = quadratic_penalty(L)
    f = make_scaled_translate(make_l1_norm(1.0), shift=(-c))
    problem = MinimizationProblem(f=f, h=None, blocks=(), psi=psi, dim=d)

    # orthonormal kernel basis from the SVD of L
    _, sv, vt = np.linalg.svd(Lmat)
    ker_dim = d - rank
    N = vt[rank:, :].T if ker_dim else np.zeros((d, 0))
    if ker_dim <= _ENUM_MAX_DIM and d <= _ENUM_MAX_DIM:
        f_star, x_star, vertices = _l1_vertex_enumeration(N, c)
        method = "basic-point enumeration over kernel bases"
    else:
        f_star, x_star = _l1_linprog(Lmat, c)
        method = "reference linear program (HiGHS)"
    if norm(as_vector(psi.set_projection(x_star)) - x_star) > 1e-8:
        raise OracleFailureError("reference solution violates the constraint")

    proj_ker = psi.set_projection

    def dist_to_set(z):
        return _dykstra_distance(
            as_vector(z),
            lambda y: as_vector(proj_ker(y)),
            lambda y: c + project_l1_ball(y - c, f_star),
        )

    return ProblemInstance(
        id=f"l1-d{d}-r{rank}-s{seed}",
        kind="l1_constrained",
        problem=problem,
        dim=d,
        solver="fbf",
        oracle_solution=as_vector(x_star),
        oracle_method=method,
        regime_tags=frozenset({"ergodic_only", "penalty_active"}),
        seed=seed,
        params={"d": d, "rank": rank, "anchor_scale": anchor_scale},
        oracle_objective=f_star,
        solution_set_distance=dist_to_set,
        f_entry=f,
        vi_forward=lambda x: np.zeros(d),
        M_projection=proj_ker,
    )


def _huber_value(t: np.ndarray, w: float, kappa: float) -> float:
    a = np.abs(t)
    quad = a <= kappa * w
    return float(np.sum(np.where(quad, t * t / (2.0 * kappa),
                                 w * a - kappa * w * w / 2.0)))


def _huber_grad(t: np.ndarray, w: float, kappa: float) -> np.ndarray:
    return np.sign(t) * np.minimum(np.abs(t) / kappa, w)


def gen_composite_problem(d: int, m: int, seed: int,
                          gamma_f: float = 4.0) -> ProblemInstance:
    """Composite primal-dual benchmark with strongly monotone ingredients.

    f is a strongly convex quadratic; each block couples a Huber function
    g_i (smoothed l1, so g_i* is strongly convex) through a random unit-norm
    map L_i and is further smoothed by a quadratic l_i, making g_i box l_i a
    Huber function with enlarged knee whose gradient is closed-form; h is a
    mild convex quadratic and the constraint is ker L with the quadratic
    penalty.  The oracle runs projected gradient on the smooth reformulation
    to stationarity 1e-10 (exact kernel projection), which no solver module
    touches.
    """
    if m < 0:
        raise ValueError("m must be nonnegative")
    if d < 2:
        raise ValueError("need d >= 2")
    rng = np.random.default_rng(seed)
    rank = max(1, d // 3)
    Lmat = _random_map_with_spectrum(rng, rank, d)
    L = LinearMap(Lmat)
    psi = quadratic_penalty(L)

    # strongly convex quadratic f
    qf, _ = np.linalg.qr(rng.normal(size=(d, d)))
    ef = np.linspace(gamma_f, gamma_f + 2.0, d)
    Qf = qf @ (ef[:, None] * qf.T)
    Qf = 0.5 * (Qf + Qf.T)
    bf = rng.normal(size=d) / math.sqrt(d)
    f = make_quadratic_psd(Qf, bf)

    # mild smooth h
    qh, _ = np.linalg.qr(rng.normal(size=(d, d)))
    eh = np.linspace(0.0, 0.5, d)
    Qh = qh @ (eh[:, None] * qh.T)
    Qh = 0.5 * (Qh + Qh.T)
    bh = rng.normal(size=d) / math.sqrt(d)
    grad_h = LipschitzOperator(
        eval_fn=lambda x: Qh @ x + bh, lipschitz_constant=0.5,
        monotone=True, dim=d, audit=False)

    blocks = []
    env_specs = []
    dim_i = max(2, d // 2)
    w_i, theta_i, nu_i = 1.0, 0.5, 0.5
    for _ in range(m):
        Gmat = rng.normal(size=(dim_i, d))
        Gmat /= np.linalg.svd(Gmat, compute_uv=False)[0]
        Li = LinearMap(Gmat)

        def _conj_prox(gamma, u, th=theta_i, w=w_i):
            return np.clip(u / (1.0 + gamma * th), -w, w)

        blocks.append(Block(
            B_inverse=ResolventOperator(
                resolve_fn=_conj_prox, strong_monotonicity=theta_i, dim=dim_i),
            D_inverse=LipschitzOperator(
                eval_fn=lambda v, nu=nu_i: nu * v, lipschitz_constant=nu_i,
                monotone=True, dim=dim_i, audit=False),
            L=Li,
        ))
        env_specs.append((Li, w_i, theta_i + nu_i))

    A = ResolventOperator(resolve_fn=f.prox,
                          strong_monotonicity=f.strong_convexity, dim=d)
    problem = PrimalDualProblem(
        A=A, C=grad_h, B=psi.gradient, blocks=tuple(blocks), dim=d,
        M_projection=psi.set_projection,
    )

    def smooth_grad(x):
        g = Qf @ x + bf + Qh @ x + bh
        for Li, w, kappa in env_specs:
            g = g + Li.adjoint_apply(_huber_grad(Li(x), w, kappa))
        return g

    def smooth_value(x):
        val = 0.5 * float(x @ (Qf @ x)) + float(bf @ x)
        val += 0.5 * float(x @ (Qh @ x)) + float(bh @ x)
        for Li, w, kappa in env_specs:
            val += _huber_value(Li(x), w, kappa)
        return val

    proj = psi.set_projection
    lip = float(ef[-1] + 0.5 + sum(1.0 / (theta_i + nu_i) for _ in range(m)))
    step = 1.0 / lip
    x = np.zeros(d)
    for it in range(200000):
        x_new = as_vector(proj(x - step * smooth_grad(x)))
        res = norm(x_new - x) / step
        x = x_new
        if res <= ORACLE_TOL:
            break
    else:
        raise OracleFailureError(
            f"projected gradient stalled at residual {res:.3e}")
    oracle = x
    duals = tuple(_huber_grad(Li(oracle), w, kappa)
                  for Li, w, kappa in env_specs)

    def vi_forward(xv):
        g = Qh @ xv + bh
        for Li, w, kappa in env_specs:
            g = g + Li.adjoint_apply(_huber_grad(Li(xv), w, kappa))
        return g

    return ProblemInstance(
        id=f"composite-d{d}-m{m}-s{seed}",
        kind="composite",
        problem=problem,
        dim=d,
        solver="primal_dual",
        oracle_solution=oracle,
        oracle_method="projected gradient on the smooth reformulation",
        regime_tags=frozenset({"strongly_monotone", "penalty_active"}),
        seed=seed,
        params={"d": d, "m": m, "gamma_f": gamma_f},
        oracle_duals=duals,
        oracle_objective=smooth_value(oracle),
        f_entry=f,
        vi_forward=vi_forward,
        M_projection=proj,
    )


_GENERATORS = {
    "projection": gen_projection_problem,
    "l1_constrained": gen_l1_constrained_problem,
    "composite": gen_composite_problem,
}


def graph_samples(instance: ProblemInstance, count: int, seed: int):
    """Certified graph points (u, w) of the governing operator sum.

    Draws y at random, projects u onto the constraint set (so y - u is a
    normal-cone element at u), constructs a subgradient of f at u from the
    catalog, certifies it through the prox relation, and assembles
    w = a + forward(u) + (y - u).  Draws failing certification are skipped;
    raises :class:`GraphSampleError` if fewer than half of the requested
    samples survive.
    """
    if count == 0:
        return []
    if instance.f_entry is None or instance.M_projection is None:
        raise GraphSampleError("instance does not expose sampling machinery")
    entry = instance.f_entry
    if entry.subgradient is None:
        raise GraphSampleError("f has no constructible subgradient")
    rng = np.random.default_rng(seed)
    samples = []
    attempts = 0
    max_attempts = 6 * count + 20
    while len(samples) < count and attempts < max_attempts:
        attempts += 1
        y = rng.normal(size=instance.dim)
        u = as_vector(instance.M_projection(y))
        p_vec = y - u
        a = entry.subgradient(u)
        if norm(entry.prox(1.0, u + a) - u) > 1e-9 * (1.0 + norm(u)):
            continue
        w = a + instance.vi_forward(u) + p_vec
        samples.append((u, w))
    if len(samples) < max(1, count // 2):
        raise GraphSampleError(
            f"only {len(samples)} of {count} draws produced certified points")
    return samples


def default_schedule_family(instance: ProblemInstance) -> ScheduleFamily:
    """Workable default power-law family per instance kind.

    Constants are calibrated so the step-size condition holds from n = 1
    (lambda_n beta_n stays a fixed fraction of the feasible envelope) while
    the penalty parameter grows linearly; the merely convex l1 instance
    flattens the early steps to balance its ergodic average.
    """
    if instance.kind == "l1_constrained":
        return ScheduleFamily(c_lambda=12.0, exp_lambda=1.0, c_beta=0.02,
                              exp_beta=1.0, alpha_target=0.15, n_offset=3000)
    if instance.kind == "composite":
        from .primal_dual import composite_lipschitz_constant
        prob = instance.problem
        beta_comp = composite_lipschitz_constant(prob)
        lip_b = prob.B.lipschitz_constant
        # keep c_l*(c_b*lip_b + beta_comp) within 90% of the feasible envelope
        g_max = math.sqrt((1.0 - 5 * 0.15 - 2 * 0.0625) / (1.0 + 4 * 0.15 + 2 * 0.0625))
        c_b = 0.25
        c_l = min(1.0, 0.9 * g_max / (c_b * lip_b + beta_comp))
        return ScheduleFamily(c_lambda=c_l, exp_lambda=1.0, c_beta=c_b,
                              exp_beta=1.0, alpha_target=0.15)
    return ScheduleFamily(c_lambda=1.0, exp_lambda=1.0, c_beta=0.25,
                          exp_beta=1.0, alpha_target=0.15)
