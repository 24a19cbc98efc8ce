"""Reference reductions and path-identity deviations.

The penalty splitting scheme degenerates to classical methods in special
regimes: with zero penalty operator and zero inertia it is Tseng's
forward-backward-forward splitting, with zero penalty operator alone it is
the inertial splitting for 0 in Ax + Dx, and the primal-dual scheme is the
plain scheme applied to an explicit product-space lift.  This module codes
the references as standalone loops (sharing no iteration code with the
solvers) and measures the worst per-coordinate deviation from the solver
path, which should sit at rounding level.
"""

from __future__ import annotations

import numpy as np

from .fbf import InclusionProblem, StoppingRule, fbf_step, initial_state
from .linalg import LinearMap
from .operators import (LipschitzOperator, ResolventOperator, zero_operator)
from .primal_dual import (Block, PrimalDualProblem, build_product_problem,
                          pd_initial_state, pd_step, stack)
from .prox import make_quadratic_psd
from .schedules import Schedule

__all__ = [
    "tseng_reference",
    "inertial_fbf_reference",
    "tseng_reduction_deviation",
    "inertial_reduction_deviation",
    "product_space_deviation",
    "random_monotone_linear",
    "random_pd_problem",
]


def tseng_reference(resolve, D_eval, lambdas, x1, iterations):
    """Plain forward-backward-forward splitting for 0 in Ax + Dx.

    p_n = J_{lambda_n A}(x_n - lambda_n D x_n),
    x_{n+1} = lambda_n (D x_n - D p_n) + p_n.
    Returns the list [x_1, x_2, ..., x_{iterations+1}].
    """
    xs = [np.array(x1, dtype=float)]
    x = xs[0]
    for n in range(1, iterations + 1):
        lam = lambdas(n)
        Dx = D_eval(x)
        p = resolve(lam, x - lam * Dx)
        x = lam * (Dx - D_eval(p)) + p
        xs.append(x)
    return xs


def inertial_fbf_reference(resolve, D_eval, lambdas, alphas, x0, x1, iterations):
    """Inertial splitting for 0 in Ax + Dx (zero penalty operator).

    p_n = J_{lambda_n A}(x_n - lambda_n D x_n + alpha_n (x_n - x_{n-1})),
    x_{n+1} = lambda_n (D x_n - D p_n) + p_n.
    """
    xs = [np.array(x1, dtype=float)]
    x_prev = np.array(x0, dtype=float)
    x = xs[0]
    for n in range(1, iterations + 1):
        lam, al = lambdas(n), alphas(n)
        Dx = D_eval(x)
        p = resolve(lam, x - lam * Dx + al * (x - x_prev))
        x_prev, x = x, lam * (Dx - D_eval(p)) + p
        xs.append(x)
    return xs


def random_monotone_linear(rng, dim: int, lipschitz: float = 1.0) -> LipschitzOperator:
    """Monotone linear operator: PSD part plus a skew part, scaled to the
    requested Lipschitz constant."""
    S = rng.normal(size=(dim, dim))
    sym = S @ S.T
    K = rng.normal(size=(dim, dim))
    skew = K - K.T
    M = sym / np.linalg.norm(sym, 2) + skew / np.linalg.norm(skew, 2)
    M *= lipschitz / np.linalg.norm(M, 2)
    return LipschitzOperator(
        eval_fn=lambda x: M @ x, lipschitz_constant=lipschitz,
        monotone=True, dim=dim, audit=False)


def _test_schedule(alpha_target: float, n0: int = 1) -> Schedule:
    lam = lambda n: 0.2 * n ** -0.6
    bet = lambda n: 1.0 + 0.0 * n
    alp = lambda n: alpha_target * (1.0 - 1.0 / n)
    return Schedule(lambda_=lam, beta=bet, alpha=alp,
                    alpha_bar=max(alpha_target, 0.0), sigma=(1 - 5 * alpha_target) / 4,
                    n0=n0, mu=np.inf, eta=1.0, certification="test")


def tseng_reduction_deviation(iterations: int = 1000, seed: int = 3,
                              dim: int = 5) -> float:
    """Max per-coordinate gap between the penalty scheme with B = 0,
    alpha = 0 and the standalone Tseng reference."""
    rng = np.random.default_rng(seed)
    Q = rng.normal(size=(dim, dim))
    entry = make_quadratic_psd(Q @ Q.T / dim, rng.normal(size=dim))
    A = ResolventOperator(entry.prox, entry.strong_convexity, dim)
    D = random_monotone_linear(rng, dim, lipschitz=1.0)
    prob = InclusionProblem(A=A, D=D, B=zero_operator(dim), dim=dim)
    sched = _test_schedule(alpha_target=0.0)
    x1 = rng.normal(size=dim)

    ref = tseng_reference(A.resolve, D.eval_fn, sched.lambda_, x1, iterations)
    state = initial_state(sched, x1, x1)
    worst = 0.0
    for n in range(iterations):
        state = fbf_step(prob, sched, state)
        worst = max(worst, float(np.max(np.abs(state.x_curr - ref[n + 1]))))
    return worst


def inertial_reduction_deviation(iterations: int = 1000, seed: int = 4,
                                 dim: int = 5) -> float:
    """Max gap between the penalty scheme with B = 0 and the inertial
    reference (nonzero inertia, zero penalty operator)."""
    rng = np.random.default_rng(seed)
    Q = rng.normal(size=(dim, dim))
    entry = make_quadratic_psd(Q @ Q.T / dim, rng.normal(size=dim))
    A = ResolventOperator(entry.prox, entry.strong_convexity, dim)
    D = random_monotone_linear(rng, dim, lipschitz=1.0)
    prob = InclusionProblem(A=A, D=D, B=zero_operator(dim), dim=dim)
    sched = _test_schedule(alpha_target=0.15)
    x0 = rng.normal(size=dim)
    x1 = rng.normal(size=dim)

    ref = inertial_fbf_reference(A.resolve, D.eval_fn, sched.lambda_,
                                 sched.alpha, x0, x1, iterations)
    state = initial_state(sched, x0, x1)
    worst = 0.0
    for n in range(iterations):
        state = fbf_step(prob, sched, state)
        worst = max(worst, float(np.max(np.abs(state.x_curr - ref[n + 1]))))
    return worst


def random_pd_problem(rng, dim: int = 4, m: int = 2,
                      block_dim: int = 3) -> PrimalDualProblem:
    """Small random primal-dual instance for path-identity checks."""
    Q = rng.normal(size=(dim, dim))
    entry = make_quadratic_psd(Q @ Q.T / dim, rng.normal(size=dim))
    A = ResolventOperator(entry.prox, entry.strong_convexity, dim)
    C = random_monotone_linear(rng, dim, lipschitz=0.5)
    Pmat = rng.normal(size=(2, dim))
    Pmat /= np.linalg.svd(Pmat, compute_uv=False)[0]
    G = Pmat.T @ Pmat
    B = LipschitzOperator(eval_fn=lambda x: G @ x, lipschitz_constant=1.0,
                          monotone=True, dim=dim, audit=False)
    blocks = []
    for _ in range(m):
        Lmat = rng.normal(size=(block_dim, dim))
        Lmat /= np.linalg.svd(Lmat, compute_uv=False)[0]
        theta = float(rng.uniform(0.3, 1.0))
        w = float(rng.uniform(0.5, 2.0))
        nu = float(rng.uniform(0.2, 0.8))
        blocks.append(Block(
            B_inverse=ResolventOperator(
                resolve_fn=lambda g, v, th=theta, ww=w: np.clip(
                    v / (1.0 + g * th), -ww, ww),
                strong_monotonicity=theta, dim=block_dim),
            D_inverse=LipschitzOperator(
                eval_fn=lambda v, nu=nu: nu * v, lipschitz_constant=nu,
                monotone=True, dim=block_dim, audit=False),
            L=LinearMap(Lmat),
        ))
    return PrimalDualProblem(A=A, C=C, B=B, blocks=tuple(blocks), dim=dim)


def product_space_deviation(iterations: int = 200, instances: int = 10,
                            seed: int = 5) -> float:
    """Worst per-coordinate gap between the direct primal-dual path and the
    plain scheme on the explicit product-space lift, over random instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        prob = random_pd_problem(rng)
        lifted = build_product_problem(prob)
        sched = _test_schedule(alpha_target=0.1)
        x0 = rng.normal(size=prob.dim)
        x1 = rng.normal(size=prob.dim)
        v0 = [rng.normal(size=d) for d in prob.block_dims]
        v1 = [rng.normal(size=d) for d in prob.block_dims]

        pd_state = pd_initial_state(prob, sched, x0, v0, x1, v1)
        fbf_state = initial_state(sched, stack(x0, v0), stack(x1, v1))
        for _ in range(iterations):
            pd_state = pd_step(prob, sched, pd_state)
            fbf_state = fbf_step(lifted, sched, fbf_state)
            stacked = stack(pd_state.x_curr, pd_state.v_curr)
            worst = max(worst, float(np.max(np.abs(stacked - fbf_state.x_curr))))
    return worst
