"""Step-size, penalty, and inertia schedules with feasibility verification.

A schedule is the triple of sequences (lambda_n, beta_n, alpha_n) together
with the constants (alpha_bar, sigma, n0) under which the convergence
conditions hold: the step sizes must lie in l^2 \\ l^1, the inertia sequence
must be nondecreasing with 0 <= alpha_n <= alpha_bar, and from n0 on

    5*alpha_bar + 2*sigma
        + (1 + 4*alpha_bar + 2*sigma) * (lambda_n*beta_n/mu + lambda_n/eta)**2
    <= 1.

Here 1/mu and 1/eta are the Lipschitz constants of the penalty and smooth
forward operators (mu or eta may be +inf when the corresponding operator is
zero, which drops the term).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "InfeasibleScheduleError",
    "SummabilityError",
    "Schedule",
    "ScheduleFamily",
    "build_power_law_schedule",
    "check_feasibility",
    "FeasibilityReport",
    "summability_report",
    "SummabilityReport",
]

N0_HARD_CAP = 10**6


class InfeasibleScheduleError(RuntimeError):
    """No index from which the step-size condition holds permanently."""


class SummabilityError(ValueError):
    """The requested schedule cannot satisfy sum(lambda_n / beta_n) < inf."""


def _eval_seq(fn: Callable, ns: np.ndarray) -> np.ndarray:
    """Evaluate a sequence callable on an integer array, vectorized if possible."""
    try:
        out = np.asarray(fn(ns), dtype=float)
        if out.shape == ns.shape:
            return out
    except Exception:
        pass
    return np.array([float(fn(int(n))) for n in ns])


@dataclass(frozen=True)
class Schedule:
    """Parameter sequences for the penalty splitting iterations.

    ``lambda_``, ``beta``, ``alpha`` map an iteration index n >= 1 to the
    step size, penalty parameter, and inertia weight.  ``mu`` and ``eta``
    are the inverse Lipschitz constants the feasibility condition is checked
    against; use ``math.inf`` for a vanishing term.
    """

    lambda_: Callable[[int], float] = field(repr=False)
    beta: Callable[[int], float] = field(repr=False)
    alpha: Callable[[int], float] = field(repr=False)
    alpha_bar: float
    sigma: float
    n0: int
    mu: float
    eta: float
    certification: str = "unverified"

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not (0.0 <= self.alpha_bar < 1.0):
            raise ValueError("alpha_bar must lie in [0, 1)")
        if self.n0 < 1:
            raise ValueError("n0 must be at least 1")
        if self.mu <= 0 or self.eta <= 0:
            raise ValueError("mu and eta must be positive (inf allowed)")

    def envelope(self, n) -> float | np.ndarray:
        """lambda_n*beta_n/mu + lambda_n/eta, the contraction envelope."""
        lam = self.lambda_(n)
        term1 = (lam * self.beta(n)) / self.mu if np.isfinite(self.mu) else 0.0
        term2 = lam / self.eta if np.isfinite(self.eta) else 0.0
        return term1 + term2

    def condition_lhs(self, n) -> float | np.ndarray:
        """Left-hand side of the step-size condition; feasible iff <= 1."""
        g = self.envelope(n)
        return (5.0 * self.alpha_bar + 2.0 * self.sigma
                + (1.0 + 4.0 * self.alpha_bar + 2.0 * self.sigma) * g * g)


@dataclass(frozen=True)
class ScheduleFamily:
    """Power-law family: lambda_n = c_lambda*(n+n_offset)^(-exp_lambda),
    beta_n = c_beta*(n+n_offset)^(exp_beta), alpha_n = alpha_target*(1-1/(n+n_offset)).

    ``exp_lambda`` in (1/2, 1] keeps the step sizes in l^2 \\ l^1; the
    optional ``n_offset`` flattens the early part of the sequences without
    changing any asymptotics (useful to balance ergodic averages at desk
    scale).
    """

    kind: str = "power_law"
    c_lambda: float = 1.0
    exp_lambda: float = 1.0
    c_beta: float = 0.25
    exp_beta: float = 1.0
    alpha_target: float = 0.15
    n_offset: int = 0

    def __post_init__(self):
        if self.kind != "power_law":
            raise ValueError(f"unknown schedule family kind {self.kind!r}")
        if not (0.5 < self.exp_lambda <= 1.0):
            raise ValueError("exp_lambda must lie in (1/2, 1] for l^2 \\ l^1 steps")
        if self.exp_beta < 0:
            raise ValueError("exp_beta must be nonnegative")
        if self.c_lambda <= 0 or self.c_beta <= 0:
            raise ValueError("c_lambda and c_beta must be positive")
        if not (0.0 <= self.alpha_target < 0.2):
            raise ValueError(
                "alpha_target must lie in [0, 1/5): the condition needs 5*alpha < 1"
            )
        if self.n_offset < 0:
            raise ValueError("n_offset must be nonnegative")

    def lambda_(self, n):
        return self.c_lambda * (n + self.n_offset) ** (-self.exp_lambda)

    def beta(self, n):
        return self.c_beta * (n + self.n_offset) ** self.exp_beta

    def alpha(self, n):
        return self.alpha_target * (1.0 - 1.0 / (n + self.n_offset))

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "c_lambda": self.c_lambda,
            "exp_lambda": self.exp_lambda,
            "c_beta": self.c_beta,
            "exp_beta": self.exp_beta,
            "alpha_target": self.alpha_target,
            "n_offset": self.n_offset,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScheduleFamily":
        return cls(**obj)


def build_power_law_schedule(family: ScheduleFamily, mu: float, eta: float,
                             require_summable_ratio: bool = False,
                             n0_cap: int = N0_HARD_CAP) -> Schedule:
    """Build a feasible schedule from a power-law family.

    Picks ``sigma = (1 - 5*alpha_target)/4`` (splitting the slack of the
    step-size condition evenly between the 2*sigma term and the quadratic
    term) and computes ``n0`` as the smallest index from which the condition
    holds for all larger n.  Permanence is certified analytically when the
    envelope is nonincreasing (``exp_beta <= exp_lambda``, or the penalty
    term vanishes because ``mu = inf``); a growing envelope cannot be
    permanently feasible and is rejected.

    Parameters
    ----------
    require_summable_ratio : bool
        Reject families with sum(lambda_n/beta_n) = inf, i.e. require
        ``exp_lambda + exp_beta > 1``.  Needed when a penalty certificate
        demanding that summability will be requested.

    Raises
    ------
    SummabilityError
        If ``require_summable_ratio`` and ``exp_lambda + exp_beta <= 1``.
    InfeasibleScheduleError
        If no feasible n0 exists below ``n0_cap``.
    """
    if mu <= 0 or eta <= 0:
        raise ValueError("mu and eta must be positive (inf allowed)")
    if require_summable_ratio and family.exp_lambda + family.exp_beta <= 1.0:
        raise SummabilityError(
            "sum(lambda_n/beta_n) diverges: need exp_lambda + exp_beta > 1, got "
            f"{family.exp_lambda} + {family.exp_beta}"
        )
    sigma = (1.0 - 5.0 * family.alpha_target) / 4.0
    schedule = Schedule(
        lambda_=family.lambda_,
        beta=family.beta,
        alpha=family.alpha,
        alpha_bar=family.alpha_target,
        sigma=sigma,
        n0=1,
        mu=mu,
        eta=eta,
        certification="pending",
    )
    penalty_term_active = np.isfinite(mu)
    envelope_monotone = (not penalty_term_active) or (family.exp_beta <= family.exp_lambda)
    if not envelope_monotone:
        raise InfeasibleScheduleError(
            "envelope lambda_n*beta_n/mu + lambda_n/eta grows without bound "
            f"(exp_beta={family.exp_beta} > exp_lambda={family.exp_lambda}); "
            "no permanent n0 exists"
        )
    n0 = _scan_first_feasible(schedule, n0_cap)
    if n0 is None:
        raise InfeasibleScheduleError(
            f"step-size condition not satisfiable below the hard cap {n0_cap}"
        )
    return Schedule(
        lambda_=family.lambda_,
        beta=family.beta,
        alpha=family.alpha,
        alpha_bar=family.alpha_target,
        sigma=sigma,
        n0=n0,
        mu=mu,
        eta=eta,
        certification="analytic:power_law_monotone_envelope",
    )


def _scan_first_feasible(schedule: Schedule, cap: int) -> Optional[int]:
    start, chunk = 1, 1024
    while start <= cap:
        stop = min(start + chunk - 1, cap)
        ns = np.arange(start, stop + 1, dtype=float)
        lhs = schedule.condition_lhs(ns)
        ok = np.flatnonzero(lhs <= 1.0)
        if ok.size:
            return int(start + ok[0])
        start = stop + 1
        chunk = min(chunk * 4, 1 << 20)
    return None


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    first_violation: Optional[int]
    margin_at_horizon: float
    horizon: int
    verified_up_to: int


def check_feasibility(schedule: Schedule, horizon: int) -> FeasibilityReport:
    """Scan n in [n0, horizon] for violations of the schedule conditions.

    Checks the step-size condition, the inertia bound 0 <= alpha_n <=
    alpha_bar, and that alpha_n is nondecreasing.  Report-only; never
    raises.  ``margin_at_horizon`` is the slack 1 - lhs at the horizon.
    """
    if horizon < schedule.n0:
        raise ValueError("horizon must be at least n0")
    first_violation = None
    chunk = 1 << 16
    start = schedule.n0
    prev_alpha = None
    while start <= horizon and first_violation is None:
        stop = min(start + chunk - 1, horizon)
        ns = np.arange(start, stop + 1, dtype=float)
        lhs = np.asarray(schedule.condition_lhs(ns), dtype=float)
        alphas = _eval_seq(schedule.alpha, ns)
        bad = (lhs > 1.0) | (alphas < 0.0) | (alphas > schedule.alpha_bar + 1e-15)
        diffs = np.diff(alphas, prepend=alphas[0] if prev_alpha is None else prev_alpha)
        bad |= diffs < -1e-15
        idx = np.flatnonzero(bad)
        if idx.size:
            first_violation = int(start + idx[0])
        prev_alpha = alphas[-1]
        start = stop + 1
    margin = 1.0 - float(schedule.condition_lhs(horizon))
    return FeasibilityReport(
        feasible=first_violation is None,
        first_violation=first_violation,
        margin_at_horizon=margin,
        horizon=horizon,
        verified_up_to=horizon if first_violation is None else first_violation - 1,
    )


@dataclass(frozen=True)
class SummabilityReport:
    partial_sum_lambda: float
    partial_sum_lambda_sq: float
    partial_sum_lambda_over_beta: float
    horizon: int


def summability_report(schedule: Schedule, horizon: int) -> SummabilityReport:
    """Truncated sums of lambda_n, lambda_n^2, and lambda_n/beta_n.

    Used by the penalty-certificate evaluator and by tests asserting the
    divergence of sum(lambda_n) against the boundedness trends of the other
    two sums.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    s_lam = s_sq = s_ratio = 0.0
    chunk = 1 << 18
    start = 1
    while start <= horizon:
        stop = min(start + chunk - 1, horizon)
        ns = np.arange(start, stop + 1, dtype=float)
        lam = _eval_seq(schedule.lambda_, ns)
        bet = _eval_seq(schedule.beta, ns)
        s_lam += float(np.sum(lam))
        s_sq += float(np.sum(lam * lam))
        s_ratio += float(np.sum(lam / bet))
        start = stop + 1
    return SummabilityReport(s_lam, s_sq, s_ratio, horizon)
