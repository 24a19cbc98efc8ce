"""Batch front-end: run a configured solve, validate a config, or run the
built-in verification suite.

Usage:

    penfbf run <config.json>        solve and write trace CSV + summary JSON
    penfbf validate <config.json>   schema + schedule feasibility, no run
    penfbf suite [--filter TAGS]    oracle battery with pass/fail lines

Exit codes: 0 success, 1 suite failure, 2 config/schema violation,
3 solver divergence (partial trace written), 4 infeasible schedule.

Configuration is a single JSON document (no environment variables); traces
are CSV with a fixed column order and 17-significant-digit formatting so
that identical configs produce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from importlib import resources

import numpy as np

from .fbf import (DivergenceError, ScheduleViolationError, StoppingRule,
                  run as fbf_run, vi_residual)
from .linalg import LinearMap, as_vector
from .minimize import (MinimizationBlock, MinimizationProblem, SmoothTerm,
                       lower_problem, penalty_certificate, quadratic_penalty,
                       schedule_for)
from .operators import LipschitzOperator
from .primal_dual import build_product_problem, composite_lipschitz_constant, pd_run
from .prox import prox_catalog_lookup
from .schedules import (InfeasibleScheduleError, Schedule, ScheduleFamily,
                        build_power_law_schedule, check_feasibility)
from .suite import (default_schedule_family, gen_composite_problem,
                    gen_l1_constrained_problem, gen_projection_problem,
                    graph_samples)

EXIT_OK = 0
EXIT_SUITE_FAIL = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_INFEASIBLE = 4

_GENERATORS = {
    "projection": gen_projection_problem,
    "l1_constrained": gen_l1_constrained_problem,
    "composite": gen_composite_problem,
}

TRACE_HEADER = ("n,lambda,beta,alpha,step_norm,gap_norm,iterate_dist,"
                "ergodic_dist,fejer_excess")


class ConfigError(ValueError):
    """Configuration failed validation (maps to exit code 2)."""


def _load_schema(name: str) -> dict:
    with resources.files("penfbf.schemas").joinpath(name).open() as fh:
        return json.load(fh)


def _validate_config(cfg: dict):
    import jsonschema
    schema = _load_schema("run_config.schema.json")
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        locs = "; ".join(
            f"{'/'.join(str(p) for p in err.path) or '<root>'}: {err.message}"
            for err in errors[:5]
        )
        raise ConfigError(f"config schema violation: {locs}")


def _build_inline_minimization(spec: dict) -> MinimizationProblem:
    f = prox_catalog_lookup(spec["f"]["name"], spec["f"].get("parameters", {}))
    psi_spec = spec["psi"]
    psi = quadratic_penalty(LinearMap(np.asarray(psi_spec["L"], dtype=float)))
    dim = psi.gradient.dim
    h = None
    if "h" in spec:
        Q = np.asarray(spec["h"].get("Q", np.zeros((dim, dim))), dtype=float)
        b = np.asarray(spec["h"].get("b", np.zeros(dim)), dtype=float)
        Qs = 0.5 * (Q + Q.T)
        lip = float(np.linalg.eigvalsh(Qs)[-1]) if np.any(Qs) else 0.0
        h = SmoothTerm(
            gradient=LipschitzOperator(
                eval_fn=lambda x: Qs @ x + b, lipschitz_constant=lip,
                monotone=True, dim=dim),
            value=lambda x: 0.5 * float(x @ (Qs @ x)) + float(b @ x),
        )
    blocks = []
    for blk in spec.get("blocks", []):
        g = prox_catalog_lookup(blk["g"]["name"], blk["g"].get("parameters", {}))
        L = LinearMap(np.asarray(blk["L"], dtype=float))
        nu = float(blk["smoothing"])

        def env_value(y, g=g, nu=nu):
            p = g.prox(nu, y)
            return float(g.value(p)) + float(np.sum((y - p) ** 2)) / (2.0 * nu)

        blocks.append(MinimizationBlock(
            g=g,
            l_conj_grad=LipschitzOperator(
                eval_fn=lambda v, nu=nu: nu * v, lipschitz_constant=nu,
                monotone=True, dim=L.codomain_dim, audit=False),
            L=L,
            parallel_sum_value=env_value,
        ))
    return MinimizationProblem(f=f, h=h, blocks=tuple(blocks), psi=psi, dim=dim)


def _build_problem(cfg: dict):
    """Returns (instance_or_None, min_problem, pd_problem, solver)."""
    solver = cfg["solver"]
    if "generator" in cfg["problem"]:
        gspec = cfg["problem"]["generator"]
        instance = _GENERATORS[gspec["id"]](seed=gspec["seed"], **gspec["params"])
        if instance.kind == "composite":
            if solver != "primal_dual":
                raise ConfigError("composite instances need solver=primal_dual")
            return instance, None, instance.problem, solver
        if solver not in ("fbf", "minimization"):
            raise ConfigError(f"{instance.kind} instances need solver=fbf "
                              "or solver=minimization")
        return instance, instance.problem, lower_problem(instance.problem), solver
    mp = _build_inline_minimization(cfg["problem"]["minimization"])
    if solver == "primal_dual" and not mp.blocks:
        raise ConfigError("solver=primal_dual needs at least one block")
    if solver == "fbf" and mp.blocks:
        raise ConfigError("solver=fbf cannot handle composed blocks; "
                          "use primal_dual or minimization")
    return None, mp, lower_problem(mp), solver


def _build_schedule(cfg: dict, pd_prob, max_iter: int) -> Schedule:
    sspec = cfg["schedule"]
    if sspec.get("kind") == "power_law":
        fam = ScheduleFamily(**sspec)
        return schedule_for(pd_prob, fam)
    lam = np.asarray(sspec["lambda"], dtype=float)
    bet = np.asarray(sspec["beta"], dtype=float)
    alp = np.asarray(sspec["alpha"], dtype=float)
    need = max_iter + 1
    if min(lam.size, bet.size, alp.size) < need:
        raise ConfigError(
            f"explicit schedule arrays must cover max_iter+1 = {need} entries")
    beta_comp = composite_lipschitz_constant(pd_prob)
    eta = math.inf if beta_comp == 0 else 1.0 / beta_comp
    return Schedule(
        lambda_=lambda n: lam[n - 1] if np.isscalar(n) else lam[np.asarray(n, dtype=int) - 1],
        beta=lambda n: bet[n - 1] if np.isscalar(n) else bet[np.asarray(n, dtype=int) - 1],
        alpha=lambda n: alp[n - 1] if np.isscalar(n) else alp[np.asarray(n, dtype=int) - 1],
        alpha_bar=float(sspec.get("alpha_bar", float(alp.max()))),
        sigma=float(sspec["sigma"]),
        n0=int(sspec["n0"]),
        mu=pd_prob.mu,
        eta=eta,
        certification="scan-only",
    )


def _fmt(x) -> str:
    return "" if x is None else f"{x:.17g}"


def _write_trace(path: str, trace, n_blocks: int):
    header = TRACE_HEADER
    if n_blocks:
        header += "," + ",".join(f"dual_gap_{i+1}" for i in range(n_blocks))
    lines = [header]
    for rec in trace:
        cells = [str(rec.n), _fmt(rec.lambda_n), _fmt(rec.beta_n),
                 _fmt(rec.alpha_n), _fmt(rec.step_norm), _fmt(rec.gap_norm),
                 _fmt(rec.iterate_dist), _fmt(rec.ergodic_dist),
                 _fmt(rec.fejer_excess)]
        cells.extend(_fmt(g) for g in rec.dual_gaps)
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _penalty_range_samples(psi, count: int = 3):
    Lm = psi.quadratic_map
    if Lm is None:
        return []
    rng = np.random.default_rng(1234)
    return [Lm.adjoint_apply(rng.normal(size=Lm.codomain_dim))
            for _ in range(count)]


def _run_from_config(cfg: dict, config_path: str) -> int:
    instance, mp, pd_prob, solver = _build_problem(cfg)
    stop = StoppingRule(
        max_iter=cfg["stop"]["max_iter"],
        tol_gap=cfg["stop"].get("tol_gap", 1e-8),
        tol_step=cfg["stop"].get("tol_step", 1e-8),
    )
    schedule = _build_schedule(cfg, pd_prob, stop.max_iter)
    feas = check_feasibility(schedule, max(schedule.n0, stop.max_iter))
    if not feas.feasible:
        print(f"infeasible schedule: first violation at n={feas.first_violation}",
              file=sys.stderr)
        return EXIT_INFEASIBLE

    dim = pd_prob.dim
    init = cfg.get("init", {})
    x0 = as_vector(init["x0"]) if "x0" in init else np.zeros(dim)
    x1 = as_vector(init["x1"]) if "x1" in init else x0.copy()
    diag = cfg.get("diagnostics", {})
    u_ref = instance.oracle_solution if instance is not None else None
    want_fejer = bool(diag.get("fejer", False)) and u_ref is not None

    t0 = time.perf_counter()
    trace_path = cfg["outputs"]["trace_path"]
    n_blocks = len(pd_prob.blocks)
    try:
        if solver == "fbf" or (solver == "minimization" and not n_blocks) \
                or (solver == "primal_dual" and not n_blocks):
            prob = build_product_problem(pd_prob)
            result = fbf_run(prob, schedule, x0, x1, stop,
                             u_ref=u_ref if want_fejer or u_ref is not None else None)
            duals = ()
        else:
            v0 = [np.zeros(d) for d in pd_prob.block_dims]
            result = pd_run(pd_prob, schedule, x0, v0, x1,
                            [z.copy() for z in v0], stop, u_ref=u_ref)
            duals = result.duals_final
    except DivergenceError as err:
        _write_trace(trace_path, err.trace or [], n_blocks)
        print(f"solver diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except ScheduleViolationError as err:
        print(f"infeasible schedule at runtime: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    wall = time.perf_counter() - t0

    _write_trace(trace_path, result.trace, n_blocks)

    vi_res = None
    k = int(diag.get("vi_residual_samples", 0))
    if k and instance is not None:
        vi_res = vi_residual(result.x_final, graph_samples(instance, k, seed=99))

    cert = None
    psi_obj = None
    if mp is not None:
        psi_obj = mp.psi
    elif instance is not None and instance.kind != "composite":
        psi_obj = instance.problem.psi
    if "certificate_horizon" in diag and psi_obj is not None:
        cert_obj = penalty_certificate(
            psi_obj, schedule, _penalty_range_samples(psi_obj),
            int(diag["certificate_horizon"]))
        cert = {
            "verdict": cert_obj.verdict,
            "horizon": cert_obj.horizon,
            "ratio_partial_sum": cert_obj.ratio_partial_sum,
            "partial_sum_final": (float(cert_obj.partial_sums[-1])
                                  if cert_obj.partial_sums.size else None),
        }

    fejer = None
    if want_fejer and result.phi is not None:
        rep = result.fejer if hasattr(result, "fejer") else None
        if rep is None:
            from .fbf import fejer_diagnostic
            rep = fejer_diagnostic(result.phi, result.alpha_history)
        fejer = {
            "excess_partial_sum": rep.excess_partial_sum,
            "growth_last_half": rep.growth_last_half,
            "phi_limit_estimate": rep.phi_limit_estimate,
            "flagged": rep.flagged,
        }

    objective = None
    penalty_value = None
    if psi_obj is not None:
        penalty_value = float(psi_obj.value(result.x_final))
    if mp is not None:
        objective = float(mp.f.value(result.x_final))
        if mp.h is not None:
            objective += float(mp.h.value(result.x_final))

    summary = {
        "solver": solver,
        "iterations": result.iterations,
        "stop_reason": result.stop_reason,
        "final_gap_norm": float(result.gap_norms[-1]),
        "final_step_norm": float(result.step_norms[-1]),
        "iterate_dist": (None if u_ref is None
                         else float(np.linalg.norm(result.x_final - u_ref))),
        "ergodic_dist": (None if u_ref is None
                         else float(np.linalg.norm(result.z_final - u_ref))),
        "vi_residual": vi_res,
        "objective": objective,
        "penalty_value": penalty_value,
        "fejer": fejer,
        "certificate": cert,
        "schedule": {
            "feasible": feas.feasible,
            "n0": schedule.n0,
            "first_violation": feas.first_violation,
            "margin_at_horizon": feas.margin_at_horizon,
            "certification": schedule.certification,
            "verified_up_to": feas.verified_up_to,
        },
        "wall_time_s": wall,
        "trace_path": trace_path,
        "config_path": config_path,
    }
    import jsonschema
    jsonschema.validate(summary, _load_schema("summary.schema.json"))
    with open(cfg["outputs"]["summary_path"], "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


def _suite_entries():
    """The standard battery: oracle runs plus path-identity checks."""
    return [
        {"name": "projection-d10", "tags": {"strongly_monotone", "penalty_active"},
         "kind": "oracle", "generator": "projection",
         "params": {"d": 10, "rank": 3}, "seed": 42, "max_iter": 100_000,
         "metric": "iterate_dist", "threshold": 1e-3},
        {"name": "l1-d6", "tags": {"ergodic_only", "penalty_active"},
         "kind": "oracle", "generator": "l1_constrained",
         "params": {"d": 6, "rank": 3}, "seed": 7, "max_iter": 100_000,
         "metric": "ergodic_set_dist", "threshold": 1e-2},
        {"name": "composite-d8", "tags": {"strongly_monotone", "penalty_active"},
         "kind": "oracle", "generator": "composite",
         "params": {"d": 8, "m": 2}, "seed": 11, "max_iter": 100_000,
         "metric": "iterate_dist", "threshold": 1e-2},
        {"name": "tseng-reduction", "tags": {"reduction_check"},
         "kind": "identity", "check": "tseng", "threshold": 1e-12},
        {"name": "inertial-reduction", "tags": {"reduction_check"},
         "kind": "identity", "check": "inertial", "threshold": 1e-12},
        {"name": "product-space", "tags": {"reduction_check"},
         "kind": "identity", "check": "product", "threshold": 1e-12},
    ]


def _run_oracle_entry(entry) -> tuple[bool, str]:
    gen = _GENERATORS[entry["generator"]]
    inst = gen(seed=entry["seed"], **entry["params"])
    stop = StoppingRule(max_iter=entry["max_iter"], tol_gap=0.0, tol_step=0.0)
    fam = default_schedule_family(inst)
    if inst.kind == "composite":
        prob = inst.problem
        schedule = schedule_for(prob, fam)
        v0 = [np.zeros(d) for d in prob.block_dims]
        res = pd_run(prob, schedule, np.zeros(inst.dim), v0,
                     np.zeros(inst.dim), [z.copy() for z in v0], stop)
    else:
        prob = build_product_problem(lower_problem(inst.problem))
        schedule = build_power_law_schedule(fam, mu=prob.mu, eta=prob.eta)
        res = fbf_run(prob, schedule, np.zeros(inst.dim), np.zeros(inst.dim), stop)
    if entry["metric"] == "ergodic_set_dist":
        value = inst.distance_to_solution(res.z_final)
    else:
        value = float(np.linalg.norm(res.x_final - inst.oracle_solution))
    ok = value <= entry["threshold"]
    return ok, f"{entry['metric']}={value:.3e} (threshold {entry['threshold']:.0e})"


def _run_identity_entry(entry) -> tuple[bool, str]:
    from .reductions import (inertial_reduction_deviation,
                             product_space_deviation, tseng_reduction_deviation)
    checks = {
        "tseng": lambda: tseng_reduction_deviation(iterations=1000, seed=3),
        "inertial": lambda: inertial_reduction_deviation(iterations=1000, seed=4),
        "product": lambda: product_space_deviation(iterations=200, instances=10,
                                                   seed=5),
    }
    dev = checks[entry["check"]]()
    ok = dev <= entry["threshold"]
    return ok, f"max_deviation={dev:.3e} (threshold {entry['threshold']:.0e})"


def run_suite(filter_tags: str = "") -> int:
    """Run the battery; prints one pass/fail line per instance."""
    wanted = {t for t in filter_tags.split(",") if t}
    failures = 0
    matched = 0
    for entry in _suite_entries():
        if wanted and not wanted.issubset(entry["tags"]):
            continue
        matched += 1
        t0 = time.perf_counter()
        if entry["kind"] == "oracle":
            ok, detail = _run_oracle_entry(entry)
        else:
            ok, detail = _run_identity_entry(entry)
        dt = time.perf_counter() - t0
        print(f"{'PASS' if ok else 'FAIL'} {entry['name']}: {detail} [{dt:.1f}s]")
        failures += 0 if ok else 1
    if matched == 0:
        print("no instances matched the filter")
        return EXIT_OK
    return EXIT_OK if failures == 0 else EXIT_SUITE_FAIL


def _validate_cmd(cfg: dict) -> int:
    instance, mp, pd_prob, solver = _build_problem(cfg)
    stop_iters = cfg["stop"]["max_iter"]
    try:
        schedule = _build_schedule(cfg, pd_prob, stop_iters)
    except InfeasibleScheduleError as err:
        print(f"infeasible schedule: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    feas = check_feasibility(schedule, max(schedule.n0, stop_iters))
    if not feas.feasible:
        print(f"infeasible schedule: first violation at n={feas.first_violation}",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    print(f"config ok: n0={schedule.n0}, margin at horizon "
          f"{feas.margin_at_horizon:.6f}, certification={schedule.certification}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="penfbf",
        description="penalty forward-backward-forward solver harness")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a configured solve")
    p_run.add_argument("config")
    p_run.add_argument("--horizon", type=int, default=None,
                       help="override the certificate partial-sum horizon")
    p_val = sub.add_parser("validate", help="validate a config without running")
    p_val.add_argument("config")
    p_suite = sub.add_parser("suite", help="run the verification battery")
    p_suite.add_argument("--filter", default="", help="comma-separated tags")
    args = parser.parse_args(argv)

    if args.command == "suite":
        return run_suite(args.filter)

    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        print(f"cannot read config: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        _validate_config(cfg)
        if args.command == "run" and args.horizon is not None:
            cfg.setdefault("diagnostics", {})["certificate_horizon"] = args.horizon
        if args.command == "validate":
            return _validate_cmd(cfg)
        try:
            return _run_from_config(cfg, args.config)
        except InfeasibleScheduleError as err:
            print(f"infeasible schedule: {err}", file=sys.stderr)
            return EXIT_INFEASIBLE
    except ConfigError as err:
        print(str(err), file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, ValueError) as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
