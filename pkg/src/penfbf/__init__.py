"""Penalty forward-backward-forward splitting with inertial effects.

Solvers for monotone inclusions of the form 0 in Ax + Dx + N_M(x), where M
is the zero set of a monotone Lipschitz operator, together with a
primal-dual extension for linearly composed parallel-sum models and a
frontend for convex minimization over the minimizers of a smooth penalty.
"""

from .linalg import (DimensionMismatchError, LinearMap, PowerIterationError,
                     adjoint, as_vector, inner, norm, operator_norm)
from .operators import (LipschitzOperator, OperatorAuditError,
                        ResolventOperator, firm_nonexpansiveness_residual,
                        identity_resolvent, normal_cone_resolvent,
                        resolvent_inverse_identity_check, zero_operator)
from .prox import (CatalogMissError, ProxCatalogEntry,
                   affine_kernel_projection, make_indicator_affine,
                   make_indicator_box, make_l1_norm, make_quadratic_psd,
                   make_scaled_translate, make_squared_l2,
                   moreau_conjugate_prox, prox_catalog_lookup)
from .schedules import (FeasibilityReport, InfeasibleScheduleError, Schedule,
                        ScheduleFamily, SummabilityError, SummabilityReport,
                        build_power_law_schedule, check_feasibility,
                        summability_report)
from .fbf import (DivergenceError, FejerReport, InclusionProblem, RunResult,
                  SolverState, StoppingRule, TraceRecord, fbf_step,
                  fejer_diagnostic, initial_state, run, vi_residual)
from .primal_dual import (Block, PdRunResult, PrimalDualProblem, ProductState,
                          build_product_problem, composite_lipschitz_constant,
                          pd_initial_state, pd_run, pd_step, stack, unstack)
from .minimize import (InvalidPenaltySampleError, MinimizationBlock,
                       MinimizationProblem, MinimizeResult, PenaltyCertificate,
                       PenaltyTerm, QualificationReport, SmoothTerm,
                       lower_problem, penalty_certificate,
                       penalty_certificate_quadratic, quadratic_penalty,
                       qualification_check, schedule_for, solve_min)
from .suite import (GraphSampleError, OracleFailureError, ProblemInstance,
                    default_schedule_family, gen_composite_problem,
                    gen_l1_constrained_problem, gen_projection_problem,
                    graph_samples, project_l1_ball)

__version__ = "0.1.0"
