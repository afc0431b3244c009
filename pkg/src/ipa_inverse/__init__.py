"""Iterative projection solver and analysis tools for non-convexly
constrained linear inverse problems g = T f + e."""
from .hilbert import (
    DimensionError, LinearOperator, adjoint_apply, adjoint_consistency_check, apply,
    as_vector, linearity_check, spectral_norm_sq_estimate,
)
from .sets import (
    KSparse, LowRank, ProjectionResult, UnionOfSubspaces, membership_check,
    parse_set, project_ksparse, project_lowrank, project_union_subspaces,
)
from .solver import (
    ConditionError, ConstantEps, DivergenceError, GeometricEps, SolverConfig,
    SolverTrace, default_mu, ipa_step, iteration_budget, solve,
)
from .analysis import (
    BiLipschitzEstimate, audit_trace, brute_force_fopt, condition_check,
    evaluate_bounds, exact_bilipschitz, exact_bilipschitz_sparse,
    exact_bilipschitz_uos, mc_bilipschitz,
)
from .harness import ExperimentConfig, ProblemSpec, generate_problem, run_experiment

__version__ = "0.1.0"
