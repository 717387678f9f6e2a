"""Stochastic economic dispatch with demand response whose realized value
depends on the accepted commitment, solved by a trust-region loop that
alternates local regression of the consumer response with a dispatch QP."""

from .baseline import CaseResult, global_regression_baseline, run_case
from .cleo import (
    CleoConfig,
    LlrModel,
    RankDeficientDesignError,
    TrustRegionState,
    estimate_ratio,
    fit_llr,
    run,
    solve_subproblem,
    surrogate,
)
from .dispatch import (
    Decision,
    DispatchEvaluation,
    IdentityResponse,
    check_constraints,
    dr_max,
    expected_cost,
    generation_cost,
    participation_factors,
    recourse_generation,
    violation_report,
)
from .netmodel import (
    Bus,
    CaseError,
    CaseFormatError,
    CaseValidationError,
    DisconnectedNetworkError,
    Drp,
    Generator,
    Line,
    Load,
    PowerSystem,
    ResUnit,
    compute_ptdf,
    incidence_maps,
    load_case,
)
from .oracle import ConsumerModel, OracleResponse, ResponsePair, collect
from .qpsolve import QpProblem, QpResult, SolverError, assemble_sed_qp, solve
from .scenario import (
    ResScenario,
    UncertaintyModel,
    covariance_of,
    sample_scenarios,
    variance_cost_coeffs,
)

__version__ = "0.1.0"

__all__ = [
    "Bus", "Line", "Generator", "ResUnit", "Drp", "Load", "PowerSystem",
    "CaseError", "CaseFormatError", "CaseValidationError",
    "DisconnectedNetworkError", "load_case", "compute_ptdf", "incidence_maps",
    "ResScenario", "UncertaintyModel", "sample_scenarios", "covariance_of",
    "variance_cost_coeffs",
    "Decision", "DispatchEvaluation", "IdentityResponse",
    "participation_factors", "recourse_generation", "generation_cost",
    "dr_max", "expected_cost", "check_constraints", "violation_report",
    "ConsumerModel", "OracleResponse", "ResponsePair", "collect",
    "LlrModel", "CleoConfig", "TrustRegionState", "RankDeficientDesignError",
    "fit_llr", "surrogate", "solve_subproblem", "estimate_ratio", "run",
    "QpProblem", "QpResult", "SolverError", "solve", "assemble_sed_qp",
    "CaseResult", "run_case", "global_regression_baseline",
    "__version__",
]
