"""Comparison runs: the learning loop against dispatch models that ignore
some or all of the uncertainty, plus a plain global-regression surrogate.

Case 1: full loop under decision-dependent and RES uncertainty.
Case 2: deterministic dispatch, no deviations, identity response.
Case 3: RES uncertainty priced in, response still taken at face value.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import cleo, qpsolve
from .config import (
    STREAM_EXPLORATION,
    STREAM_ORACLE,
    STREAM_SCENARIOS,
    derive_seed,
    get_key,
)
from .dispatch import (
    Decision,
    DispatchEvaluation,
    IdentityResponse,
    expected_cost,
    participation_factors,
    violation_report,
)
from .netmodel import PowerSystem, compute_ptdf, incidence_maps
from .oracle import ConsumerModel, ResponsePair
from .scenario import (
    UncertaintyModel,
    covariance_of,
    from_config as uncertainty_from_config,
    sample_deviations,
    variance_cost_coeffs,
)

CASE_IDS = (1, 2, 3)


@dataclass
class CaseResult:
    case_id: int
    objective: float
    dr_commitment: np.ndarray
    dr_total: float
    p_g: np.ndarray
    evaluation: DispatchEvaluation
    history: list = field(default_factory=list)
    stop_reason: str = "optimal"
    violations: dict = field(default_factory=dict)
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "case": self.case_id,
            "objective": self.objective,
            "dr_commitment": [float(v) for v in self.dr_commitment],
            "dr_commitment_total": self.dr_total,
            "dispatch": [float(v) for v in self.p_g],
            "cost_breakdown": {
                "gen": self.evaluation.gen_cost,
                "variance": self.evaluation.variance_cost,
                "dr": self.evaluation.dr_cost,
            },
            "stop_reason": self.stop_reason,
            "iterations": len(self.history),
            "violation_report": self.violations,
            "seed": self.seed,
        }


def run_case(
    sys: PowerSystem,
    oracle: ConsumerModel | None,
    case_id: int,
    config: dict | None = None,
) -> CaseResult:
    """Solve one comparison case and attach the post-solve feasibility report."""
    if case_id not in CASE_IDS:
        raise ValueError(f"case_id must be one of {CASE_IDS}")
    config = config or {}
    seed = int(config.get("seed", 0))
    margin = float(get_key(config, "dispatch.adequacy_margin", 0.0))
    n_samples = int(get_key(config, "dispatch.samples", 1000))
    epsilon = get_key(config, "dispatch.violation_epsilon")

    uncertainty = uncertainty_from_config(sys, config)
    if get_key(config, "uncertainty.seed") is None:
        uncertainty = UncertaintyModel(
            res_units=uncertainty.res_units,
            covariance=uncertainty.covariance,
            seed=derive_seed(seed, STREAM_SCENARIOS),
            distribution=uncertainty.distribution,
        )
    alpha = participation_factors(sys)
    lam = covariance_of(uncertainty)
    ptdf = compute_ptdf(sys)
    maps = incidence_maps(sys)

    history: list = []
    stop_reason = "optimal"
    if case_id == 1:
        if oracle is None:
            oracle = ConsumerModel.from_config(
                sys, config, seed=derive_seed(seed, STREAM_ORACLE)
            )
        tr_cfg = cleo.CleoConfig.from_config(
            config, seed=derive_seed(seed, STREAM_EXPLORATION)
        )
        out = cleo.run(sys, oracle, tr_cfg, uncertainty=uncertainty, margin=margin)
        decision, evaluation, history = out.decision, out.evaluation, out.history
        stop_reason = out.stop_reason
        response_mean = out.model.predict_mean(decision.p_rd)
    else:
        include_var = case_id == 3
        a_prime = variance_cost_coeffs(sys, lam) if include_var else np.zeros(sys.n_g)
        prob = qpsolve.assemble_sed_qp(
            sys, alpha, a_prime, ptdf, maps, model=None,
            margin=margin, include_variance=include_var,
        )
        res = qpsolve.solve(prob)
        if res.status != "optimal":
            raise qpsolve.SolverError(f"case {case_id} dispatch is {res.status}")
        decision = Decision(p_g_base=res.x[: sys.n_g], p_rd=res.x[sys.n_g:])
        evaluation = expected_cost(
            decision, sys, alpha, a_prime, IdentityResponse(), scenarios=None,
            analytic=True,
        )
        response_mean = decision.p_rd

    # Post-solve feasibility over sampled deviations (none for case 2,
    # whose model has no deviations by construction).
    if case_id == 2 or sys.n_r == 0:
        zeta_samples = np.zeros((0, sys.n_r))
    else:
        zeta_samples = sample_deviations(uncertainty, n_samples)
    violations = violation_report(
        decision, sys, alpha, ptdf, maps, response_mean, zeta_samples,
        margin=margin, epsilon=epsilon,
    )

    return CaseResult(
        case_id=case_id,
        objective=evaluation.expected_cost,
        dr_commitment=decision.p_rd,
        dr_total=float(decision.p_rd.sum()),
        p_g=decision.p_g_base,
        evaluation=evaluation,
        history=history,
        stop_reason=stop_reason,
        violations=violations,
        seed=seed,
    )


def global_regression_baseline(data: list[ResponsePair]) -> cleo.LlrModel:
    """One ordinary least-squares fit over all pairs; no locality, no ball."""
    if not data:
        raise ValueError("no data to fit")
    dim = data[0].p_rd.size
    if len(data) < dim + 1:
        raise cleo.RankDeficientDesignError(
            f"need at least {dim + 1} pairs, have {len(data)}"
        )
    return cleo.fit_llr(data, center=np.zeros(dim), radius=np.inf)


def run_global_regression(
    sys: PowerSystem,
    oracle: ConsumerModel,
    config: dict | None = None,
    n_points: int = 30,
) -> CaseResult:
    """Fit the response once on box-wide samples, then solve the dispatch QP."""
    from .dispatch import dr_max_vector
    from .oracle import collect

    config = config or {}
    seed = int(config.get("seed", 0))
    margin = float(get_key(config, "dispatch.adequacy_margin", 0.0))
    cap = dr_max_vector(sys)
    rng = np.random.default_rng(derive_seed(seed, STREAM_EXPLORATION))
    points = [rng.uniform(0.0, 1.0, size=sys.n_drp) * cap for _ in range(n_points)]
    data = collect(oracle, points)
    model = global_regression_baseline(data)

    uncertainty = uncertainty_from_config(sys, config)
    alpha = participation_factors(sys)
    a_prime = variance_cost_coeffs(sys, covariance_of(uncertainty))
    ptdf = compute_ptdf(sys)
    maps = incidence_maps(sys)
    prob = qpsolve.assemble_sed_qp(
        sys, alpha, a_prime, ptdf, maps, model=model, margin=margin
    )
    res = qpsolve.solve(prob)
    if res.status != "optimal":
        raise qpsolve.SolverError(f"global-regression dispatch is {res.status}")
    decision = Decision(p_g_base=res.x[: sys.n_g], p_rd=res.x[sys.n_g:])
    evaluation = expected_cost(
        decision, sys, alpha, a_prime, model, scenarios=None, analytic=True
    )
    return CaseResult(
        case_id=0,
        objective=evaluation.expected_cost,
        dr_commitment=decision.p_rd,
        dr_total=float(decision.p_rd.sum()),
        p_g=decision.p_g_base,
        evaluation=evaluation,
        seed=seed,
    )


def objective_spread(
    sys: PowerSystem,
    method: str,
    seeds: list[int],
    config: dict | None = None,
) -> dict:
    """Mean/std of the final objective across seeds, with wall time.

    ``method`` is ``cleo`` or ``linreg``; the oracle is rebuilt per seed
    from the config so each run sees an independent noise stream.
    """
    if method not in ("cleo", "linreg"):
        raise ValueError("method must be 'cleo' or 'linreg'")
    objectives = []
    start = time.perf_counter()
    for s in seeds:
        cfg = dict(config or {})
        cfg["seed"] = int(s)
        oracle = ConsumerModel.from_config(
            sys, cfg, seed=derive_seed(int(s), STREAM_ORACLE)
        )
        if method == "cleo":
            result = run_case(sys, oracle, 1, cfg)
        else:
            result = run_global_regression(sys, oracle, cfg)
        objectives.append(result.objective)
    elapsed = time.perf_counter() - start
    arr = np.array(objectives)
    return {
        "method": method,
        "n_seeds": len(seeds),
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=1)) if len(seeds) > 1 else 0.0,
        "seconds": elapsed,
    }
