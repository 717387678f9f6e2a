"""Coupled learning and optimization over the DR commitment space.

Each iteration queries the consumer-response oracle around the current
iterate, fits a local affine regression of realized on accepted DR, solves
the resulting dispatch QP inside an inf-norm trust ball, and accepts or
rejects the step by the estimated ratio of actual to predicted decrease.
The ratio's "actual" decrease is itself model-based: the candidate point
is re-learned from fresh oracle data before being scored.

Generation is not a learned quantity: it is re-optimized inside every
subproblem, so the visible decision space is the accepted-DR vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import qpsolve
from .dispatch import Decision, dr_max_vector
from .netmodel import IncidenceMaps, PowerSystem
from .oracle import ConsumerModel, ResponsePair, collect
from .scenario import UncertaintyModel, covariance_of, variance_cost_coeffs


class RankDeficientDesignError(RuntimeError):
    """The regression design has no full-rank fit; exploration is too thin."""


@dataclass
class LlrModel:
    """Affine response fit plus the empirical residual sample.

    ``a1`` maps accepted to realized DR as a1.T @ p + a0; ``residuals``
    holds one row per fitted data point and defines the empirical noise
    distribution attached to the model.
    """

    a1: np.ndarray
    a0: np.ndarray
    residuals: np.ndarray

    @property
    def n_drp(self) -> int:
        return self.a0.size

    def predict_mean(self, p_rd: np.ndarray) -> np.ndarray:
        return self.a1.T @ np.asarray(p_rd, dtype=float) + self.a0

    # DR-response interface used by dispatch.expected_cost.
    def mean(self, p_rd: np.ndarray) -> np.ndarray:
        return self.predict_mean(p_rd)

    def draw(self, p_rd: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        row = self.residuals[rng.integers(0, self.residuals.shape[0])]
        return self.predict_mean(p_rd) + row

    def draw_batch(
        self, p_rd: np.ndarray, n: int, rng: np.random.Generator
    ) -> np.ndarray:
        rows = self.residuals[rng.integers(0, self.residuals.shape[0], size=n)]
        return self.predict_mean(p_rd)[None, :] + rows


def identity_model(n_drp: int) -> LlrModel:
    return LlrModel(
        a1=np.eye(n_drp), a0=np.zeros(n_drp), residuals=np.zeros((1, n_drp))
    )


def surrogate(m: LlrModel, p: np.ndarray, eps_draw: np.ndarray) -> np.ndarray:
    """Surrogate response at p under one residual draw."""
    return m.predict_mean(p) + np.asarray(eps_draw, dtype=float)


def fit_llr(
    data: list[ResponsePair],
    center: np.ndarray,
    radius: float,
    *,
    window_factor: float = 2.0,
    ridge: float = 1e-8,
) -> LlrModel:
    """Least-squares affine fit of realized on accepted DR near the center.

    Points within window_factor * radius of the center (inf-norm) are
    used; if fewer than dim + 1 qualify, the most recent dim + 5 pairs are
    taken instead.  The slope block is ridge-regularized on centered data,
    which keeps the fitted residual mean at zero exactly.
    """
    if not data:
        raise ValueError("no data to fit")
    dim = data[0].p_rd.size
    center = np.asarray(center, dtype=float)

    chosen = [
        pr for pr in data if np.max(np.abs(pr.p_rd - center), initial=0.0)
        <= window_factor * radius
    ]
    if len(chosen) < dim + 1:
        chosen = data[-(dim + 5):]
    if len(chosen) < dim + 1:
        raise RankDeficientDesignError(
            f"need at least {dim + 1} pairs, have {len(chosen)}"
        )

    x = np.array([pr.p_rd for pr in chosen])
    y = np.array([pr.p_rd_enu for pr in chosen])
    x_bar = x.mean(axis=0)
    y_bar = y.mean(axis=0)
    xc = x - x_bar
    if np.linalg.matrix_rank(xc, tol=1e-10 * max(1.0, np.abs(xc).max())) < dim:
        raise RankDeficientDesignError(
            "accepted-DR design is degenerate inside the fitting window"
        )
    gram = xc.T @ xc + ridge * np.eye(dim)
    a1 = np.linalg.solve(gram, xc.T @ (y - y_bar))
    a0 = y_bar - a1.T @ x_bar
    residuals = y - (x @ a1 + a0)
    return LlrModel(a1=a1, a0=a0, residuals=residuals)


@dataclass
class CleoConfig:
    """Trust-region constants; defaults are resolved against the system."""

    delta0: float | None = None
    delta_min: float = 1e-6
    delta_max: float | None = None
    eta1: float = 0.1
    gamma_shrink: float = 0.5
    gamma_grow: float = 2.0
    max_iters: int = 500
    batch: int | None = None
    tol: float = 1e-6
    noise_factor: float = 2.0
    window_factor: float = 2.0
    ridge: float = 1e-8
    seed: int = 0

    def resolved(self, sys: PowerSystem) -> "CleoConfig":
        cap = float(dr_max_vector(sys).max(initial=0.0))
        if cap <= 0.0:
            cap = 1.0
        out = replace(self)
        if out.delta_max is None:
            out.delta_max = cap
        if out.delta0 is None:
            out.delta0 = 0.25 * cap
        if out.batch is None:
            out.batch = max(3, sys.n_drp + 1)
        if not (0.0 < out.eta1 < 1.0):
            raise ValueError("eta1 must lie in (0, 1)")
        if not (out.delta_min < out.delta0 <= out.delta_max):
            raise ValueError("need delta_min < delta0 <= delta_max")
        if not (0.0 < out.gamma_shrink < 1.0 < out.gamma_grow):
            raise ValueError("need gamma_shrink in (0,1) and gamma_grow > 1")
        return out

    @classmethod
    def from_config(cls, config: dict | None, seed: int = 0) -> "CleoConfig":
        cfg = (config or {}).get("cleo", {})
        fields = {
            k: cfg[k]
            for k in (
                "delta0", "delta_min", "delta_max", "eta1", "gamma_shrink",
                "gamma_grow", "max_iters", "batch", "tol", "noise_factor",
                "window_factor", "ridge",
            )
            if k in cfg
        }
        return cls(seed=int(cfg.get("seed", seed)), **fields)


@dataclass
class IterationRecord:
    iter: int
    objective: float
    radius: float
    rho: float
    accepted: bool


@dataclass
class TrustRegionState:
    center: Decision
    radius: float
    dataset: list[ResponsePair] = field(default_factory=list)
    iter: int = 0
    history: list[IterationRecord] = field(default_factory=list)


@dataclass
class SubproblemResult:
    step: np.ndarray
    p_g: np.ndarray
    value: float
    feasible: bool
    predicted_decrease: float


@dataclass
class RunResult:
    """Loop output; unpacks as (decision, evaluation, history)."""

    decision: Decision
    evaluation: "DispatchEvaluation"
    history: list[IterationRecord]
    stop_reason: str
    state: TrustRegionState
    model: LlrModel

    def __iter__(self):
        return iter((self.decision, self.evaluation, self.history))


class _Objective:
    """Dispatch objective at fixed accepted DR, generation re-optimized."""

    def __init__(self, sys, alpha, a_prime, ptdf, maps, margin):
        self.sys = sys
        self.alpha = alpha
        self.a_prime = a_prime
        self.ptdf = ptdf
        self.maps = maps
        self.margin = margin

    def __call__(self, p_rd: np.ndarray, model: LlrModel) -> tuple[float, np.ndarray]:
        prob = qpsolve.assemble_sed_qp(
            self.sys, self.alpha, self.a_prime, self.ptdf, self.maps,
            model=model, center=p_rd, delta=0.0, margin=self.margin,
        )
        res = qpsolve.solve(prob)
        if res.status != "optimal":
            return math.inf, np.zeros(self.sys.n_g)
        return res.objective, res.x[: self.sys.n_g]

    def value(self, p_rd: np.ndarray, model: LlrModel) -> float:
        return self(p_rd, model)[0]


def solve_subproblem(
    state: TrustRegionState,
    m: LlrModel,
    sys: PowerSystem,
    alpha: np.ndarray,
    a_prime: np.ndarray,
    ptdf: np.ndarray,
    maps: IncidenceMaps,
    *,
    margin: float = 0.0,
    kappa: float = 1e-4,
) -> SubproblemResult:
    """Minimize the surrogate dispatch cost inside the current trust ball.

    The step covers the DR block; generation is optimized jointly.  The
    returned step carries a sufficient-decrease certificate: the achieved
    predicted decrease must be at least kappa * min(radius, decrease at
    the projected-gradient point), which a QP solved to optimality always
    satisfies.  An infeasible ball returns a zero step flagged infeasible.
    """
    center = state.center.p_rd
    prob = qpsolve.assemble_sed_qp(
        sys, alpha, a_prime, ptdf, maps, model=m,
        center=center, delta=state.radius, margin=margin,
    )
    x0 = np.concatenate([state.center.p_g_base, center])
    res = qpsolve.solve(prob, x0=x0)
    if res.status != "optimal":
        return SubproblemResult(
            step=np.zeros(sys.n_drp),
            p_g=state.center.p_g_base,
            value=math.inf,
            feasible=False,
            predicted_decrease=0.0,
        )
    obj = _Objective(sys, alpha, a_prime, ptdf, maps, margin)
    f_center, p_g_center = obj(center, m)
    pred = f_center - res.objective
    step = res.x[sys.n_g:] - center

    cauchy = _cauchy_decrease(prob, np.concatenate([p_g_center, center]), f_center)
    if pred < kappa * min(state.radius, cauchy) - 1e-9 * max(1.0, abs(f_center)):
        raise qpsolve.SolverError(
            "subproblem step lost to the projected-gradient point"
        )
    return SubproblemResult(
        step=step,
        p_g=res.x[: sys.n_g],
        value=res.objective,
        feasible=True,
        predicted_decrease=pred,
    )


def _cauchy_decrease(prob: qpsolve.QpProblem, x0: np.ndarray, f0: float) -> float:
    """Model decrease at the best box-projected steepest-descent point.

    Points that leave the general-inequality region don't count, so this
    is a lower bound on what the subproblem optimum must beat.
    """
    x0 = np.clip(x0, prob.lb, prob.ub)
    g = prob.q @ x0 + prob.c
    best = 0.0
    scale = np.abs(g).max(initial=0.0)
    if scale <= 0:
        return 0.0
    for t in (1.0, 0.5, 0.25, 0.1, 0.01):
        xt = np.clip(x0 - t / scale * g, prob.lb, prob.ub)
        if prob.a_ineq.size and (prob.a_ineq @ xt - prob.b_ineq).max(initial=0.0) > 1e-9:
            continue
        best = max(best, f0 - prob.objective(xt))
    return best


def estimate_ratio(
    state: TrustRegionState,
    s: np.ndarray,
    m_old: LlrModel,
    m_new: LlrModel,
    obj,
    *,
    floor: float = 0.0,
) -> float | None:
    """Ratio of estimated actual to predicted decrease for a candidate step.

    Both endpoints of the numerator are model-based estimates: the center
    under the model fitted there, the candidate under the model refit with
    fresh data at the candidate.  Returns None when the predicted decrease
    does not clear the floor (the step is then rejected without a ratio).
    """
    p = state.center.p_rd
    u_k = obj.value(p, m_old)
    f_cand = obj.value(p + s, m_old)
    pred = u_k - f_cand
    if not math.isfinite(pred) or pred <= floor:
        return None
    u_half = obj.value(p + s, m_new)
    return (u_k - u_half) / pred


def _explore(
    center: np.ndarray,
    radius: float,
    cap: np.ndarray,
    batch: int,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Center plus uniform perturbations inside the ball, kept in the box."""
    pts = [center.copy()]
    for _ in range(batch - 1):
        step = rng.uniform(-radius, radius, size=center.size)
        pts.append(np.clip(center + step, 0.0, cap))
    return pts


def run(
    sys: PowerSystem,
    oracle: ConsumerModel,
    config: CleoConfig | None = None,
    *,
    uncertainty: UncertaintyModel | None = None,
    margin: float = 0.0,
) -> RunResult:
    """Run the trust-region learning loop to a radius or iteration stop.

    Returns the best decision seen (by its model-based objective
    estimate), its cost evaluation under the final fitted model, and the
    per-iteration history.
    """
    from .dispatch import expected_cost, participation_factors
    from .netmodel import compute_ptdf, incidence_maps

    cfg = (config or CleoConfig()).resolved(sys)
    if uncertainty is None:
        uncertainty = UncertaintyModel(res_units=sys.res_units)
    alpha = participation_factors(sys)
    a_prime = variance_cost_coeffs(sys, covariance_of(uncertainty))
    ptdf = compute_ptdf(sys)
    maps = incidence_maps(sys)
    cap = dr_max_vector(sys)
    obj = _Objective(sys, alpha, a_prime, ptdf, maps, margin)
    rng = np.random.default_rng(cfg.seed)

    # Start at half the DR ceiling; generation warm-started from a DR-free
    # deterministic dispatch.
    p_rd0 = cap / 2.0
    ed = qpsolve.solve(
        qpsolve.assemble_sed_qp(
            sys, alpha, a_prime, ptdf, maps, model=None,
            center=np.zeros(sys.n_drp), delta=0.0, margin=margin,
        )
    )
    if ed.status != "optimal":
        raise qpsolve.SolverError("no feasible deterministic dispatch to start from")
    state = TrustRegionState(
        center=Decision(p_g_base=ed.x[: sys.n_g], p_rd=p_rd0),
        radius=cfg.delta0,
    )

    best_obj = math.inf
    best_decision = state.center
    last_model = identity_model(sys.n_drp)
    stop_reason = "max_iters"

    for k in range(cfg.max_iters):
        state.iter = k
        radius_k = state.radius

        def shrink_and_record(u_value: float, rho: float = math.nan) -> bool:
            state.history.append(
                IterationRecord(k, u_value, radius_k, rho, False)
            )
            state.radius = cfg.gamma_shrink * state.radius
            return state.radius < cfg.delta_min

        # Learn around the center from fresh oracle data.
        state.dataset.extend(
            collect(oracle, _explore(state.center.p_rd, state.radius, cap,
                                     cfg.batch, rng))
        )
        try:
            m1 = fit_llr(
                state.dataset, state.center.p_rd, state.radius,
                window_factor=cfg.window_factor, ridge=cfg.ridge,
            )
        except RankDeficientDesignError:
            if shrink_and_record(math.nan):
                stop_reason = "radius"
                break
            continue
        last_model = m1

        sub = solve_subproblem(
            state, m1, sys, alpha, a_prime, ptdf, maps, margin=margin
        )
        u_k, p_g_center = obj(state.center.p_rd, m1)
        if u_k < best_obj:
            best_obj = u_k
            best_decision = Decision(p_g_base=p_g_center, p_rd=state.center.p_rd)
        if not sub.feasible:
            if shrink_and_record(u_k):
                stop_reason = "radius"
                break
            continue

        # Significance floor for the predicted decrease: the larger of a
        # relative tolerance and what the fitted residual noise can
        # certify at the current window size.
        n_win = m1.residuals.shape[0]
        noise = float(
            sys.drp_pi_dr @ m1.residuals.std(axis=0)
        ) / math.sqrt(max(1, n_win))
        floor = max(cfg.tol * max(1.0, abs(u_k)), cfg.noise_factor * noise)
        if sub.predicted_decrease <= floor:
            if shrink_and_record(u_k):
                stop_reason = "radius"
                break
            continue

        # Fresh data at the candidate, refit, then score the step.
        candidate = state.center.p_rd + sub.step
        state.dataset.extend(
            collect(oracle, _explore(candidate, state.radius, cap, cfg.batch, rng))
        )
        try:
            m2 = fit_llr(
                state.dataset, candidate, state.radius,
                window_factor=cfg.window_factor, ridge=cfg.ridge,
            )
        except RankDeficientDesignError:
            if shrink_and_record(u_k):
                stop_reason = "radius"
                break
            continue

        rho = estimate_ratio(state, sub.step, m1, m2, obj, floor=floor)
        if rho is not None and rho >= cfg.eta1:
            state.center = Decision(p_g_base=sub.p_g, p_rd=candidate)
            state.radius = min(cfg.gamma_grow * state.radius, cfg.delta_max)
            state.history.append(IterationRecord(k, u_k, radius_k, rho, True))
            last_model = m2
        else:
            if shrink_and_record(u_k, math.nan if rho is None else rho):
                stop_reason = "radius"
                break

    # Score the final center in case the last accept was never evaluated.
    u_final, p_g_final = obj(state.center.p_rd, last_model)
    if u_final < best_obj:
        best_obj = u_final
        best_decision = Decision(p_g_base=p_g_final, p_rd=state.center.p_rd)

    evaluation = expected_cost(
        best_decision, sys, alpha, a_prime, last_model, scenarios=None,
        analytic=True,
    )
    return RunResult(
        decision=best_decision,
        evaluation=evaluation,
        history=state.history,
        stop_reason=stop_reason,
        state=state,
        model=last_model,
    )
