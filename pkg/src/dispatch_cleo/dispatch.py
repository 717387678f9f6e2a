"""Dispatch objective and constraint set under RES and DR uncertainty.

A Decision fixes base-case generation and accepted DR commitments; RES
deviations are absorbed through fixed participation factors.  Costs are
evaluated either by sample average over scenarios or by the closed form
(cost at base plus the variance term), which must agree within
Monte-Carlo error.

DR-response models are duck-typed: anything with ``mean(p_rd)``,
``draw(p_rd, rng)`` and ``draw_batch(p_rd, n, rng)`` works (see
IdentityResponse here, LlrModel in cleo, OracleResponse in oracle).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netmodel import Drp, IncidenceMaps, PowerSystem
from .scenario import ResScenario

# Solutions sitting exactly on a constraint boundary count as feasible
# once they clear it by this much; the QP assembly enforces the adequacy
# inequality strictly by the same offset.
FEAS_EPS = 1e-9


@dataclass(frozen=True)
class Decision:
    """Base-case generation (length N_G) and accepted DR (length N_DRP)."""

    p_g_base: np.ndarray
    p_rd: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "p_g_base", np.atleast_1d(np.asarray(self.p_g_base, dtype=float))
        )
        object.__setattr__(
            self, "p_rd", np.atleast_1d(np.asarray(self.p_rd, dtype=float))
        )
        if not (np.isfinite(self.p_g_base).all() and np.isfinite(self.p_rd).all()):
            raise ValueError("decision must be finite")
        if (self.p_rd < 0).any():
            raise ValueError("accepted DR must be nonnegative")


@dataclass(frozen=True)
class DispatchEvaluation:
    """Cost breakdown; expected_cost == gen_cost + variance_cost + dr_cost."""

    expected_cost: float
    gen_cost: float
    variance_cost: float
    dr_cost: float
    constraint_violations: list = field(default_factory=list)


def participation_factors(sys: PowerSystem) -> np.ndarray:
    """Share of the aggregate RES deviation each unit absorbs,
    inversely proportional to its quadratic cost coefficient."""
    a = sys.gen_a
    if (a <= 0).any():
        raise ValueError("participation factors need all quadratic coefficients > 0")
    inv = 1.0 / a
    return inv / inv.sum()


def recourse_generation(
    d: Decision, alpha: np.ndarray, zeta: ResScenario | np.ndarray
) -> np.ndarray:
    """Generation after absorbing the aggregate deviation: base - alpha * sum(zeta)."""
    z = zeta.zeta if isinstance(zeta, ResScenario) else np.asarray(zeta, dtype=float)
    return d.p_g_base - alpha * z.sum()


def generation_cost(p_g: np.ndarray, sys: PowerSystem) -> float:
    """Total quadratic production cost of a generation vector."""
    p_g = np.asarray(p_g, dtype=float)
    return float(np.sum(sys.gen_a * p_g**2 + sys.gen_b * p_g))


def dr_max(drp: Drp) -> float:
    """Commitment ceiling from the linear aggregated demand curve."""
    if drp.pi_max <= drp.pi_rr:
        raise ValueError("demand curve requires pi_max > pi_rr")
    return min(drp.p_base, drp.pi_s / (drp.pi_max - drp.pi_rr) * drp.p_base)


def dr_max_vector(sys: PowerSystem) -> np.ndarray:
    return np.array([dr_max(d) for d in sys.drps], dtype=float)


class IdentityResponse:
    """Realized DR equals accepted DR, deterministically."""

    def mean(self, p_rd: np.ndarray) -> np.ndarray:
        return np.asarray(p_rd, dtype=float)

    def draw(self, p_rd: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return np.asarray(p_rd, dtype=float)

    def draw_batch(
        self, p_rd: np.ndarray, n: int, rng: np.random.Generator
    ) -> np.ndarray:
        return np.tile(np.asarray(p_rd, dtype=float), (n, 1))


def _zeta_matrix(scenarios) -> np.ndarray:
    if isinstance(scenarios, np.ndarray):
        return np.atleast_2d(scenarios)
    return np.array(
        [s.zeta if isinstance(s, ResScenario) else np.asarray(s) for s in scenarios]
    )


def expected_cost(
    d: Decision,
    sys: PowerSystem,
    alpha: np.ndarray,
    a_prime: np.ndarray,
    response,
    scenarios,
    *,
    analytic: bool = False,
    rng: np.random.Generator | None = None,
) -> DispatchEvaluation:
    """Expected supply-side cost of a decision.

    Monte-Carlo mode averages the generation cost over the given scenarios
    and the DR cost over paired response draws; the variance effect is then
    already inside the sample average, so variance_cost reports 0.  Analytic
    mode prices the base-case generation plus the closed-form variance term
    sum(a_prime * alpha**2) and the mean response.
    """
    pi_dr = sys.drp_pi_dr

    if analytic:
        gen = generation_cost(d.p_g_base, sys)
        var = float(np.sum(a_prime * alpha**2))
        dr = float(response.mean(d.p_rd) @ pi_dr) if sys.n_drp else 0.0
        return DispatchEvaluation(
            expected_cost=gen + var + dr, gen_cost=gen, variance_cost=var, dr_cost=dr
        )

    zmat = _zeta_matrix(scenarios)
    if zmat.size == 0 or zmat.shape[0] == 0:
        raise ValueError("scenario set must be nonempty")
    shift = zmat.sum(axis=1)
    p_g = d.p_g_base[None, :] - alpha[None, :] * shift[:, None]
    gen = float(np.mean(np.sum(sys.gen_a * p_g**2 + sys.gen_b * p_g, axis=1)))
    if sys.n_drp:
        if rng is None:
            rng = np.random.default_rng(0)
        draws = response.draw_batch(d.p_rd, zmat.shape[0], rng)
        dr = float(np.mean(draws @ pi_dr))
    else:
        dr = 0.0
    return DispatchEvaluation(
        expected_cost=gen + dr, gen_cost=gen, variance_cost=0.0, dr_cost=dr
    )


def check_constraints(
    d: Decision,
    sys: PowerSystem,
    alpha: np.ndarray,
    ptdf: np.ndarray,
    maps: IncidenceMaps,
    response_mean: np.ndarray,
    zeta_eval: ResScenario | np.ndarray,
    *,
    margin: float = 0.0,
) -> list[tuple[str, float]]:
    """Evaluate the constraint set at one deviation scenario.

    Returns (constraint id, violation magnitude) pairs; empty means
    feasible at the supplied scenario.  Energy adequacy is strict, so a
    supply exactly at the floor is reported with magnitude 0.
    """
    z = zeta_eval.zeta if isinstance(zeta_eval, ResScenario) else np.asarray(
        zeta_eval, dtype=float
    )
    p_g = recourse_generation(d, alpha, z)
    response_mean = np.asarray(response_mean, dtype=float)
    out: list[tuple[str, float]] = []

    # Energy adequacy (strict inequality).
    supply = p_g.sum() + sys.res_nominal.sum() + response_mean.sum()
    floor = sys.total_load + margin
    if supply <= floor:
        out.append(("adequacy", max(0.0, floor - supply)))

    # Line flows, both directions.
    inj = (
        maps.gen @ p_g
        + (maps.drp @ d.p_rd if sys.n_drp else 0.0)
        + (maps.res @ (sys.res_nominal + z) if sys.n_r else 0.0)
        - maps.load @ np.array([ld.p for ld in sys.loads])
    )
    flows = ptdf @ inj
    limits = np.array([ln.flow_limit for ln in sys.lines])
    over = np.abs(flows) - limits
    for l in np.nonzero(over > FEAS_EPS)[0]:
        out.append((f"flow[{l}]", float(over[l])))

    # Recourse generation bounds.
    lo = sys.gen_p_min - p_g
    hi = p_g - sys.gen_p_max
    for i in np.nonzero(lo > FEAS_EPS)[0]:
        out.append((f"gen_lower[{i}]", float(lo[i])))
    for i in np.nonzero(hi > FEAS_EPS)[0]:
        out.append((f"gen_upper[{i}]", float(hi[i])))

    # DR commitment box.
    if sys.n_drp:
        cap = dr_max_vector(sys)
        under = -d.p_rd
        above = d.p_rd - cap
        for j in np.nonzero(under > FEAS_EPS)[0]:
            out.append((f"dr_lower[{j}]", float(under[j])))
        for j in np.nonzero(above > FEAS_EPS)[0]:
            out.append((f"dr_upper[{j}]", float(above[j])))
    return out


def violation_report(
    d: Decision,
    sys: PowerSystem,
    alpha: np.ndarray,
    ptdf: np.ndarray,
    maps: IncidenceMaps,
    response_mean: np.ndarray,
    zeta_samples: np.ndarray,
    *,
    margin: float = 0.0,
    epsilon: float | None = None,
) -> dict:
    """Monte-Carlo feasibility report over sampled deviations.

    The optimizer enforces constraints at zero deviation; this measures how
    often each family is violated across draws, for comparison against a
    configured probability cap (reported, never enforced).
    """
    zmat = _zeta_matrix(zeta_samples) if len(zeta_samples) else np.zeros((0, sys.n_r))
    families = ("adequacy", "flow", "gen_bounds", "dr_bounds")
    counts = dict.fromkeys(families, 0)
    any_count = 0
    for z in zmat:
        entries = check_constraints(
            d, sys, alpha, ptdf, maps, response_mean, z, margin=margin
        )
        if entries:
            any_count += 1
        hit = set()
        for cid, _ in entries:
            fam = (
                "adequacy" if cid == "adequacy"
                else "flow" if cid.startswith("flow")
                else "gen_bounds" if cid.startswith("gen_")
                else "dr_bounds"
            )
            hit.add(fam)
        for fam in hit:
            counts[fam] += 1
    n = zmat.shape[0]
    at_mean = check_constraints(
        d, sys, alpha, ptdf, maps, response_mean, np.zeros(sys.n_r), margin=margin
    )
    return {
        "samples": int(n),
        "rates": {fam: (counts[fam] / n if n else 0.0) for fam in families},
        "any_rate": any_count / n if n else 0.0,
        "feasible_at_mean": not at_mean,
        "violations_at_mean": [[cid, mag] for cid, mag in at_mean],
        "epsilon": epsilon,
    }
