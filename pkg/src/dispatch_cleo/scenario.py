"""RES forecast-error model: deviation sampling and variance-cost pricing.

Each RES unit deviates from its nominal output inside a symmetric,
zero-mean interval whose half width is ``p_nominal * r_pct / 100``.  The
default draw is uniform on that interval; a truncated normal (cut at the
interval edges, base sigma = half the width) is available via config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .netmodel import PowerSystem, ResUnit

DISTRIBUTIONS = ("uniform", "truncnormal")

# Truncation point of the optional truncated normal, in base sigmas.
_TN_ALPHA = 2.0


def _tn_variance_factor() -> float:
    """Variance of a standard normal truncated at +/- alpha, over sigma^2."""
    a = _TN_ALPHA
    phi = math.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
    big_phi = 0.5 * (1.0 + math.erf(a / math.sqrt(2.0)))
    return 1.0 - 2.0 * a * phi / (2.0 * big_phi - 1.0)


@dataclass(frozen=True)
class ResScenario:
    """One realized deviation vector, length N_R, in pu."""

    zeta: np.ndarray


@dataclass(frozen=True)
class UncertaintyModel:
    res_units: tuple[ResUnit, ...]
    covariance: np.ndarray | None = None
    seed: int = 0
    distribution: str = "uniform"

    def __post_init__(self) -> None:
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(
                f"unknown distribution {self.distribution!r}; "
                f"expected one of {DISTRIBUTIONS}"
            )
        if self.covariance is not None:
            _check_psd(np.asarray(self.covariance, dtype=float))

    @property
    def half_widths(self) -> np.ndarray:
        return np.array([r.half_width for r in self.res_units], dtype=float)


def _check_psd(lam: np.ndarray) -> None:
    if lam.ndim != 2 or lam.shape[0] != lam.shape[1]:
        raise ValueError("covariance must be a square matrix")
    if not np.allclose(lam, lam.T, atol=1e-10):
        raise ValueError("covariance must be symmetric")
    eigs = np.linalg.eigvalsh(lam)
    if eigs.min(initial=0.0) < -1e-10 * max(1.0, abs(eigs).max(initial=0.0)):
        raise ValueError("covariance must be positive semidefinite")


def from_config(sys: PowerSystem, config: dict | None = None) -> UncertaintyModel:
    """Build an UncertaintyModel from the ``uncertainty.*`` config keys."""
    cfg = (config or {}).get("uncertainty", {})
    cov = cfg.get("covariance")
    return UncertaintyModel(
        res_units=sys.res_units,
        covariance=None if cov is None else np.asarray(cov, dtype=float),
        seed=int(cfg.get("seed", 0)),
        distribution=str(cfg.get("distribution", "uniform")),
    )


def sample_deviations(model: UncertaintyModel, n: int) -> np.ndarray:
    """Draw n deviation vectors as an (n, N_R) array.

    Rows are filled in order from a generator seeded by ``model.seed``, so
    row i is the same whatever n is requested (uniform case).
    """
    if n < 1:
        raise ValueError("need at least one scenario")
    w = model.half_widths
    rng = np.random.default_rng(model.seed)
    if model.distribution == "uniform":
        return rng.uniform(-1.0, 1.0, size=(n, w.size)) * w
    # Truncated normal: redraw out-of-interval components until none remain.
    sigma = w / _TN_ALPHA
    out = rng.normal(0.0, 1.0, size=(n, w.size)) * sigma
    bad = np.abs(out) > w
    while bad.any():
        out[bad] = (rng.normal(0.0, 1.0, size=int(bad.sum()))
                    * np.broadcast_to(sigma, out.shape)[bad])
        bad = np.abs(out) > w
    return out


def sample_scenarios(model: UncertaintyModel, n: int) -> list[ResScenario]:
    """n independent scenarios, reproducible for a given seed."""
    return [ResScenario(zeta=row) for row in sample_deviations(model, n)]


def covariance_of(model: UncertaintyModel) -> np.ndarray:
    """Covariance of the deviation vector.

    A user-supplied matrix is returned verbatim; otherwise units are
    independent and the diagonal carries the per-unit variance of the
    configured distribution.
    """
    if model.covariance is not None:
        lam = np.asarray(model.covariance, dtype=float)
        _check_psd(lam)
        return lam
    w = model.half_widths
    if model.distribution == "uniform":
        var = w**2 / 3.0
    else:
        var = (w / _TN_ALPHA) ** 2 * _tn_variance_factor()
    return np.diag(var)


def variance_cost_coeffs(sys: PowerSystem, lam: np.ndarray) -> np.ndarray:
    """Per-generator variance-cost coefficients: (sum of all of lam) * a_i."""
    lam = np.asarray(lam, dtype=float)
    n_r = sys.n_r
    if lam.shape != (n_r, n_r):
        raise ValueError(
            f"covariance shape {lam.shape} does not match N_R={n_r}"
        )
    return float(lam.sum()) * sys.gen_a
