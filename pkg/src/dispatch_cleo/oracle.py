"""Ground-truth consumer-response simulator.

The environment the learning loop queries: accepted DR commitments go in,
realized commitments come out.  The hidden law is affine with additive
Gaussian noise; the optimizer never reads the coefficients, only the
query results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dispatch import dr_max
from .netmodel import PowerSystem


@dataclass(frozen=True)
class ResponsePair:
    """One observed (accepted, realized) DR data point."""

    p_rd: np.ndarray
    p_rd_enu: np.ndarray


@dataclass
class ConsumerModel:
    """Hidden response law: realized = a1.T @ accepted + a0 + noise.

    ``noise_std`` is per-DRP; with ``clip`` on, outputs are truncated to
    [0, clip_upper], which breaks exact affinity on purpose.
    """

    a1: np.ndarray
    a0: np.ndarray
    noise_std: np.ndarray
    seed: int = 0
    clip: bool = False
    clip_upper: np.ndarray | None = None
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.a1 = np.atleast_2d(np.asarray(self.a1, dtype=float))
        self.a0 = np.atleast_1d(np.asarray(self.a0, dtype=float))
        self.noise_std = np.atleast_1d(np.asarray(self.noise_std, dtype=float))
        n = self.a0.size
        if self.a1.shape != (n, n) or self.noise_std.size != n:
            raise ValueError("a1, a0 and noise_std dimensions are inconsistent")
        if (self.noise_std < 0).any():
            raise ValueError("noise_std must be nonnegative")
        if self.clip and self.clip_upper is None:
            raise ValueError("clip=True requires clip_upper")
        self._rng = np.random.default_rng(self.seed)

    @property
    def n_drp(self) -> int:
        return self.a0.size

    @classmethod
    def for_system(
        cls,
        sys: PowerSystem,
        responsiveness: float | np.ndarray = 0.8,
        intercept: float | np.ndarray = 0.0,
        noise_pct: float = 2.0,
        seed: int = 0,
        clip: bool = False,
    ) -> "ConsumerModel":
        """Default model for a system: sub-unity responsiveness, no offset,
        noise scaled to a percentage of each DRP baseline."""
        n = sys.n_drp
        a1 = np.asarray(responsiveness, dtype=float)
        if a1.ndim < 2:
            a1 = np.eye(n) * a1
        a0 = np.broadcast_to(np.asarray(intercept, dtype=float), (n,)).copy()
        noise = sys.drp_p_base * noise_pct / 100.0
        upper = np.array([dr_max(d) for d in sys.drps]) if clip else None
        return cls(a1=a1, a0=a0, noise_std=noise, seed=seed, clip=clip,
                   clip_upper=upper)

    @classmethod
    def from_config(cls, sys: PowerSystem, config: dict | None = None,
                    seed: int | None = None) -> "ConsumerModel":
        """Build from the ``oracle.*`` config keys; scalar a1 means a1 * I."""
        cfg = (config or {}).get("oracle", {})
        model = cls.for_system(
            sys,
            responsiveness=np.asarray(cfg.get("a1", 0.8), dtype=float),
            intercept=np.asarray(cfg.get("a0", 0.0), dtype=float),
            seed=int(cfg.get("seed", seed if seed is not None else 0)),
            clip=bool(cfg.get("clip", False)),
        )
        if "noise_std" in cfg:
            model.noise_std = np.broadcast_to(
                np.asarray(cfg["noise_std"], dtype=float), (sys.n_drp,)
            ).copy()
        return model

    def mean_response(self, p_rd: np.ndarray) -> np.ndarray:
        """Noise-free response; clipped if the model clips."""
        y = self.a1.T @ np.asarray(p_rd, dtype=float) + self.a0
        if self.clip:
            y = np.clip(y, 0.0, self.clip_upper)
        return y

    def respond(self, p_rd: np.ndarray) -> np.ndarray:
        """Realized DR for one accepted commitment vector."""
        p_rd = np.asarray(p_rd, dtype=float)
        if p_rd.shape != (self.n_drp,):
            raise ValueError(f"expected p_rd of shape ({self.n_drp},)")
        y = self.a1.T @ p_rd + self.a0
        y = y + self._rng.normal(0.0, 1.0, size=self.n_drp) * self.noise_std
        if self.clip:
            y = np.clip(y, 0.0, self.clip_upper)
        return y


def collect(model: ConsumerModel, decisions: list[np.ndarray]) -> list[ResponsePair]:
    """Query the oracle once per decision, in order."""
    if not decisions:
        raise ValueError("need at least one decision to collect responses")
    return [
        ResponsePair(p_rd=np.asarray(p, dtype=float), p_rd_enu=model.respond(p))
        for p in decisions
    ]


class OracleResponse:
    """Adapter exposing a ConsumerModel through the DR-response interface
    used by dispatch.expected_cost (mean / draw / draw_batch)."""

    def __init__(self, model: ConsumerModel):
        self.model = model

    def mean(self, p_rd: np.ndarray) -> np.ndarray:
        return self.model.mean_response(p_rd)

    def draw(self, p_rd: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.model.respond(p_rd)

    def draw_batch(self, p_rd: np.ndarray, n: int,
                   rng: np.random.Generator) -> np.ndarray:
        m = self.model
        base = m.a1.T @ np.asarray(p_rd, dtype=float) + m.a0
        out = base + m._rng.normal(0.0, 1.0, size=(n, m.n_drp)) * m.noise_std
        if m.clip:
            out = np.clip(out, 0.0, m.clip_upper)
        return out
