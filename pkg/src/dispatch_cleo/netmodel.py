"""Power-system data model, case-file loading, PTDF and incidence maps.

The grid is described by a :class:`PowerSystem` built from a ``.case`` file
(a JSON document, see :func:`load_case`).  All powers are stored in per-unit
on ``base_mva``; the network model is the lossless DC approximation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class CaseError(ValueError):
    """Base class for problems with a case file or system description."""


class CaseFormatError(CaseError):
    """The case file cannot be parsed or is missing required structure."""


class CaseValidationError(CaseError):
    """The case parsed but violates a system invariant."""


class DisconnectedNetworkError(RuntimeError):
    """The reduced susceptance matrix is singular (islanded network)."""


@dataclass(frozen=True)
class Bus:
    id: int
    is_slack: bool = False


@dataclass(frozen=True)
class Line:
    """Transmission line with per-unit reactance and a symmetric flow limit."""

    from_bus: int
    to_bus: int
    reactance: float
    flow_limit: float


@dataclass(frozen=True)
class Generator:
    """Dispatchable unit with quadratic cost a*p**2 + b*p ($, p in pu)."""

    bus: int
    a: float
    b: float
    p_min: float
    p_max: float


@dataclass(frozen=True)
class ResUnit:
    """Renewable injection with nominal output and a +/- r_pct deviation band."""

    bus: int
    p_nominal: float
    r_pct: float

    @property
    def half_width(self) -> float:
        """Half width of the deviation interval, in pu."""
        return self.p_nominal * self.r_pct / 100.0


@dataclass(frozen=True)
class Drp:
    """Demand response provider aggregating consumers at one bus.

    Prices: pi_s is the incentive paid to end consumers, pi_max the demand
    curve intercept, pi_rr the retail rate and pi_dr the day-ahead offer
    price per pu of delivered reduction.
    """

    bus: int
    p_base: float
    pi_s: float
    pi_max: float
    pi_rr: float
    pi_dr: float


@dataclass(frozen=True)
class Load:
    bus: int
    p: float


@dataclass(frozen=True)
class PowerSystem:
    """Immutable grid description; safe to share across threads."""

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    res_units: tuple[ResUnit, ...]
    drps: tuple[Drp, ...]
    loads: tuple[Load, ...]
    base_mva: float = 100.0
    name: str = ""

    @property
    def n_b(self) -> int:
        return len(self.buses)

    @property
    def n_l(self) -> int:
        return len(self.lines)

    @property
    def n_g(self) -> int:
        return len(self.generators)

    @property
    def n_r(self) -> int:
        return len(self.res_units)

    @property
    def n_drp(self) -> int:
        return len(self.drps)

    @property
    def slack(self) -> int:
        for b in self.buses:
            if b.is_slack:
                return b.id
        raise CaseValidationError("system has no slack bus")

    @property
    def nonslack(self) -> tuple[int, ...]:
        s = self.slack
        return tuple(b.id for b in self.buses if b.id != s)

    # Convenience vectors used throughout the dispatch code.
    @property
    def gen_a(self) -> np.ndarray:
        return np.array([g.a for g in self.generators], dtype=float)

    @property
    def gen_b(self) -> np.ndarray:
        return np.array([g.b for g in self.generators], dtype=float)

    @property
    def gen_p_min(self) -> np.ndarray:
        return np.array([g.p_min for g in self.generators], dtype=float)

    @property
    def gen_p_max(self) -> np.ndarray:
        return np.array([g.p_max for g in self.generators], dtype=float)

    @property
    def res_nominal(self) -> np.ndarray:
        return np.array([r.p_nominal for r in self.res_units], dtype=float)

    @property
    def drp_pi_dr(self) -> np.ndarray:
        return np.array([d.pi_dr for d in self.drps], dtype=float)

    @property
    def drp_p_base(self) -> np.ndarray:
        return np.array([d.p_base for d in self.drps], dtype=float)

    @property
    def total_load(self) -> float:
        return float(sum(ld.p for ld in self.loads))

    def validate(self) -> None:
        """Check all structural invariants; raise CaseValidationError."""
        ids = [b.id for b in self.buses]
        if sorted(ids) != list(range(len(ids))):
            raise CaseValidationError(
                "bus ids must be contiguous 0..N-1, got %r" % (sorted(ids),)
            )
        n_slack = sum(1 for b in self.buses if b.is_slack)
        if n_slack == 0:
            raise CaseValidationError("no slack bus marked")
        if n_slack > 1:
            raise CaseValidationError("more than one slack bus marked")
        valid = set(ids)

        for i, ln in enumerate(self.lines):
            if ln.from_bus not in valid or ln.to_bus not in valid:
                raise CaseValidationError(f"line {i} references unknown bus")
            if ln.from_bus == ln.to_bus:
                raise CaseValidationError(f"line {i} connects a bus to itself")
            if not ln.reactance > 0:
                raise CaseValidationError(f"line {i} has nonpositive reactance")
            if not ln.flow_limit > 0:
                raise CaseValidationError(f"line {i} has nonpositive flow limit")
        for i, g in enumerate(self.generators):
            if g.bus not in valid:
                raise CaseValidationError(f"generator {i} references unknown bus")
            if not g.a > 0:
                raise CaseValidationError(
                    f"generator {i} needs a quadratic coefficient > 0"
                )
            if not (0 <= g.p_min <= g.p_max):
                raise CaseValidationError(f"generator {i} has bad power bounds")
        for i, r in enumerate(self.res_units):
            if r.bus not in valid:
                raise CaseValidationError(f"res unit {i} references unknown bus")
            if r.p_nominal < 0:
                raise CaseValidationError(f"res unit {i} has negative output")
            if not (0 <= r.r_pct <= 100):
                raise CaseValidationError(f"res unit {i} r_pct outside [0, 100]")
        for i, d in enumerate(self.drps):
            if d.bus not in valid:
                raise CaseValidationError(f"drp {i} references unknown bus")
            if not d.pi_max > d.pi_rr > 0:
                raise CaseValidationError(f"drp {i} needs pi_max > pi_rr > 0")
            if d.p_base < 0 or d.pi_s < 0 or d.pi_dr < 0:
                raise CaseValidationError(f"drp {i} has a negative price or baseline")
        for i, ld in enumerate(self.loads):
            if ld.bus not in valid:
                raise CaseValidationError(f"load {i} references unknown bus")
            if ld.p < 0:
                raise CaseValidationError(f"load {i} is negative")

        if self.n_b > 1 and not _connected(self.n_b, self.lines):
            raise CaseValidationError("network is not connected")


def _connected(n_b: int, lines: tuple[Line, ...]) -> bool:
    adj: list[list[int]] = [[] for _ in range(n_b)]
    for ln in lines:
        adj[ln.from_bus].append(ln.to_bus)
        adj[ln.to_bus].append(ln.from_bus)
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == n_b


_REQUIRED_FIELDS = {
    "buses": ("id",),
    "lines": ("from_bus", "to_bus", "reactance", "flow_limit"),
    "generators": ("bus", "a", "b", "p_min", "p_max"),
    "res_units": ("bus", "p_nominal", "r_pct"),
    "drps": ("bus", "p_base", "pi_s", "pi_max", "pi_rr", "pi_dr"),
    "loads": ("bus", "p"),
}


def _require(entry: dict, fields: tuple[str, ...], where: str) -> None:
    for f in fields:
        if f not in entry:
            raise CaseFormatError(f"{where}: missing field '{f}'")


def load_case(path: str) -> PowerSystem:
    """Load and validate a case file.

    The file is a JSON object with a scalar ``base_mva`` and arrays
    ``buses``, ``lines``, ``generators``, ``res_units``, ``drps`` and
    ``loads``.  Power quantities (bounds, nominal outputs, baselines, loads
    and flow limits) are given in MW and converted to per-unit on
    ``base_mva``; cost and price coefficients are used as given.

    If no bus is marked ``is_slack``, the bus hosting the largest-capacity
    generator becomes the slack.
    """
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as e:
        raise CaseFormatError(f"{path}: {e}") from e
    except json.JSONDecodeError as e:
        raise CaseFormatError(
            f"{path}:{e.lineno}:{e.colno}: {e.msg}"
        ) from e

    if not isinstance(raw, dict):
        raise CaseFormatError(f"{path}: top level must be an object")
    for key in ("base_mva", *(_REQUIRED_FIELDS.keys())):
        if key not in raw:
            raise CaseFormatError(f"{path}: missing top-level key '{key}'")
    base = float(raw["base_mva"])
    if base <= 0:
        raise CaseFormatError(f"{path}: base_mva must be positive")
    for key, fields in _REQUIRED_FIELDS.items():
        if not isinstance(raw[key], list):
            raise CaseFormatError(f"{path}: '{key}' must be an array")
        for i, entry in enumerate(raw[key]):
            if not isinstance(entry, dict):
                raise CaseFormatError(f"{path}: {key}[{i}] must be an object")
            _require(entry, fields, f"{path}: {key}[{i}]")

    buses = tuple(
        Bus(id=int(b["id"]), is_slack=bool(b.get("is_slack", False)))
        for b in raw["buses"]
    )
    lines = tuple(
        Line(
            from_bus=int(ln["from_bus"]),
            to_bus=int(ln["to_bus"]),
            reactance=float(ln["reactance"]),
            flow_limit=float(ln["flow_limit"]) / base,
        )
        for ln in raw["lines"]
    )
    generators = tuple(
        Generator(
            bus=int(g["bus"]),
            a=float(g["a"]),
            b=float(g["b"]),
            p_min=float(g["p_min"]) / base,
            p_max=float(g["p_max"]) / base,
        )
        for g in raw["generators"]
    )
    res_units = tuple(
        ResUnit(
            bus=int(r["bus"]),
            p_nominal=float(r["p_nominal"]) / base,
            r_pct=float(r["r_pct"]),
        )
        for r in raw["res_units"]
    )
    drps = tuple(
        Drp(
            bus=int(d["bus"]),
            p_base=float(d["p_base"]) / base,
            pi_s=float(d["pi_s"]),
            pi_max=float(d["pi_max"]),
            pi_rr=float(d["pi_rr"]),
            pi_dr=float(d["pi_dr"]),
        )
        for d in raw["drps"]
    )
    loads = tuple(
        Load(bus=int(ld["bus"]), p=float(ld["p"]) / base) for ld in raw["loads"]
    )

    if not any(b.is_slack for b in buses) and generators:
        biggest = max(generators, key=lambda g: (g.p_max, -g.bus))
        buses = tuple(
            Bus(id=b.id, is_slack=(b.id == biggest.bus)) for b in buses
        )

    sys = PowerSystem(
        buses=buses,
        lines=lines,
        generators=generators,
        res_units=res_units,
        drps=drps,
        loads=loads,
        base_mva=base,
        name=str(raw.get("name", "")),
    )
    sys.validate()
    return sys


def _susceptance(sys: PowerSystem) -> tuple[np.ndarray, np.ndarray]:
    """Full nodal susceptance matrix B and the line->angle map Bf."""
    n_b, n_l = sys.n_b, sys.n_l
    b_full = np.zeros((n_b, n_b))
    b_flow = np.zeros((n_l, n_b))
    for l, ln in enumerate(sys.lines):
        y = 1.0 / ln.reactance
        f, t = ln.from_bus, ln.to_bus
        b_full[f, f] += y
        b_full[t, t] += y
        b_full[f, t] -= y
        b_full[t, f] -= y
        b_flow[l, f] = y
        b_flow[l, t] = -y
    return b_full, b_flow


def compute_ptdf(sys: PowerSystem) -> np.ndarray:
    """Power transfer distribution factors, shape (N_L, N_B - 1).

    Columns follow the non-slack buses in ascending id order.  For an
    injection vector p over those buses (the slack absorbing the balance),
    ``ptdf @ p`` gives the line flows, positive in the from->to direction.
    """
    b_full, b_flow = _susceptance(sys)
    keep = list(sys.nonslack)
    b_red = b_full[np.ix_(keep, keep)]
    if keep:
        # A disconnected network makes the reduced matrix singular.
        if np.linalg.cond(b_red) > 1e12:
            raise DisconnectedNetworkError(
                "reduced susceptance matrix is singular; network islanded?"
            )
        theta_sens = np.linalg.solve(b_red.T, b_flow[:, keep].T).T
    else:
        theta_sens = np.zeros((sys.n_l, 0))
    return theta_sens


class IncidenceMaps(NamedTuple):
    """Device-to-bus injection maps over the non-slack buses."""

    gen: np.ndarray
    drp: np.ndarray
    res: np.ndarray
    load: np.ndarray


def incidence_maps(sys: PowerSystem) -> IncidenceMaps:
    """Build the four (N_B - 1) x N_device maps for generators, DRPs,
    RES units and loads.  A device at the slack bus maps to a zero column."""
    row_of = {bus: i for i, bus in enumerate(sys.nonslack)}

    def build(buses: list[int]) -> np.ndarray:
        m = np.zeros((len(row_of), len(buses)))
        for j, bus in enumerate(buses):
            if bus in row_of:
                m[row_of[bus], j] = 1.0
        return m

    return IncidenceMaps(
        gen=build([g.bus for g in sys.generators]),
        drp=build([d.bus for d in sys.drps]),
        res=build([r.bus for r in sys.res_units]),
        load=build([ld.bus for ld in sys.loads]),
    )
