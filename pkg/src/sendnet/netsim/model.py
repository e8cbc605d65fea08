"""Analytic traffic models: transmission counts and the expected-time integral."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .scenario import SimScenario

REL_TOL = 1e-9
MAX_REFINEMENTS = 22

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class Breakpoints:
    """Piecewise-linear function through (t, value) points, constant outside them."""
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.points:
            raise ValueError("need at least one breakpoint")
        ts = [t for t, _ in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("breakpoint times must be strictly increasing")

    def __call__(self, t):
        ts = np.array([p[0] for p in self.points])
        vs = np.array([p[1] for p in self.points])
        return np.interp(t, ts, vs)

    @property
    def knots(self) -> list[float]:
        return [t for t, _ in self.points]


def constant(value: float) -> Breakpoints:
    return Breakpoints(((0.0, float(value)),))


@dataclass(frozen=True)
class RelayComplexityModel:
    messages: float
    nodes: int
    k: int
    t_m: float
    horizon: float
    latency: Breakpoints
    loss: Breakpoints
    retransmit: Breakpoints

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.nodes < 1 or self.k < 1:
            raise ValueError("nodes and k must be positive")
        for t, v in self.loss.points:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"loss probability {v} at t={t} outside [0, 1]")
        for name in ("latency", "retransmit"):
            if any(v < 0 for _, v in getattr(self, name).points):
                raise ValueError(f"{name} must be nonnegative")

    def fanout(self, scheme: str) -> int:
        if scheme == "broadcast":
            return self.nodes - 1
        if scheme == "edge_network":
            return self.k
        raise ValueError(f"unknown scheme {scheme!r}")

    def integrand(self, t, scheme: str):
        return (self.messages * self.fanout(scheme) * (self.t_m + self.latency(t))
                * (1.0 + self.retransmit(t) * self.loss(t)))


def _grid(model: RelayComplexityModel, per_segment: int) -> np.ndarray:
    # every breakpoint is a grid node so kinks never fall inside a trapezoid
    knots = {0.0, model.horizon}
    for f in (model.latency, model.loss, model.retransmit):
        knots.update(t for t in f.knots if 0.0 < t < model.horizon)
    knots = sorted(knots)
    parts = [np.linspace(a, b, per_segment + 1)[:-1] for a, b in zip(knots, knots[1:])]
    return np.concatenate(parts + [np.array([model.horizon])])


def expected_total_time(model: RelayComplexityModel, scheme: str) -> float:
    """Trapezoid integral over [0, horizon], halving the step until the relative change < 1e-9."""
    model.fanout(scheme)
    steps = 4
    prev = None
    for _ in range(MAX_REFINEMENTS):
        ts = _grid(model, steps)
        value = float(_trapezoid(model.integrand(ts, scheme), ts))
        if prev is not None and abs(value - prev) <= REL_TOL * max(abs(value), 1e-300):
            return value
        prev = value
        steps *= 2
    return prev


def predicted_transmissions(scenario: "SimScenario") -> tuple[int, int, float]:
    """(no-delegation count, delegation count, improvement factor) for T messages per group."""
    t = scenario.messages_per_group
    no_deleg = sum(g.members * t * (g.members - 1) for g in scenario.groups)
    deleg = sum(t * sum(m + 1 for m in g.delegation.values()) + t * g.other for g in scenario.groups)
    if deleg == 0:
        raise ZeroDivisionError("delegation transmission count is zero")
    return no_deleg, deleg, no_deleg / deleg


def predicted_terms(scenario: "SimScenario") -> dict[str, int]:
    """The two summands of the delegation count, per scenario."""
    t = scenario.messages_per_group
    return {
        "delegation_term": sum(t * sum(m + 1 for m in g.delegation.values()) for g in scenario.groups),
        "other_term": sum(t * g.other for g in scenario.groups),
    }


def same_workload_baseline(scenario: "SimScenario") -> int:
    """Broadcast count for the exact workload the delegation run sends (T messages per group)."""
    t = scenario.messages_per_group
    return sum(t * (g.members - 1) for g in scenario.groups)
