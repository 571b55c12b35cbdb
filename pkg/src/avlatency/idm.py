"""Intelligent Driver Model for background vehicles."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .state import VehicleState


class OverlapError(ValueError):
    """Raised when the follower already overlaps its leader."""


@dataclass(frozen=True)
class IdmParams:
    """IDM parameters; defaults follow common microscopic-simulator values.

    Args:
        v0: desired speed (m/s).
        T: desired time headway (s).
        a: maximum acceleration (m/s^2).
        b: comfortable deceleration (m/s^2).
        delta: acceleration exponent.
        s0: minimum standstill gap (m).
    """

    v0: float = 15.0
    T: float = 1.0
    a: float = 2.6
    b: float = 4.5
    delta: float = 4.0
    s0: float = 2.5

    def __post_init__(self):
        for name in ("v0", "T", "a", "b", "s0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"IDM parameter {name} must be positive")
        if self.delta < 1:
            raise ValueError("IDM delta must be >= 1")


def desired_gap(v: float, dv: float, p: IdmParams) -> float:
    # Dynamic part floored at zero (as in SUMO) so a fast-receding leader never adds braking.
    return p.s0 + max(0.0, v * p.T + v * dv / (2.0 * math.sqrt(p.a * p.b)))


def equilibrium_gap(v: float, p: IdmParams) -> float:
    """Bumper gap at which a follower matching its leader's speed ``v`` has zero acceleration."""
    free = 1.0 - (v / p.v0) ** p.delta
    if free <= 0:
        raise ValueError("no equilibrium gap at or above the desired speed")
    return (p.s0 + v * p.T) / math.sqrt(free)


def idm_accel(ego: VehicleState, leader: VehicleState | None, p: IdmParams) -> float:
    """IDM acceleration of ``ego`` behind ``leader`` (free road when ``leader`` is None).

    Braking is not floored, since only the separate emergency-avoidance
    function is disabled. The result is capped at ``p.a``.
    """
    free = 1.0 - (ego.v / p.v0) ** p.delta
    if leader is None:
        return min(p.a * free, p.a)
    s = leader.rear - ego.x
    if s <= 0:
        raise OverlapError(f"follower at {ego.x} overlaps leader rear at {leader.rear}")
    s_star = desired_gap(ego.v, ego.v - leader.v, p)
    return min(p.a * (free - (s_star / s) ** 2), p.a)
