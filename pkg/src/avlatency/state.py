"""World-state primitives: vehicle kinematics and the fixed-time signal."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

GREEN_TIME = 20.0
RED_TIME = 15.0
CYCLE_TIME = GREEN_TIME + RED_TIME


class Color(str, enum.Enum):
    GREEN = "green"
    RED = "red"


@dataclass(frozen=True)
class VehicleState:
    """Longitudinal state of one vehicle.

    ``x`` is the front-bumper position along the lane, so the rear bumper
    sits at ``x - length``. A zero length is allowed for virtual obstacles
    such as a stop bar.
    """

    x: float
    v: float
    length: float = 5.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.v) and math.isfinite(self.length)):
            raise ValueError(f"non-finite vehicle state {self!r}")
        if self.v < 0.0:
            raise ValueError(f"negative speed {self.v}")
        if self.length < 0.0:
            raise ValueError(f"negative length {self.length}")

    @property
    def rear(self) -> float:
        return self.x - self.length


@dataclass(frozen=True)
class ControlCommand:
    u: float


@dataclass(frozen=True)
class SignalPhase:
    color: Color
    stop_bar_x: float
    time_into_cycle: float


@dataclass
class WorldState:
    t: float
    ego: VehicleState
    # Index 0 is the lead vehicle n. Further slots are unused.
    background: list[VehicleState] = field(default_factory=list)
    signal: SignalPhase | None = None


def step_vehicle(s: VehicleState, cmd: ControlCommand, dt: float) -> VehicleState:
    """Forward-Euler double integrator; position advances with the pre-update speed."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not math.isfinite(cmd.u):
        raise ValueError(f"non-finite command {cmd.u}")
    return replace(s, x=s.x + s.v * dt, v=max(0.0, s.v + cmd.u * dt))


def signal_phase_at(t: float, offset: float = 0.0, stop_bar_x: float = 0.0) -> SignalPhase:
    if t < 0:
        raise ValueError("t must be non-negative")
    # Rounded so tick times like 200 * 0.1 land on the phase boundary.
    tic = round((t + offset) % CYCLE_TIME, 9) % CYCLE_TIME
    color = Color.GREEN if tic < GREEN_TIME else Color.RED
    return SignalPhase(color=color, stop_bar_x=stop_bar_x, time_into_cycle=tic)
