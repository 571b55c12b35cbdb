import math

import pytest
from hypothesis import given, strategies as st

from avlatency.state import (
    CYCLE_TIME,
    GREEN_TIME,
    Color,
    ControlCommand,
    VehicleState,
    signal_phase_at,
    step_vehicle,
)


@pytest.mark.parametrize(
    "x, v, u, expected",
    [
        (0.0, 10.0, 0.0, (1.0, 10.0)),
        (0.0, 10.0, 2.0, (1.0, 10.2)),
        (0.0, 0.1, -4.0, (0.01, 0.0)),
    ],
)
def test_step_vehicle_examples(x, v, u, expected):
    s = step_vehicle(VehicleState(x, v), ControlCommand(u), 0.1)
    assert s.x == pytest.approx(expected[0], abs=1e-12)
    assert s.v == pytest.approx(expected[1], abs=1e-12)
    assert s.length == 5.0


def test_step_vehicle_rejects_bad_input():
    with pytest.raises(ValueError):
        step_vehicle(VehicleState(0.0, 1.0), ControlCommand(0.0), 0.0)
    with pytest.raises(ValueError):
        VehicleState(float("nan"), 1.0)
    with pytest.raises(ValueError):
        VehicleState(0.0, -1.0)
    with pytest.raises(ValueError):
        step_vehicle(VehicleState(0.0, 1.0), ControlCommand(float("inf")), 0.1)


@pytest.mark.parametrize("t, color", [(0.0, Color.GREEN), (20.0, Color.RED), (35.0, Color.GREEN), (19.9, Color.GREEN)])
def test_signal_phase_examples(t, color):
    assert signal_phase_at(t).color is color


@given(st.floats(0, 1e4), st.floats(0, 100))
def test_signal_duty_cycle(t, offset):
    ph = signal_phase_at(t, offset)
    assert 0 <= ph.time_into_cycle < CYCLE_TIME
    assert (ph.color is Color.GREEN) == (ph.time_into_cycle < GREEN_TIME)


@given(st.floats(0, 50), st.floats(0, 30), st.floats(-6, 3))
def test_step_keeps_speed_nonnegative_and_position_monotone(x, v, u):
    s = step_vehicle(VehicleState(x, v), ControlCommand(u), 0.1)
    assert s.v >= 0
    assert s.x >= x
    assert math.isclose(s.x, x + v * 0.1)
