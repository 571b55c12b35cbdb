"""Closed-loop simulation of perception latency attacks on an MPC-driven vehicle."""

from .config import ConfigError, SimConfig, load_fixture, parse_config
from .controller import MpcConfig, PlanResult, brute_force_plan, control_tick, mpc_plan
from .idm import IdmParams, idm_accel
from .metrics import BatchSummary, aggregate_batch, latency_histogram
from .runlog import RunLog
from .sim import run_scenario
from .slowdown import build_detector, decode, eos_suppression_attack
from .state import Color, ControlCommand, VehicleState

__version__ = "0.1.0"

__all__ = [
    "BatchSummary",
    "Color",
    "ConfigError",
    "ControlCommand",
    "IdmParams",
    "MpcConfig",
    "PlanResult",
    "RunLog",
    "SimConfig",
    "VehicleState",
    "aggregate_batch",
    "brute_force_plan",
    "build_detector",
    "control_tick",
    "decode",
    "eos_suppression_attack",
    "idm_accel",
    "latency_histogram",
    "load_fixture",
    "mpc_plan",
    "parse_config",
    "run_scenario",
]
