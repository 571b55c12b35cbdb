"""Tick loop wiring perception, prediction, control and background traffic."""

from __future__ import annotations

import numpy as np

from . import metrics
from .config import SimConfig
from .controller import Controller
from .idm import idm_accel
from .perception import Perception, SensorFrame, attack_active
from .runlog import RunLog
from .state import ControlCommand, VehicleState, WorldState, signal_phase_at, step_vehicle


def _r(v: float | None, nd: int = 9) -> float | None:
    return None if v is None else round(float(v), nd)


def initial_world(cfg: SimConfig) -> WorldState:
    sc = cfg.scenario
    ego = VehicleState(sc.ego_x, sc.ego_v, sc.ego_length)
    bg = [] if sc.bv_mode == "none" else [VehicleState(sc.bv_x, sc.bv_v, sc.bv_length)]
    sig = signal_phase_at(0.0, sc.signal_offset, sc.stop_bar_x) if sc.stop_bar_x is not None else None
    return WorldState(0.0, ego, bg, sig)


def run_scenario(cfg: SimConfig, seed: int | None = None) -> RunLog:
    """Simulate one run and return its annotated log.

    Tick order: signal, camera capture (if the detector is idle), perception
    poll, ego control, background IDM, then the state update. A collision
    observed at the start of a tick is recorded and, by default, ends the run.
    Solver failures only flag the tick; the controller brakes comfortably.
    """
    seed = cfg.sim.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    sc = cfg.scenario
    dt = cfg.sim.dt
    n_ticks = int(round(cfg.sim.duration / dt))
    policy = cfg.attack_policy()
    perception = Perception(
        cfg.latency_model(), policy, rng, cfg.perception.noise_std if cfg.perception.noise_enabled else 0.0
    )
    controller = Controller(cfg.mpc_config(), sc.stop_bar_x)
    idm_p = cfg.idm_params()
    world = initial_world(cfg)
    log = RunLog(
        fingerprint=cfg.fingerprint(),
        seed=seed,
        dt=dt,
        ego_length=sc.ego_length,
        bv_length=sc.bv_length if world.background else None,
        stop_bar_x=sc.stop_bar_x,
    )

    for k in range(n_ticks):
        t = round(k * dt, 9)
        world.t = t
        ego = world.ego
        bv = world.background[0] if world.background else None
        if sc.stop_bar_x is not None:
            world.signal = signal_phase_at(t, sc.signal_offset, sc.stop_bar_x)

        perception.capture(SensorFrame(t, ego, tuple(world.background), world.signal))
        perception.poll(t)
        obs = perception.latest
        decision = controller.control_tick(obs, ego, t)

        bv_cmds = []
        for j, v in enumerate(world.background):
            if sc.bv_mode == "idm":
                ahead = [w for w in world.background[j + 1:] if w.x > v.x]
                leader = min(ahead, key=lambda w: w.x, default=None)
                bv_cmds.append(ControlCommand(idm_accel(v, leader, idm_p)))
            else:
                bv_cmds.append(ControlCommand(0.0))

        plan = decision.plan
        pbv = decision.perceived_bv
        log.records.append(
            {
                "t": t,
                "ego.x": _r(ego.x),
                "ego.v": _r(ego.v),
                "ego.u": _r(decision.command.u),
                "bv.x": _r(bv.x) if bv else None,
                "bv.v": _r(bv.v) if bv else None,
                "signal.color": world.signal.color.value if world.signal else None,
                "obs.capture_t": obs.capture_t if obs else None,
                "obs.age": _r(t - obs.capture_t) if obs else None,
                "inference_busy": perception.pipeline.busy(t),
                "attack_active": attack_active(policy, t),
                "events": [],
                "plan.v1": _r(plan.predicted_states[1][0].v) if plan else None,
                "plan.cost": float(f"{plan.cost:.9g}") if plan else None,
                "plan.converged": plan.converged if plan else None,
                "plan.feasible": plan.feasible if plan else None,
                "plan.leader": decision.leader,
                "perceived_gap": _r(pbv.rear - ego.x) if pbv else None,
                "fallback": decision.fallback,
            }
        )
        if bv is not None and bv.rear - ego.x <= 0.0 and cfg.sim.stop_on_collision:
            break

        world.ego = step_vehicle(ego, decision.command, dt)
        world.background = [step_vehicle(v, c, dt) for v, c in zip(world.background, bv_cmds)]

    log.latency_samples = [round(s, 12) for s in perception.latency_samples]
    log.completed_inferences = perception.pipeline.completed
    log.dropped_frames = perception.pipeline.dropped
    metrics.analyze(log, cfg.metrics.delayed_start_threshold)
    return log
