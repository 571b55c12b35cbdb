"""Ego controller: constant-speed prediction and a four-term rolling-horizon MPC.

The planning problem over controls ``u_0..u_{N-1}`` is

    sum_{k=1..N}  w1 (x_k - x_c)^2 + w2 (v_k - v_ff)^2 + w3 u_{k-1}^2
                + w4 (((x_k - x_c)/v_k - (xn_k - x_c)/vn)^2 - h)^2

with the ego as a forward-Euler double integrator and the leader rolled
out at constant speed. Speeds inside the time-to-collision ratios are
floored at ``ttc_speed_floor``. The w4 term is dropped at steps where the
leader is behind the conflict point.

Feasible sets:

* U = [u_min, u_max]
* Z = {0 <= v <= v_max and, with a leader, x + v^2 / (2 b_comfort) + v dt <= x_c},
  i.e. states from which comfortable braking still stops at the conflict
  point. Z is invariant under u = -b_comfort for the Euler dynamics.

State constraints are enforced inside the rollout by clamping each control
to the largest value that keeps the next state in Z, so every plan the
solver or the oracle evaluates is feasible by construction when the
initial state allows it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from .perception import TimedObservation
from .state import Color, ControlCommand, VehicleState

# Which bound produced the effective control at a rollout step.
_FREE, _CONST, _VMAX, _VZERO, _SAFE = range(5)


@dataclass(frozen=True)
class MpcConfig:
    N: int = 20
    dt: float = 0.1
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 0.1
    w4: float = 10.0
    h: float = 2.0  # units of s^2; the target sits on a squared TTC difference
    v_ff: float = 15.0
    u_min: float = -6.0
    u_max: float = 3.0
    v_max: float = 20.0
    b_comfort: float = 3.0
    safety_gap: float = 2.0
    ttc_speed_floor: float = 0.1
    max_iter: int = 100
    rtol: float = 1e-9
    # "current" anchors ego-relative detections on current odometry, "capture"
    # on the odometry logged with the frame.
    anchor: str = "current"

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if min(self.w1, self.w2, self.w3, self.w4) < 0:
            raise ValueError("cost weights must be non-negative")
        if not self.u_min < 0 < self.u_max:
            raise ValueError("need u_min < 0 < u_max")
        if not 0 < self.b_comfort <= -self.u_min:
            raise ValueError("b_comfort must be positive and within the braking limit")
        if self.safety_gap <= 0:
            raise ValueError("safety_gap must be positive")
        if self.v_max <= 0 or self.ttc_speed_floor <= 0:
            raise ValueError("v_max and ttc_speed_floor must be positive")
        if self.anchor not in ("current", "capture"):
            raise ValueError("anchor must be 'current' or 'capture'")


@dataclass
class PlanResult:
    controls: list[float]
    predicted_states: list[tuple[VehicleState, VehicleState | None]]
    cost: float
    converged: bool
    feasible: bool = True
    iterations: int = 0
    conflict_x: float | None = None


def predict_bv(obs_bv: VehicleState, capture_t: float, target_t: float) -> VehicleState:
    """Constant-speed extrapolation of an observed vehicle from capture time to ``target_t``."""
    if target_t < capture_t:
        raise ValueError("cannot extrapolate backwards in time")
    return VehicleState(obs_bv.x + obs_bv.v * (target_t - capture_t), obs_bv.v, obs_bv.length)


def signal_to_virtual_leader(perceived: Color | None, stop_bar_x: float) -> VehicleState | None:
    if perceived is Color.RED:
        return VehicleState(stop_bar_x, 0.0, 0.0)
    return None


def conflict_point(leader: VehicleState, cfg: MpcConfig) -> float:
    return leader.rear - cfg.safety_gap


class _Problem:
    """Rollout, cost and adjoint gradient for one planning instance."""

    def __init__(self, ego: VehicleState, leader: VehicleState | None, cfg: MpcConfig):
        self.cfg = cfg
        self.x0, self.v0 = ego.x, ego.v
        self.leader = leader
        if leader is not None:
            self.xc = conflict_point(leader, cfg)
            vn = leader.v
            self.xn = [leader.x + vn * cfg.dt * k for k in range(cfg.N + 1)]
            self.ttc_n = [(xn - self.xc) / max(vn, cfg.ttc_speed_floor) for xn in self.xn]
        else:
            self.xc = None

    def rollout(self, u, want_tape=False):
        cfg = self.cfg
        dt, b = cfg.dt, cfg.b_comfort
        w1, w2, w3, w4, h, vff = cfg.w1, cfg.w2, cfg.w3, cfg.w4, cfg.h, cfg.v_ff
        floor = cfg.ttc_speed_floor
        xc = self.xc
        has_leader = xc is not None
        x, v = self.x0, self.v0
        xs, vs, ue = [x], [v], []
        src, dux, duv = [], [], []
        feasible = True
        cost = 0.0
        for k in range(cfg.N):
            lb, lb_src = cfg.u_min, _CONST
            if -v / dt > lb:
                lb, lb_src = -v / dt, _VZERO
            ub, ub_src = cfg.u_max, _CONST
            vmax_b = (cfg.v_max - v) / dt
            if vmax_b < ub:
                ub, ub_src = vmax_b, _VMAX
            gsafe = 0.0
            if has_leader:
                rem = xc - (x + v * dt)
                if rem < 0.0:
                    ub, ub_src = -math.inf, _CONST
                else:
                    root = math.sqrt(dt * dt + 2.0 * rem / b)
                    safe = (b * (root - dt) - v) / dt
                    if safe < ub:
                        ub, ub_src = safe, _SAFE
                        gsafe = -1.0 / root  # d vbar / d x_next
            uk = u[k]
            if ub < lb:
                feasible = False
                ueff, s = lb, lb_src
            elif uk > ub:
                ueff, s = ub, ub_src
            elif uk < lb:
                ueff, s = lb, lb_src
            else:
                ueff, s = uk, _FREE
            if want_tape:
                src.append(s)
                if s == _SAFE:
                    dux.append(gsafe / dt)
                    duv.append((gsafe * dt - 1.0) / dt)
                elif s in (_VMAX, _VZERO):
                    dux.append(0.0)
                    duv.append(-1.0 / dt)
                else:
                    dux.append(0.0)
                    duv.append(0.0)
            x = x + v * dt
            v = v + ueff * dt
            if v < 0.0:
                v = 0.0
            xs.append(x)
            vs.append(v)
            ue.append(ueff)
            c = w2 * (v - vff) ** 2 + w3 * ueff * ueff
            if has_leader:
                dx = x - xc
                c += w1 * dx * dx
                if w4 and self.xn[k + 1] > xc:
                    dd = dx / max(v, floor) - self.ttc_n[k + 1]
                    q = dd * dd - h
                    c += w4 * q * q
            cost += c
        if want_tape:
            return cost, feasible, xs, vs, ue, (src, dux, duv)
        return cost, feasible, xs, vs, ue

    def value_and_grad(self, u):
        cfg = self.cfg
        dt = cfg.dt
        w1, w2, w3, w4, h, vff = cfg.w1, cfg.w2, cfg.w3, cfg.w4, cfg.h, cfg.v_ff
        floor = cfg.ttc_speed_floor
        cost, feasible, xs, vs, ue, (src, dux, duv) = self.rollout(u, want_tape=True)
        xc = self.xc
        grad = [0.0] * cfg.N
        lx = lv = 0.0  # adjoints of the state after the current step
        for k in range(cfg.N - 1, -1, -1):
            x, v, ueff = xs[k + 1], vs[k + 1], ue[k]
            gx = 0.0
            gv = 2.0 * w2 * (v - vff)
            if xc is not None:
                dx = x - xc
                gx += 2.0 * w1 * dx
                if w4 and self.xn[k + 1] > xc:
                    vf = v if v > floor else floor
                    dd = dx / vf - self.ttc_n[k + 1]
                    common = 4.0 * w4 * (dd * dd - h) * dd
                    gx += common / vf
                    if v > floor:
                        gv -= common * dx / (vf * vf)
            lx += gx
            lv += gv
            gu = 2.0 * w3 * ueff + lv * dt
            s = src[k]
            if s == _FREE:
                grad[k] = gu
            lx, lv = lx + gu * dux[k], lx * dt + lv + gu * duv[k]
        return cost, feasible, grad, ue


def _clip(u, lo, hi):
    return [lo if a < lo else hi if a > hi else a for a in u]


def _result(prob: _Problem, u, converged: bool, iterations: int) -> PlanResult:
    cost, feasible, xs, vs, ue = prob.rollout(u)
    ego_len = 0.0
    states = []
    for k in range(len(xs)):
        ego = VehicleState(xs[k], vs[k], ego_len)
        bv = None
        if prob.leader is not None:
            L = prob.leader
            bv = VehicleState(prob.xn[k], L.v, L.length)
        states.append((ego, bv))
    return PlanResult(
        controls=list(ue),
        predicted_states=states,
        cost=cost,
        converged=converged and math.isfinite(cost),
        feasible=feasible,
        iterations=iterations,
        conflict_x=prob.xc,
    )


def mpc_plan(
    ego: VehicleState,
    predicted_bv: VehicleState | None,
    cfg: MpcConfig,
    warm_start: list[float] | None = None,
) -> PlanResult:
    """Solve the finite-horizon problem by projected gradient descent with Armijo backtracking.

    The start point is the cheapest of the warm start and three constant
    control sequences (coast, full throttle, full brake).
    """
    prob = _Problem(ego, predicted_bv, cfg)
    lo, hi = cfg.u_min, cfg.u_max
    starts = [[0.0] * cfg.N, [hi] * cfg.N, [-cfg.b_comfort] * cfg.N]
    if warm_start is not None and len(warm_start) == cfg.N:
        starts.insert(0, _clip(warm_start, lo, hi))
    best = None
    for s in starts:
        c, feas, _, _, ue = prob.rollout(s)
        if best is None or c < best[0]:
            best = (c, ue)
    u = list(best[1])

    f, feasible, g, ue = prob.value_and_grad(u)
    u = list(ue)
    span = hi - lo
    gmax = max(abs(a) for a in g)
    alpha = span / gmax if gmax > 0 else 1.0
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        gmax = max(abs(a) for a in g)
        if gmax == 0.0:
            converged = True
            break
        alpha = min(alpha, span / gmax)
        accepted = False
        while alpha * gmax > 1e-10 * span:
            trial = _clip([a - alpha * b for a, b in zip(u, g)], lo, hi)
            step = [a - b for a, b in zip(trial, u)]
            if max(abs(a) for a in step) <= 1e-12:
                break
            f_new = prob.rollout(trial)[0]
            decrease = sum(a * b for a, b in zip(g, step))
            if f_new <= f + 1e-4 * decrease:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            converged = True
            break
        f_old = f
        f, feasible, g, ue = prob.value_and_grad(trial)
        u = list(ue)
        alpha *= 2.0
        if f_old - f <= cfg.rtol * max(1.0, abs(f_old)):
            converged = True
            break
    return _result(prob, u, converged, it)


def brute_force_plan(
    ego: VehicleState,
    predicted_bv: VehicleState | None,
    cfg: MpcConfig,
    grid: list[float],
) -> PlanResult:
    """Exhaustive search over gridded control sequences with the MPC's dynamics and cost."""
    if len(grid) ** cfg.N > 1_000_000:
        raise ValueError(f"{len(grid)}^{cfg.N} sequences exceed the enumeration budget")
    prob = _Problem(ego, predicted_bv, cfg)
    best_cost, best_u, best_feasible = math.inf, None, False
    for seq in itertools.product(grid, repeat=cfg.N):
        c, feas, _, _, _ = prob.rollout(seq)
        # Feasible plans dominate; cost breaks ties.
        if (feas, -c) > (best_feasible, -best_cost):
            best_cost, best_u, best_feasible = c, list(seq), feas
    return _result(prob, best_u, True, 0)


def plan_cost(ego: VehicleState, predicted_bv: VehicleState | None, cfg: MpcConfig, controls) -> float:
    return _Problem(ego, predicted_bv, cfg).rollout(list(controls))[0]


def plan_cost_gradient(ego: VehicleState, predicted_bv: VehicleState | None, cfg: MpcConfig, controls):
    """Cost and its gradient with respect to the control sequence."""
    c, _, g, _ = _Problem(ego, predicted_bv, cfg).value_and_grad(list(controls))
    return c, g


@dataclass
class TickDecision:
    command: ControlCommand
    plan: PlanResult | None
    leader: str | None  # "bv", "signal" or None
    perceived_bv: VehicleState | None
    fallback: bool = False


@dataclass
class Controller:
    """Per-run controller holding the warm-start cache."""

    cfg: MpcConfig
    stop_bar_x: float | None = None
    _warm: list[float] | None = field(default=None, repr=False)

    def perceive(self, obs: TimedObservation, ego: VehicleState, t: float) -> list[VehicleState]:
        """Observed vehicles placed in the world and predicted forward to ``t``."""
        anchor = ego.x if self.cfg.anchor == "current" else obs.ego_x
        out = []
        for bv in obs.vehicles:
            placed = VehicleState(anchor + (bv.x - obs.ego_x), bv.v, bv.length)
            out.append(predict_bv(placed, obs.capture_t, t))
        return out

    def control_tick(self, obs: TimedObservation | None, ego: VehicleState, t: float) -> TickDecision:
        if obs is None:
            return TickDecision(ControlCommand(0.0), None, None, None)
        bvs = [b for b in self.perceive(obs, ego, t) if b.x > ego.x]
        nearest_bv = min(bvs, key=lambda b: b.rear, default=None)
        leader, kind = nearest_bv, "bv" if nearest_bv is not None else None
        if self.stop_bar_x is not None:
            virtual = signal_to_virtual_leader(obs.signal_color, self.stop_bar_x)
            if virtual is not None and virtual.x > ego.x and (leader is None or virtual.rear < leader.rear):
                leader, kind = virtual, "signal"
        warm = None
        if self._warm is not None:
            warm = self._warm[1:] + self._warm[-1:]
        plan = mpc_plan(ego, leader, self.cfg, warm)
        # An infeasible plan already brakes as hard as U allows; only solver failures fall back.
        if not plan.converged:
            self._warm = None
            return TickDecision(ControlCommand(-self.cfg.b_comfort), plan, kind, nearest_bv, fallback=True)
        self._warm = plan.controls
        return TickDecision(ControlCommand(plan.controls[0]), plan, kind, nearest_bv)


def control_tick(
    latest_obs: TimedObservation | None,
    ego_truth: VehicleState,
    t: float,
    cfg: MpcConfig,
    stop_bar_x: float | None = None,
) -> ControlCommand:
    """Stateless single-tick control (no warm start)."""
    return Controller(cfg, stop_bar_x).control_tick(latest_obs, ego_truth, t).command
