"""Scenario configuration: TOML files validated into a frozen ``SimConfig``."""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import Literal, Optional

import tomli_w
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .controller import MpcConfig
from .idm import IdmParams
from .perception import AttackPolicy, LatencyKind, LatencyModel, synthesized_latency_model

EPSILON_CONVENTION = 0.03
FIXTURES = ("car_following_benign", "car_following_attacked", "signal_benign", "signal_attacked")


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SimSection(_Section):
    dt: float = 0.1
    duration: float = 40.0
    seed: int = 0
    stop_on_collision: bool = True

    @model_validator(mode="after")
    def _check(self):
        if self.dt <= 0 or self.duration <= 0:
            raise ValueError("dt and duration must be positive")
        return self


class ScenarioSection(_Section):
    kind: Literal["car_following", "signal_response"] = "car_following"
    road_v_ff: float = 15.0
    ego_x: float = 0.0
    ego_v: float = 10.0
    ego_length: float = 5.0
    bv_mode: Literal["stationary", "idm", "none"] = "stationary"
    bv_x: float = 120.0
    bv_v: float = 0.0
    bv_length: float = 5.0
    stop_bar_x: Optional[float] = None
    signal_offset: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        if self.ego_v < 0 or self.bv_v < 0:
            raise ValueError("initial speeds must be non-negative")
        if self.ego_length <= 0 or self.bv_length <= 0:
            raise ValueError("vehicle lengths must be positive")
        if self.kind == "signal_response" and self.stop_bar_x is None:
            raise ValueError("signal_response scenarios need stop_bar_x")
        if self.stop_bar_x is not None and self.ego_x >= self.stop_bar_x:
            raise ValueError("ego must start behind the stop bar")
        if self.bv_mode == "stationary" and self.bv_v != 0:
            raise ValueError("a stationary background vehicle must have bv_v = 0")
        return self


class IdmSection(_Section):
    v0: Optional[float] = None  # defaults to the road free-flow speed
    T: float = 1.0
    a: float = 2.6
    b: float = 4.5
    delta: float = 4.0
    s0: float = 2.5


class MpcSection(_Section):
    N: int = 20
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 0.1
    w4: float = 10.0
    h: float = 2.0
    v_ff: Optional[float] = None  # defaults to the road free-flow speed
    u_min: float = -6.0
    u_max: float = 3.0
    v_max: float = 20.0
    b_comfort: float = 3.0
    safety_gap: float = 2.0
    ttc_speed_floor: float = 0.1
    max_iter: int = 100
    anchor: Literal["current", "capture"] = "current"


class PerceptionSection(_Section):
    latency: Literal["injected", "synthesized"] = "injected"
    benign_range: tuple[float, float] = (0.07, 0.10)
    attacked_range: tuple[float, float] = (3.0, 3.5)
    noise_enabled: bool = False
    noise_std: float = 0.3
    detector_seed: int = 0
    benign_target: float = 0.1

    @model_validator(mode="after")
    def _check(self):
        LatencyModel(benign_range=self.benign_range, attacked_range=self.attacked_range)
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        return self


class AttackSection(_Section):
    launch_t: float = 0.0
    end_t: Optional[float] = None
    intensity: float = 1.0
    epsilon: float = EPSILON_CONVENTION
    iters: int = 500

    @model_validator(mode="after")
    def _check(self):
        AttackPolicy(self.launch_t, self.end_t, self.intensity)
        if self.epsilon < 0 or self.iters < 1:
            raise ValueError("epsilon must be >= 0 and iters >= 1")
        return self


class MetricsSection(_Section):
    delayed_start_threshold: float = 2.0
    histogram_bin: float = 0.05


class SimConfig(_Section):
    sim: SimSection = SimSection()
    scenario: ScenarioSection = ScenarioSection()
    idm: IdmSection = IdmSection()
    mpc: MpcSection = MpcSection()
    perception: PerceptionSection = PerceptionSection()
    attack: Optional[AttackSection] = None
    metrics: MetricsSection = MetricsSection()

    @model_validator(mode="after")
    def _geometry(self):
        sc = self.scenario
        if sc.bv_mode != "none":
            gap = sc.bv_x - sc.bv_length - sc.ego_x
            if gap <= self.mpc.safety_gap:
                raise ValueError(
                    f"ego must start behind the background vehicle with gap > safety_gap "
                    f"(gap {gap:g} m, safety_gap {self.mpc.safety_gap:g} m)"
                )
        return self

    # Resolved runtime objects.
    def mpc_config(self) -> MpcConfig:
        m = self.mpc.model_dump()
        m["v_ff"] = self.scenario.road_v_ff if m["v_ff"] is None else m["v_ff"]
        return MpcConfig(dt=self.sim.dt, **m)

    def idm_params(self) -> IdmParams:
        p = self.idm.model_dump()
        p["v0"] = self.scenario.road_v_ff if p["v0"] is None else p["v0"]
        return IdmParams(**p)

    def attack_policy(self) -> AttackPolicy | None:
        a = self.attack
        if a is None:
            return None
        return AttackPolicy(a.launch_t, a.end_t, a.intensity)

    def latency_model(self) -> LatencyModel:
        p = self.perception
        if p.latency == "injected":
            return LatencyModel(LatencyKind.INJECTED, p.benign_range, p.attacked_range)
        eps = EPSILON_CONVENTION
        iters = 500
        if self.attack is not None:
            eps, iters = self.attack.epsilon * self.attack.intensity, self.attack.iters
        return synthesized_latency_model(
            p.detector_seed, eps, iters, p.benign_target, p.benign_range, p.attacked_range
        )

    def warnings(self) -> list[str]:
        out = []
        if self.attack is not None and self.attack.epsilon > EPSILON_CONVENTION:
            out.append(
                f"attack.epsilon = {self.attack.epsilon:g} exceeds the unnoticeable-perturbation "
                f"convention of {EPSILON_CONVENTION:g}"
            )
        if not 30.0 <= self.sim.duration <= 40.0:
            out.append(f"sim.duration = {self.sim.duration:g} s is outside the usual 30-40 s run length")
        return out

    def fingerprint(self) -> str:
        """Hash of the resolved config, excluding the seed."""
        data = self.model_dump(mode="json")
        data["sim"].pop("seed")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _format_error(err: ValidationError, source: str) -> str:
    lines = [f"{source}: invalid configuration"]
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"  {loc}: {e['msg']}")
    return "\n".join(lines)


def config_from_dict(data: dict, source: str = "<dict>") -> SimConfig:
    try:
        return SimConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_error(err, source)) from None


def parse_config(path: str | Path) -> SimConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such config file")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from None
    return config_from_dict(data, str(path))


def echo_config(cfg: SimConfig) -> str:
    """Fully resolved config as TOML, preceded by comment lines for any warnings."""
    data = cfg.model_dump(mode="json", exclude_none=True)
    head = "".join(f"# WARNING: {w}\n" for w in cfg.warnings())
    return head + tomli_w.dumps(data)


def fixture_path(name: str) -> Path:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
    return Path(__file__).parent / "configs" / f"{name}.toml"


def load_fixture(name: str) -> SimConfig:
    return parse_config(fixture_path(name))
