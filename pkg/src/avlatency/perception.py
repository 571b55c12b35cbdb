"""Simulated camera + detector pipeline with benign or attacked inference latency."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .state import Color, SignalPhase, VehicleState

_EPS = 1e-9


class LatencyKind(str, enum.Enum):
    INJECTED = "injected"
    SYNTHESIZED = "synthesized"


@dataclass(frozen=True)
class SensorFrame:
    capture_t: float
    ego: VehicleState
    vehicles: tuple[VehicleState, ...]
    signal: SignalPhase | None = None


@dataclass(frozen=True)
class TimedObservation:
    """Detector output for one frame.

    Contents are truthful for ``capture_t``; only their age is faulty.
    ``ego_x`` is the ego position at capture, which lets consumers recover
    the ego-relative offsets the detector actually measures.
    """

    capture_t: float
    available_t: float
    vehicles: tuple[VehicleState, ...]
    signal_color: Color | None
    ego_x: float

    @property
    def latency(self) -> float:
        return self.available_t - self.capture_t

    def age(self, t: float) -> float:
        return t - self.capture_t


@dataclass(frozen=True)
class AttackPolicy:
    """When the trigger is in view and how strong it is.

    ``intensity`` in (0, 1] scales the attacked latency band (injected
    latency) or the perturbation budget (synthesized latency).
    """

    launch_t: float = 0.0
    end_t: float | None = None
    intensity: float = 1.0

    def __post_init__(self):
        if self.launch_t < 0:
            raise ValueError("launch_t must be non-negative")
        if self.end_t is not None and self.end_t <= self.launch_t:
            raise ValueError("end_t must be after launch_t")
        if not 0.0 < self.intensity <= 1.0:
            raise ValueError("intensity must be in (0, 1]")


def attack_active(policy: AttackPolicy | None, t: float) -> bool:
    if policy is None:
        return False
    if t < policy.launch_t - _EPS:
        return False
    return policy.end_t is None or t < policy.end_t - _EPS


@dataclass(frozen=True)
class LatencyModel:
    kind: LatencyKind = LatencyKind.INJECTED
    benign_range: tuple[float, float] = (0.07, 0.10)
    attacked_range: tuple[float, float] = (3.0, 3.5)
    per_token_cost: float = 0.0
    # Decode lengths backing the synthesized kind.
    benign_tokens: int = 0
    attacked_tokens: int = 0

    def __post_init__(self):
        for name in ("benign_range", "attacked_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must satisfy 0 < lo <= hi")
        if self.attacked_range[0] <= self.benign_range[1]:
            raise ValueError("attacked latency band must lie above the benign band")
        if self.kind is LatencyKind.SYNTHESIZED and (self.per_token_cost <= 0 or self.benign_tokens <= 0):
            raise ValueError("synthesized latency needs a calibrated per-token cost and decode counts")


def sample_latency(model: LatencyModel, attacked: bool, rng: np.random.Generator, intensity: float = 1.0) -> float:
    if model.kind is LatencyKind.SYNTHESIZED:
        return model.per_token_cost * (model.attacked_tokens if attacked else model.benign_tokens)
    lo, hi = model.attacked_range if attacked else model.benign_range
    if attacked:
        lo, hi = lo * intensity, hi * intensity
    return float(rng.uniform(lo, hi))


@lru_cache(maxsize=8)
def _synthesized_counts(detector_seed: int, epsilon: float, iters: int) -> tuple[int, int, float]:
    from . import slowdown

    det = slowdown.build_detector(detector_seed)
    img = slowdown.reference_image(n=det.n)
    cost = slowdown.calibrate_latency(det, 1.0)
    res = slowdown.eos_suppression_attack(det, img, epsilon=epsilon, iters=iters)
    return res.benign_count, res.attacked_count, cost


def synthesized_latency_model(
    detector_seed: int = 0,
    epsilon: float = 0.03,
    iters: int = 500,
    benign_target: float = 0.1,
    benign_range: tuple[float, float] = (0.07, 0.10),
    attacked_range: tuple[float, float] = (3.0, 3.5),
) -> LatencyModel:
    """Latency model backed by decoding the toy detector on clean and attacked input."""
    benign, attacked, _ = _synthesized_counts(detector_seed, epsilon, iters)
    return LatencyModel(
        kind=LatencyKind.SYNTHESIZED,
        benign_range=benign_range,
        attacked_range=attacked_range,
        per_token_cost=benign_target / benign,
        benign_tokens=benign,
        attacked_tokens=attacked,
    )


@dataclass
class _InFlight:
    frame: SensorFrame
    complete_t: float


@dataclass
class InferencePipeline:
    """Non-pipelined detector: one inference in flight, frames arriving while busy are dropped."""

    in_flight: _InFlight | None = None
    outbox: list[TimedObservation] = field(default_factory=list)
    accepted: int = 0
    dropped: int = 0
    completed: int = 0

    def _retire(self, t: float) -> None:
        job = self.in_flight
        if job is not None and job.complete_t <= t + _EPS:
            f = job.frame
            self.outbox.append(
                TimedObservation(
                    capture_t=f.capture_t,
                    available_t=job.complete_t,
                    vehicles=f.vehicles,
                    signal_color=f.signal.color if f.signal is not None else None,
                    ego_x=f.ego.x,
                )
            )
            self.in_flight = None
            self.completed += 1

    def busy(self, t: float) -> bool:
        self._retire(t)
        return self.in_flight is not None

    def submit(self, frame: SensorFrame, latency: float) -> bool:
        if self.busy(frame.capture_t):
            self.dropped += 1
            return False
        self.in_flight = _InFlight(frame, frame.capture_t + latency)
        self.accepted += 1
        return True

    def poll(self, t: float) -> TimedObservation | None:
        """Deliver a completed observation exactly once, or None."""
        self._retire(t)
        if not self.outbox:
            return None
        return self.outbox.pop(0)


class Perception:
    """Camera, latency model, attack scheduler and detector pipeline for one run."""

    def __init__(
        self,
        model: LatencyModel,
        policy: AttackPolicy | None,
        rng: np.random.Generator,
        noise_std: float = 0.0,
    ):
        self.model = model
        self.policy = policy
        self.rng = rng
        self.noise_std = noise_std
        self.pipeline = InferencePipeline()
        self.latency_samples: list[float] = []
        self.latest: TimedObservation | None = None

    def capture(self, frame: SensorFrame) -> bool:
        """Offer a frame to the detector; a latency is drawn only for accepted frames."""
        if self.pipeline.busy(frame.capture_t):
            self.pipeline.dropped += 1
            return False
        attacked = attack_active(self.policy, frame.capture_t)
        intensity = self.policy.intensity if self.policy is not None else 1.0
        latency = sample_latency(self.model, attacked, self.rng, intensity)
        if self.noise_std > 0 and frame.vehicles:
            noise = self.rng.normal(0.0, self.noise_std, len(frame.vehicles))
            frame = replace(
                frame,
                vehicles=tuple(replace(v, x=v.x + float(e)) for v, e in zip(frame.vehicles, noise)),
            )
        self.latency_samples.append(latency)
        return self.pipeline.submit(frame, latency)

    def poll(self, t: float) -> TimedObservation | None:
        obs = self.pipeline.poll(t)
        if obs is not None:
            self.latest = obs
        return obs
