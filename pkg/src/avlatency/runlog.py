"""Per-tick run log and its line-delimited JSON serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

# Stable per-tick schema. Extra diagnostic fields follow these.
TICK_FIELDS = (
    "t",
    "ego.x",
    "ego.v",
    "ego.u",
    "bv.x",
    "bv.v",
    "signal.color",
    "obs.capture_t",
    "obs.age",
    "inference_busy",
    "attack_active",
    "events",
)
EXTRA_FIELDS = ("plan.v1", "plan.cost", "plan.converged", "plan.feasible", "plan.leader", "perceived_gap", "fallback")


@dataclass
class RunLog:
    fingerprint: str
    seed: int
    dt: float
    ego_length: float
    bv_length: float | None
    stop_bar_x: float | None
    records: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    latency_samples: list[float] = field(default_factory=list)
    completed_inferences: int = 0
    dropped_frames: int = 0

    @property
    def has_bv(self) -> bool:
        return self.bv_length is not None

    def header(self) -> dict:
        return {
            "header": True,
            "fingerprint": self.fingerprint,
            "seed": self.seed,
            "dt": self.dt,
            "ego_length": self.ego_length,
            "bv_length": self.bv_length,
            "stop_bar_x": self.stop_bar_x,
            "latency_samples": self.latency_samples,
            "completed_inferences": self.completed_inferences,
            "dropped_frames": self.dropped_frames,
            "events": self.events,
        }

    def dumps(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines.extend(json.dumps(r, sort_keys=True) for r in self.records)
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "RunLog":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not rows or not rows[0].get("header"):
            raise ValueError("run log has no header line")
        h = rows[0]
        return cls(
            fingerprint=h["fingerprint"],
            seed=h["seed"],
            dt=h["dt"],
            ego_length=h["ego_length"],
            bv_length=h["bv_length"],
            stop_bar_x=h["stop_bar_x"],
            records=rows[1:],
            events=h["events"],
            latency_samples=h["latency_samples"],
            completed_inferences=h["completed_inferences"],
            dropped_frames=h["dropped_frames"],
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunLog":
        return cls.loads(Path(path).read_text())

    def column(self, key: str) -> list:
        return [r[key] for r in self.records]
