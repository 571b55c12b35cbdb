"""Outcome detection, latency histograms, batch aggregation and series export."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .runlog import RunLog

STOPPED_SPEED = 0.1
STOP_ZONE = 10.0


def _gap(rec: dict, bv_length: float) -> float:
    return rec["bv.x"] - bv_length - rec["ego.x"]


def detect_collision(log: RunLog) -> list[dict]:
    """First tick at which the ego front reaches the rear of a leader it has not passed."""
    if not log.has_bv:
        return []
    for rec in log.records:
        if rec["bv.x"] is None:
            continue
        if _gap(rec, log.bv_length) <= 0.0 and rec["bv.x"] >= rec["ego.x"] - log.ego_length:
            return [{"type": "collision", "t": rec["t"]}]
    return []


def detect_red_light_run(log: RunLog, stop_bar_x: float | None = None) -> list[dict]:
    """Stop-bar crossings that happen during a tick whose actual signal is red."""
    bar = log.stop_bar_x if stop_bar_x is None else stop_bar_x
    if bar is None:
        return []
    events = []
    recs = log.records
    for prev, cur in zip(recs, recs[1:]):
        if prev["ego.x"] < bar <= cur["ego.x"] and prev["signal.color"] == "red":
            events.append({"type": "red_light_run", "t": cur["t"]})
    return events


def detect_delayed_start(log: RunLog, stop_bar_x: float | None = None, threshold: float = 2.0) -> list[dict]:
    """Ego still stopped near the bar more than ``threshold`` seconds into a green phase.

    At most one event per green phase.
    """
    bar = log.stop_bar_x if stop_bar_x is None else stop_bar_x
    if bar is None or math.isinf(threshold):
        return []
    events = []
    onset = None
    fired = False
    prev_color = None
    for rec in log.records:
        color = rec["signal.color"]
        if color == "green" and prev_color != "green":
            onset, fired = rec["t"], False
        prev_color = color
        if color != "green" or fired:
            continue
        near = bar - STOP_ZONE <= rec["ego.x"] <= bar
        if near and rec["ego.v"] < STOPPED_SPEED and rec["t"] - onset > threshold + 1e-9:
            events.append({"type": "delayed_start", "t": rec["t"]})
            fired = True
    return events


def analyze(log: RunLog, delayed_start_threshold: float = 2.0) -> list[dict]:
    """All events of a log, sorted by time, also written into the per-tick records."""
    events = detect_collision(log) + detect_red_light_run(log) + detect_delayed_start(
        log, threshold=delayed_start_threshold
    )
    events.sort(key=lambda e: (e["t"], e["type"]))
    by_t: dict[float, list[str]] = {}
    for e in events:
        by_t.setdefault(e["t"], []).append(e["type"])
    for rec in log.records:
        rec["events"] = by_t.get(rec["t"], [])
    log.events = events
    return events


def min_gap(log: RunLog) -> float | None:
    if not log.has_bv:
        return None
    gaps = [_gap(r, log.bv_length) for r in log.records if r["bv.x"] is not None]
    return min(gaps) if gaps else None


def max_observation_age(log: RunLog) -> float:
    ages = [r["obs.age"] for r in log.records if r["obs.age"] is not None]
    return max(ages) if ages else 0.0


def latency_histogram(samples: list[float], bin_width: float) -> list[tuple[float, float, int]]:
    """Counts over contiguous half-open bins [k w, (k+1) w) spanning the samples."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    if not samples:
        return []
    # Rounding keeps values such as 0.15 / 0.05 from slipping into the bin below.
    idx = [math.floor(round(s / bin_width, 9)) for s in samples]
    counts: dict[int, int] = {}
    for k in idx:
        counts[k] = counts.get(k, 0) + 1
    lo, hi = min(counts), max(counts)
    return [
        (round(k * bin_width, 12), round((k + 1) * bin_width, 12), counts.get(k, 0))
        for k in range(lo, hi + 1)
    ]


SERIES_COLUMNS = {
    "time_space": ("t", "ego_x", "bv_x", "signal_color"),
    "speed_profile": ("t", "ego_v", "planned_v"),
    "gap": ("t", "true_gap", "perceived_gap"),
}


def series_rows(log: RunLog, kind: str) -> list[tuple]:
    if kind == "time_space":
        return [(r["t"], r["ego.x"], r["bv.x"], r["signal.color"]) for r in log.records]
    if kind == "speed_profile":
        return [(r["t"], r["ego.v"], r["plan.v1"]) for r in log.records]
    if kind == "gap":
        return [
            (r["t"], _gap(r, log.bv_length) if r["bv.x"] is not None else None, r["perceived_gap"])
            for r in log.records
        ]
    raise ValueError(f"unknown series kind {kind!r}")


def export_series(log: RunLog, kind: str, path: str | Path) -> Path:
    rows = series_rows(log, kind)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS[kind])
        for row in rows:
            w.writerow(["" if v is None else v for v in row])
    return path


@dataclass
class RunOutcome:
    seed: int
    ticks: int
    collided: bool
    collision_t: float | None
    red_light_run: bool
    delayed_start: bool
    min_gap: float | None
    completed_inferences: int
    dropped_frames: int
    max_obs_age: float
    fallback_ticks: int


def run_outcome(log: RunLog) -> RunOutcome:
    kinds = {e["type"]: e["t"] for e in reversed(log.events)}
    return RunOutcome(
        seed=log.seed,
        ticks=len(log.records),
        collided="collision" in kinds,
        collision_t=kinds.get("collision"),
        red_light_run="red_light_run" in kinds,
        delayed_start="delayed_start" in kinds,
        min_gap=min_gap(log),
        completed_inferences=log.completed_inferences,
        dropped_frames=log.dropped_frames,
        max_obs_age=max_observation_age(log),
        fallback_ticks=sum(1 for r in log.records if r.get("fallback")),
    )


@dataclass
class BatchSummary:
    runs: int
    collision_rate: float
    red_light_runs: int
    delayed_starts: int
    latency_histogram: list[tuple[float, float, int]]
    latency_samples: int
    outcomes: list[RunOutcome] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["latency_histogram"] = [{"lo": lo, "hi": hi, "count": c} for lo, hi, c in self.latency_histogram]
        return d


def aggregate_batch(logs: list[RunLog], bin_width: float = 0.05) -> BatchSummary:
    if not logs:
        raise ValueError("need at least one run log")
    outcomes = [run_outcome(log) for log in logs]
    samples = [s for log in logs for s in log.latency_samples]
    return BatchSummary(
        runs=len(logs),
        collision_rate=sum(o.collided for o in outcomes) / len(outcomes),
        red_light_runs=sum(sum(e["type"] == "red_light_run" for e in log.events) for log in logs),
        delayed_starts=sum(sum(e["type"] == "delayed_start" for e in log.events) for log in logs),
        latency_histogram=latency_histogram(samples, bin_width),
        latency_samples=len(samples),
        outcomes=outcomes,
    )
