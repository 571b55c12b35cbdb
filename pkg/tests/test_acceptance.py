"""Acceptance criteria, one check per criterion.

Each check prints a single PASS/FAIL line. Run under pytest (the lines are
repeated in the terminal summary) or directly with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import json
import sys
import tempfile
from functools import lru_cache
from pathlib import Path

import numpy as np

from avlatency import cli, metrics
from avlatency.config import config_from_dict, load_fixture
from avlatency.controller import MpcConfig, brute_force_plan, mpc_plan
from avlatency.idm import IdmParams, equilibrium_gap, idm_accel
from avlatency.runlog import RunLog
from avlatency.sim import run_scenario
from avlatency.slowdown import (
    build_detector,
    eos_logprob_loss,
    eos_logprob_loss_and_grad,
    eos_suppression_attack,
    reference_image,
)
from avlatency.state import VehicleState

RESULTS: list[str] = []
_TMP = tempfile.TemporaryDirectory(prefix="avlatency-acceptance-")
TMP = Path(_TMP.name)


def report(num: int, title: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num} {title}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


@lru_cache(maxsize=None)
def batch(name: str, tag: str = "a", runs: int = 40) -> Path:
    """Run a 40-run batch through the CLI and return its directory."""
    out = TMP / tag
    code = cli.main(["batch", "--config", name, "--runs", str(runs), "--base-seed", "0", "--out", str(out)])
    assert code == 0, f"batch {name} exited with {code}"
    return out / f"{load_fixture(name).fingerprint()}-b0-n{runs}"


def batch_summary(d: Path) -> dict:
    return json.loads((d / "summary.json").read_text())


def batch_logs(d: Path) -> list[RunLog]:
    return [RunLog.load(p / "log.jsonl") for p in sorted(d.glob("run-s*"))]


def check_1_latency_bands() -> bool:
    benign = [s for log in batch_logs(batch("car_following_benign")) for s in log.latency_samples]
    attacked = [
        s for log in batch_logs(batch("car_following_attacked")) for s in log.latency_samples if s > 1.0
    ]
    ok = (
        len(benign) >= 400
        and all(0.05 <= s <= 0.15 for s in benign)
        and 0.08 <= float(np.mean(benign)) <= 0.12
        and len(attacked) >= 40
        and all(3.0 <= s <= 3.5 for s in attacked)
    )
    return report(
        1,
        "latency bands",
        ok,
        f"benign n={len(benign)} range [{min(benign):.3f}, {max(benign):.3f}] mean {np.mean(benign):.4f}; "
        f"attacked n={len(attacked)} range [{min(attacked):.3f}, {max(attacked):.3f}]",
    )


def check_2_car_following() -> bool:
    att = batch_summary(batch("car_following_attacked"))
    ben = batch_summary(batch("car_following_benign"))
    gaps = [o["min_gap"] for o in ben["outcomes"]]
    ok = att["runs"] == 40 and att["collision_rate"] == 1.0 and ben["collision_rate"] == 0.0 and min(gaps) >= 1.8
    return report(
        2,
        "car-following batches",
        ok,
        f"attacked collision_rate {att['collision_rate']} over {att['runs']} runs; "
        f"benign collision_rate {ben['collision_rate']}, min gap {min(gaps):.3f} m",
    )


def check_3_signal_response() -> bool:
    ben = run_scenario(load_fixture("signal_benign"))
    att = run_scenario(load_fixture("signal_attacked"))
    bar = ben.stop_bar_x
    red = [r for r in ben.records if r["signal.color"] == "red"]
    stopped_in_red = [r for r in red if r["ego.v"] < 0.1 and bar - 10.0 <= r["ego.x"] <= bar]
    # Once it has come to rest, the ego stays at the bar for the rest of the red phase.
    first_stop = stopped_in_red[0]["t"] if stopped_in_red else None
    held = first_stop is not None and all(
        r["ego.v"] < 0.1 for r in red if first_stop <= r["t"] < 35.0
    )
    green_onset = 35.0
    moving = [r["t"] for r in ben.records if r["t"] >= green_onset and r["ego.v"] >= 0.1]
    restart = moving[0] - green_onset if moving else float("inf")
    runs = [e for e in att.events if e["type"] == "red_light_run"]
    ok = ben.events == [] and held and restart <= 2.0 and len(runs) == 1
    return report(
        3,
        "signal response",
        ok,
        f"benign events {len(ben.events)}, stopped at bar from t={first_stop} through red, "
        f"moving {restart:.1f} s after green; attacked red-light runs {len(runs)} at t={runs[0]['t'] if runs else None}",
    )


def check_4_inference_counts() -> bool:
    ben = run_scenario(load_fixture("car_following_benign"))
    d = load_fixture("car_following_attacked").model_dump()
    d["sim"]["stop_on_collision"] = False
    att = run_scenario(config_from_dict(d))
    ok = 395 <= ben.completed_inferences <= 400 and 11 <= att.completed_inferences <= 13
    return report(
        4,
        "inference counts",
        ok,
        f"benign 40 s: {ben.completed_inferences}; attacked 40 s: {att.completed_inferences}",
    )


def check_5_toy_attack() -> bool:
    root = TMP / "demo"
    assert cli.main(["attack-demo", "--epsilon", "0.03", "--out", str(root)]) == 0
    assert cli.main(["attack-demo", "--epsilon", "0", "--out", str(root)]) == 0
    rep = json.loads((root / "attack-d0-e0.03" / "report.json").read_text())
    rep0 = json.loads((root / "attack-d0-e0" / "report.json").read_text())
    ratio = rep["attacked_count"] / rep["benign_count"]
    amp_ok = (ratio >= 20 or rep["attacked_count"] == rep["max_len"]) and 3.0 <= rep["attacked_latency"] <= 3.5
    zero_ok = rep0["attacked_count"] / rep0["benign_count"] == 1.0

    d = build_detector(0)
    img = reference_image()
    res = eos_suppression_attack(d, img, 0.03, 500)
    delta = res.perturbation.delta
    feas_ok = bool(np.all(np.abs(delta) <= 0.03) and np.all((img + delta >= 0) & (img + delta <= 1)))

    rng = np.random.default_rng(0)
    x = np.clip(img + rng.uniform(-0.005, 0.005, img.shape), 0, 1)
    _, grad, _ = eos_logprob_loss_and_grad(d, x)
    worst = 0.0
    for i in rng.choice(d.n, size=10, replace=False):
        e = np.zeros_like(x)
        e[i] = 1e-6
        fd = (eos_logprob_loss(d, x + e) - eos_logprob_loss(d, x - e)) / 2e-6
        worst = max(worst, abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1e-12))
    ok = amp_ok and zero_ok and feas_ok and worst <= 1e-4
    return report(
        5,
        "toy attack",
        ok,
        f"ratio {ratio:.1f} (count {rep['attacked_count']}/{rep['benign_count']}), "
        f"attacked latency {rep['attacked_latency']:.3f} s, eps=0 ratio {rep0['attacked_count'] / rep0['benign_count']}, "
        f"linf {res.perturbation.linf:.4f}, gradient rel err {worst:.1e}",
    )


def check_6_mpc_oracle() -> bool:
    cfg = MpcConfig(N=5)
    grid = list(np.linspace(cfg.u_min, cfg.u_max, 5))
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        ego = VehicleState(0.0, rng.uniform(0, 20))
        gap = rng.uniform(5, 120)
        leader = VehicleState(gap + cfg.safety_gap + 5.0, rng.choice([0.0, rng.uniform(0, 20)]))
        ours = mpc_plan(ego, leader, cfg).cost
        oracle = brute_force_plan(ego, leader, cfg, grid).cost
        worst = max(worst, ours / oracle if oracle > 0 else (0.0 if ours <= 0 else np.inf))
    return report(6, "MPC oracle equivalence", worst <= 1.05, f"worst cost ratio {worst:.4f} over 50 states")


def check_7_idm() -> bool:
    p = IdmParams()
    standstill = idm_accel(VehicleState(0.0, 0.0), None, p)
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(10):
        q = IdmParams(
            v0=rng.uniform(10, 35), T=rng.uniform(0.5, 2.5), a=rng.uniform(0.5, 3), b=rng.uniform(1, 5),
            delta=rng.uniform(1, 6), s0=rng.uniform(1, 4),
        )
        v = rng.uniform(0, 0.95) * q.v0
        leader = VehicleState(1000.0, v)
        ego = VehicleState(leader.rear - equilibrium_gap(v, q), v)
        worst = max(worst, abs(idm_accel(ego, leader, q)))
    ok = standstill == p.a and worst < 1e-6
    return report(7, "IDM analytic checks", ok, f"standstill accel {standstill} (a={p.a}), worst |a_eq| {worst:.1e}")


def check_8_determinism() -> bool:
    first = batch("car_following_attacked")
    second = batch("car_following_attacked", tag="repeat")
    files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    same = [f for f in files if (first / f).read_bytes() == (second / f).read_bytes()]
    twins = sorted(p.relative_to(second) for p in second.rglob("*") if p.is_file())
    ok = files == twins and len(same) == len(files) and (first / "summary.json").exists()
    return report(8, "determinism", ok, f"{len(same)}/{len(files)} files byte-identical across repeated batches")


def check_9_horizon_vs_delay() -> bool:
    cfg = load_fixture("car_following_attacked")
    horizon = cfg.mpc.N * cfg.sim.dt
    ages = [metrics.max_observation_age(log) for log in batch_logs(batch("car_following_attacked"))]
    ok = min(ages) > 2.0 and min(ages) > horizon
    return report(9, "horizon vs delay", ok, f"max observation age >= {min(ages):.1f} s in every run, horizon {horizon:.1f} s")


CHECKS = [
    check_1_latency_bands,
    check_2_car_following,
    check_3_signal_response,
    check_4_inference_counts,
    check_5_toy_attack,
    check_6_mpc_oracle,
    check_7_idm,
    check_8_determinism,
    check_9_horizon_vs_delay,
]


def test_criterion_1_latency_bands():
    assert check_1_latency_bands()


def test_criterion_2_car_following_batches():
    assert check_2_car_following()


def test_criterion_3_signal_response():
    assert check_3_signal_response()


def test_criterion_4_inference_counts():
    assert check_4_inference_counts()


def test_criterion_5_toy_attack():
    assert check_5_toy_attack()


def test_criterion_6_mpc_oracle():
    assert check_6_mpc_oracle()


def test_criterion_7_idm():
    assert check_7_idm()


def test_criterion_8_determinism():
    assert check_8_determinism()


def test_criterion_9_horizon_vs_delay():
    assert check_9_horizon_vs_delay()


if __name__ == "__main__":
    results = []
    for check in CHECKS:
        try:
            results.append(check())
        except Exception as err:  # a crash counts as a failure of that criterion
            num = check.__name__.split("_")[1]
            results.append(report(int(num), check.__name__, False, f"{type(err).__name__}: {err}"))
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)
