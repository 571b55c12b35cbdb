import numpy as np
import pytest

from avlatency import metrics
from avlatency.config import config_from_dict
from avlatency.sim import initial_world, run_scenario


def test_benign_car_following(fixtures):
    log = run_scenario(fixtures["car_following_benign"])
    assert len(log.records) == 400
    assert log.events == []
    assert log.dropped_frames == 0
    assert metrics.max_observation_age(log) <= 0.1 + 0.1 + 1e-9


def test_attacked_car_following_ends_in_collision(fixtures):
    log = run_scenario(fixtures["car_following_attacked"])
    assert log.events[-1]["type"] == "collision"
    assert log.records[-1]["t"] == log.events[-1]["t"]
    assert log.dropped_frames > 0
    assert all(r["attack_active"] for r in log.records)


def test_collision_can_continue_the_run(fixtures):
    d = fixtures["car_following_attacked"].model_dump()
    d["sim"]["stop_on_collision"] = False
    log = run_scenario(config_from_dict(d))
    assert len(log.records) == 400
    assert [e["type"] for e in log.events] == ["collision"]


def test_signal_benign_stops_and_restarts(fixtures):
    log = run_scenario(fixtures["signal_benign"])
    assert log.events == []
    bar = log.stop_bar_x
    red_wait = [r for r in log.records if 27.0 <= r["t"] < 35.0]
    assert all(r["ego.v"] == 0.0 and bar - 10 <= r["ego.x"] <= bar for r in red_wait)
    moving = [r for r in log.records if 35.0 <= r["t"] <= 37.0 and r["ego.v"] > 0.1]
    assert moving


def test_ticks_positions_and_speeds(fixtures):
    for name in ("car_following_benign", "signal_attacked"):
        log = run_scenario(fixtures[name])
        ts = np.array(log.column("t"))
        assert np.allclose(np.diff(ts), 0.1)
        xs = np.array(log.column("ego.x"))
        assert np.all(np.diff(xs) >= 0)
        assert min(log.column("ego.v")) >= 0
        u = [x for x in log.column("ego.u")]
        assert all(-6.0 - 1e-9 <= x <= 3.0 + 1e-9 for x in u)


def test_observation_never_consumed_before_available(fixtures):
    log = run_scenario(fixtures["signal_attacked"])
    for r in log.records:
        if r["obs.capture_t"] is not None:
            assert r["obs.age"] >= 0.07 - 1e-9


def test_determinism(fixtures):
    cfg = fixtures["car_following_attacked"]
    assert run_scenario(cfg, 5).dumps() == run_scenario(cfg, 5).dumps()
    assert run_scenario(cfg, 5).dumps() != run_scenario(cfg, 6).dumps()


def test_idm_background_vehicle():
    cfg = config_from_dict({"scenario": {"bv_mode": "idm", "bv_x": 60.0, "bv_v": 5.0, "ego_v": 10.0}})
    log = run_scenario(cfg)
    bv_v = log.column("bv.v")
    assert bv_v[-1] == pytest.approx(15.0, abs=0.5)  # free road toward v0
    assert not any(e["type"] == "collision" for e in log.events)


def test_initial_world_slots():
    w = initial_world(config_from_dict({"scenario": {"bv_mode": "none"}}))
    assert w.background == [] and w.signal is None
    w = initial_world(config_from_dict({"scenario": {"stop_bar_x": 300.0}}))
    assert len(w.background) == 1 and w.signal is not None


def test_synthesized_latency_run():
    cfg = config_from_dict({"perception": {"latency": "synthesized"}, "attack": {"launch_t": 0.0}})
    log = run_scenario(cfg)
    assert all(s == pytest.approx(3.2) for s in log.latency_samples)
    assert log.events[-1]["type"] == "collision"


def test_delayed_start_when_attack_lands_in_red():
    cfg = config_from_dict(
        {
            "scenario": {"kind": "signal_response", "bv_mode": "none", "ego_v": 15.0, "stop_bar_x": 360.0},
            "attack": {"launch_t": 31.0},
        }
    )
    log = run_scenario(cfg)
    assert [e["type"] for e in log.events] == ["delayed_start"]
    assert log.events[0]["t"] > 37.0
