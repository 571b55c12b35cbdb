"""Command-line entry point: single runs, seeded batches and the toy attack demo.

Exit codes: 0 success, 1 config error, 2 I/O error, 3 internal error
(solver or detector calibration).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import metrics
from .config import EPSILON_CONVENTION, FIXTURES, ConfigError, SimConfig, echo_config, fixture_path, parse_config
from .runlog import RunLog
from .sim import run_scenario
from .slowdown import (
    CalibrationError,
    attack_report,
    build_detector,
    calibrate_latency,
    eos_suppression_attack,
    reference_image,
    save_detector,
    write_attack_report,
)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3
OUT_ENV = "AVLATENCY_OUT"
DEFAULT_OUT = "avlatency_out"


def output_root(out: str | None) -> Path:
    """``--out`` if given, else the AVLATENCY_OUT environment variable, else ./avlatency_out."""
    return Path(out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def resolve_config(ref: str) -> SimConfig:
    """Load a config file, or a shipped fixture by name when no such file exists."""
    path = Path(ref)
    if not path.exists() and ref in FIXTURES:
        path = fixture_path(ref)
    return parse_config(path)


def _dump_json(data, path: Path) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def run_summary(cfg: SimConfig, log: RunLog) -> dict:
    out = asdict(metrics.run_outcome(log))
    out["fingerprint"] = log.fingerprint
    out["events"] = log.events
    out["latency_samples"] = len(log.latency_samples)
    out["warnings"] = cfg.warnings()
    return out


def write_run(cfg: SimConfig, log: RunLog, run_dir: Path) -> None:
    """Log, series exports, summary and the resolved config for one run."""
    run_dir.mkdir(parents=True, exist_ok=True)
    log.save(run_dir / "log.jsonl")
    for kind in ("time_space", "speed_profile", "gap"):
        if kind == "gap" and not log.has_bv:
            continue
        metrics.export_series(log, kind, run_dir / f"{kind}.csv")
    _dump_json(run_summary(cfg, log), run_dir / "summary.json")
    (run_dir / "config.toml").write_text(echo_config(cfg))


def write_histogram(bins, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("lo", "hi", "count"))
        w.writerows(bins)


def _warn(cfg: SimConfig) -> None:
    for w in cfg.warnings():
        print(f"warning: {w}", file=sys.stderr)


def cmd_run(args) -> int:
    cfg = resolve_config(args.config)
    _warn(cfg)
    seed = cfg.sim.seed if args.seed is None else args.seed
    log = run_scenario(cfg, seed)
    run_dir = output_root(args.out) / f"{cfg.fingerprint()}-s{seed}"
    write_run(cfg, log, run_dir)
    o = metrics.run_outcome(log)
    print(
        f"{run_dir}: ticks={o.ticks} collided={o.collided} red_light_run={o.red_light_run} "
        f"delayed_start={o.delayed_start} inferences={o.completed_inferences}"
    )
    return EXIT_OK


def cmd_batch(args) -> int:
    if args.runs < 1:
        raise ConfigError("--runs must be >= 1")
    cfg = resolve_config(args.config)
    _warn(cfg)
    base = cfg.sim.seed if args.base_seed is None else args.base_seed
    batch_dir = output_root(args.out) / f"{cfg.fingerprint()}-b{base}-n{args.runs}"
    logs, failed = [], []
    for seed in range(base, base + args.runs):
        log = run_scenario(cfg, seed)
        logs.append(log)
        try:
            write_run(cfg, log, batch_dir / f"run-s{seed}")
        except OSError as err:
            failed.append(seed)
            print(f"error: run {seed}: {err}", file=sys.stderr)
    summary = metrics.aggregate_batch(logs, cfg.metrics.histogram_bin)
    batch_dir.mkdir(parents=True, exist_ok=True)
    data = summary.to_dict()
    data["fingerprint"] = cfg.fingerprint()
    data["seeds"] = [base, base + args.runs - 1]
    _dump_json(data, batch_dir / "summary.json")
    write_histogram(summary.latency_histogram, batch_dir / "latency_histogram.csv")
    print(
        f"{batch_dir}: runs={summary.runs} collision_rate={summary.collision_rate:g} "
        f"red_light_runs={summary.red_light_runs} delayed_starts={summary.delayed_starts}"
    )
    return EXIT_IO if failed else EXIT_OK


def cmd_attack_demo(args) -> int:
    if args.epsilon < 0:
        raise ConfigError("--epsilon must be >= 0")
    if args.iters < 1:
        raise ConfigError("--iters must be >= 1")
    if args.epsilon > EPSILON_CONVENTION:
        print(
            f"warning: epsilon {args.epsilon:g} exceeds the unnoticeable-perturbation convention "
            f"of {EPSILON_CONVENTION:g}",
            file=sys.stderr,
        )
    d = build_detector(seed=args.detector_seed)
    img = reference_image(n=d.n)
    cost = calibrate_latency(d, args.benign_target, img)
    result = eos_suppression_attack(d, img, args.epsilon, args.iters)
    report = attack_report(
        result,
        cost,
        detector_seed=args.detector_seed,
        iters=args.iters,
        max_len=d.max_len,
        amplification=result.amplification,
    )
    out_dir = output_root(args.out) / f"attack-d{args.detector_seed}-e{args.epsilon:g}"
    out_dir.mkdir(parents=True, exist_ok=True)
    write_attack_report(report, out_dir / "report.json")
    save_detector(d, out_dir / "detector.bin")
    print(
        f"{out_dir}: benign={result.benign_count} tokens ({report['benign_latency']:.3f} s) "
        f"attacked={result.attacked_count} tokens ({report['attacked_latency']:.3f} s)"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="avlatency", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one run")
    r.add_argument("--config", required=True, help="TOML config path or shipped fixture name")
    r.add_argument("--seed", type=int, default=None, help="defaults to sim.seed")
    r.add_argument("--out", default=None, help=f"output root (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("batch", help="simulate seeds base_seed .. base_seed+runs-1")
    b.add_argument("--config", required=True, help="TOML config path or shipped fixture name")
    b.add_argument("--runs", type=int, default=40)
    b.add_argument("--base-seed", type=int, default=None, help="defaults to sim.seed")
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_batch)

    a = sub.add_parser("attack-demo", help="EOS-suppression attack on the toy detector")
    a.add_argument("--epsilon", type=float, default=0.03)
    a.add_argument("--iters", type=int, default=500)
    a.add_argument("--detector-seed", type=int, default=0)
    a.add_argument("--benign-target", type=float, default=0.1, help="benign latency in seconds")
    a.add_argument("--out", default=None)
    a.set_defaults(func=cmd_attack_demo)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except CalibrationError as err:
        print(f"calibration error: {err}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as err:  # noqa: BLE001 - anything else is an internal failure
        print(f"internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
