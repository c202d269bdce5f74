#!/usr/bin/env python3
"""Headless driverless-racing simulator.

    racer.py run --config configs/trackdrive.toml --seed 42 --out out/trackdrive
    racer.py bench-depth --config configs/bench.toml --workers 4
    racer.py gen-track --mission skidpad --seed 0 --out tracks/skidpad.json
    racer.py replay --telemetry out/trackdrive/telemetry.csv --check
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import TYPE_CHECKING, Final

from bench import benchmark_depth, depth_summary
from config import HarnessError, RunConfig, load_config
from harness import replay_check, run_mission, write_telemetry
from track import SimError, TrackSpec, generate_track, save_track
from utils.console import cerr, cout
from utils.display import pretty_path, show_depth_table, show_run_summary
from utils.files import graceful_exit, write_csv
from utils.log import setup_logging
from utils.types import Mission, MissionStatus

if TYPE_CHECKING:
    from collections.abc import Sequence

EXIT_OK: Final = 0
EXIT_ERROR: Final = 1
EXIT_EMERGENCY: Final = 2


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="racer", description="Deterministic driverless-racing autonomy simulator.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one closed-loop mission")
    run.add_argument("--config", type=Path, help="TOML run config (defaults apply when omitted)")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--out", type=Path, help="override the output directory")

    bench = sub.add_parser("bench-depth", help="static depth benchmark of every perception variant")
    bench.add_argument("--config", type=Path, help="TOML run config; its [bench] table sets the scene")
    bench.add_argument("--seed", type=int, help="override the config seed")
    bench.add_argument("--out", type=Path, help="override the output directory")
    bench.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")

    gen = sub.add_parser("gen-track", help="write a generated track as JSON")
    gen.add_argument("--mission", type=Mission, choices=list(Mission), required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", type=Path, required=True)

    replay = sub.add_parser("replay", help="recompute a run summary from its telemetry")
    replay.add_argument("--telemetry", type=Path, required=True)
    replay.add_argument("--check", action="store_true", help="compare against summary.json (exit 1 on mismatch)")
    return parser.parse_args(argv)


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config is not None else RunConfig()
    cfg = cfg.with_overrides(seed=args.seed, out_dir=args.out)
    workers = getattr(args, "workers", None)
    if workers is not None:
        cfg = replace(cfg, bench=replace(cfg.bench, workers=workers))
    return cfg


def cmd_run(cfg: RunConfig) -> int:
    fresh = not cfg.out_dir.exists()
    with graceful_exit("run stopped", out_dir=cfg.out_dir, fresh=fresh):
        telemetry = run_mission(cfg)
        write_telemetry(telemetry, cfg.out_dir)
    cout()
    show_run_summary(telemetry.summary)
    cout(f"\nwrote telemetry to {pretty_path(cfg.out_dir)}")

    status = MissionStatus(telemetry.summary["status"])
    if status is MissionStatus.FINISHING:
        return EXIT_OK
    if status is MissionStatus.EMERGENCY_STOP:
        return EXIT_EMERGENCY
    cerr(f"mission did not finish within {cfg.time_cap_s:.0f} s (status {status})")
    return EXIT_ERROR


def cmd_bench(cfg: RunConfig) -> int:
    fresh = not cfg.out_dir.exists()
    with graceful_exit("benchmark stopped", out_dir=cfg.out_dir, fresh=fresh):
        df = benchmark_depth(cfg)
        table = depth_summary(df)
        write_csv(df, cfg.out_dir / "depth.csv")
        write_csv(table, cfg.out_dir / "depth_summary.csv")
    cout()
    show_depth_table(table)
    cout(f"\nwrote {len(df):,} estimates to {pretty_path(cfg.out_dir / 'depth.csv')}")
    return EXIT_OK


def cmd_gen_track(mission: Mission, seed: int, out: Path) -> int:
    track = generate_track(TrackSpec(mission, seed=seed))
    save_track(track, out)
    cout(f"{mission} track with {len(track.cones)} cones -> {pretty_path(out)}")
    return EXIT_OK


def cmd_replay(telemetry: Path, *, check: bool) -> int:
    ok, mismatched = replay_check(telemetry)
    if ok:
        cout(f"summary of {pretty_path(telemetry.parent)} reproduces within 1e-9")
        return EXIT_OK
    msg = f"summary mismatch in: {', '.join(mismatched)}"
    if check:
        cerr(msg)
        return EXIT_ERROR
    cout(f"[yellow]{msg}[/]")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    setup_logging(-1 if args.quiet else args.verbose)
    try:
        match args.command:
            case "run":
                return cmd_run(_config(args))
            case "bench-depth":
                return cmd_bench(_config(args))
            case "gen-track":
                return cmd_gen_track(args.mission, args.seed, args.out)
            case "replay":
                return cmd_replay(args.telemetry, check=args.check)
    except (HarnessError, SimError) as e:
        cerr(str(e))
        return EXIT_ERROR
    except OSError as e:
        cerr(f"{e.strerror}: {e.filename}" if e.filename else str(e))
        return EXIT_ERROR
    return EXIT_ERROR


if __name__ == "__main__":
    with graceful_exit("interrupted"):
        sys.exit(main())
