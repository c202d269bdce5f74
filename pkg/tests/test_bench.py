from __future__ import annotations

from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from bench import DEPTH_COLUMNS, _scene_cone, bench_cone, benchmark_depth, depth_summary
from config import BenchConfig, PerceptionSettings, RunConfig
from perception import PerceptionConfig
from utils.types import SourceTier
from vision import StereoNoise, default_mono_calibration


@pytest.fixture(scope="module")
def quiet() -> RunConfig:
    return RunConfig(seed=1, noise_off=True, perception=PerceptionSettings(calibrate_mono=False))


@pytest.fixture(scope="module")
def perception(quiet) -> PerceptionConfig:
    settings = quiet.perception
    return PerceptionConfig(settings.lidar, default_mono_calibration(), settings.stereo_mode, StereoNoise.off())


def test_cone_rows(quiet, perception):
    rows = bench_cone(0, quiet, perception)
    assert rows
    assert all(set(row) == set(DEPTH_COLUMNS) for row in rows)
    assert len({row["true_depth_m"] for row in rows}) == 1
    variants = {(row["tier"], row["variant"]) for row in rows}
    assert {tier for tier, _ in variants} <= {*(t.value for t in SourceTier), "mono_stereo_fusion", "three_tier"}
    assert (SourceTier.MONOCULAR.value, "all_cones") in variants


def test_cone_is_reproducible(quiet, perception):
    assert bench_cone(7, quiet, perception) == bench_cone(7, quiet, perception)
    assert bench_cone(7, quiet, perception) != bench_cone(8, quiet, perception)


def test_noise_free_lidar_tier_under_five_percent(quiet, perception):
    # fallen cones are scored against their base centre, which a point average does not target
    upright = [i for i in range(40) if not _scene_cone(i, quiet, np.random.default_rng([quiet.seed, i])).fallen]
    rows = [row for i in upright for row in bench_cone(i, quiet, perception)]
    lidar = [row for row in rows if row["tier"] == SourceTier.LIDAR_FUSION.value]
    assert {row["variant"] for row in lidar} == {"cluster_mean", "cluster_mean_axis"}
    assert max(abs(row["rel_err_pct"]) for row in lidar) < 5.0


def test_depth_summary():
    df = pd.DataFrame(
        [
            (0, 5.0, 5.05, "lidar_fusion", "cluster_mean", 1.0),
            (1, 5.0, 4.7, "lidar_fusion", "cluster_mean", -6.0),
            (2, 5.0, 6.5, "lidar_fusion", "cluster_mean", 30.0),
            (0, 5.0, 5.1, "stereo", "slender_top1", 2.0),
        ],
        columns=list(DEPTH_COLUMNS),
    )
    table = depth_summary(df)
    assert list(table.columns) == [
        "tier",
        "variant",
        "n",
        "mean_abs_err_pct",
        "mean_no_outliers_pct",
        "lt5_pct",
        "lt10_pct",
        "lt20_pct",
    ]
    lidar, stereo = table.iloc[0], table.iloc[1]
    assert lidar["n"] == 3
    assert lidar["mean_abs_err_pct"] == pytest.approx(37.0 / 3)
    assert lidar["mean_no_outliers_pct"] == pytest.approx(3.5)
    assert lidar["lt5_pct"] == pytest.approx(100.0 / 3)
    assert lidar["lt10_pct"] == pytest.approx(200.0 / 3)
    assert lidar["lt20_pct"] == pytest.approx(200.0 / 3)
    assert stereo["variant"] == "slender_top1"
    assert stereo["lt5_pct"] == 100.0


@pytest.mark.slow
def test_worker_count_does_not_change_results(quiet):
    serial = replace(quiet, bench=BenchConfig(n_cones=24, workers=1))
    parallel = replace(quiet, bench=BenchConfig(n_cones=24, workers=2))
    pd.testing.assert_frame_equal(benchmark_depth(serial, show=False), benchmark_depth(parallel, show=False))


@pytest.mark.slow
def test_tier_ordering_with_default_noise():
    cfg = RunConfig(seed=1, bench=BenchConfig(n_cones=300))
    table = depth_summary(benchmark_depth(cfg, show=False)).set_index(["tier", "variant"])
    lidar = table.loc[("lidar_fusion", "cluster_mean"), "mean_abs_err_pct"]
    mono = table.loc[("monocular", "good_cones"), "mean_abs_err_pct"]
    slender = table.loc[("stereo", "slender_top1"), "mean_abs_err_pct"]
    full = table.loc[("stereo", "full_top1"), "mean_abs_err_pct"]
    assert lidar < mono
    assert slender < full
