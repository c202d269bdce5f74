from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

from rich.table import Table

from .console import cout, styled

if TYPE_CHECKING:
    from pandas import DataFrame

    from utils.types import RunSummary


def pretty_path(path: Path, /) -> str:
    return f"[magenta]{f'{path.resolve()}'.replace(str(Path.home()), '~', 1)}[/]"


def show_run_summary(summary: RunSummary, /) -> None:
    """Show closed-loop run summary."""
    cout("Run Summary")
    cout(f"  [dim]Status[/]          {styled(summary['status'], 'status')}")
    cout(f"  [dim]Sim time[/]        {summary['sim_time_s']:.2f} s")
    cout(f"  [dim]Laps[/]            {summary['laps']}  {', '.join(f'{t:.2f}' for t in summary['lap_times_s'])}")
    cout(f"  [dim]Cones hit[/]       {summary['cones_hit']}")
    cout(f"  [dim]Mean |CTE|[/]      {summary['mean_abs_cross_track_m']:.3f} m")
    cout(f"  [dim]Pose RMSE[/]       slam={summary['pose_rmse_slam_m']:.3f} m  "
         f"motion-only={summary['pose_rmse_dead_reckoning_m']:.3f} m")
    cout(f"  [dim]Landmarks[/]       {summary['n_landmarks']}  mse={summary['landmark_mse_m2']:.4f} m²")
    if summary["segments"]:
        cout(f"  [dim]Segments[/]        {' → '.join(summary['segments'])}")

    cout("  [dim]Tiers[/]")
    width = max((len(t) for t in summary["tier_counts"]), default=0)
    for tier, n in summary["tier_counts"].items():
        err = summary["tier_mean_abs_err_pct"].get(tier, float("nan"))
        cout(f"    {styled(tier, 'tier'):<{width}}  n={n:<6,} mean|err|={err:5.2f}%")


def show_depth_table(df: DataFrame, /) -> None:
    """Show the per-variant depth error table."""
    table = Table(title="Relative depth error", title_justify="left")
    for col in df.columns:
        table.add_column(col, justify="left" if df[col].dtype == object else "right")
    for row in df.itertuples(index=False):
        table.add_row(*(f"{v:.2f}" if isinstance(v, float) else str(v) for v in row))
    cout(table)
