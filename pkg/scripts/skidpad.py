"""Skidpad path switching: lap counters fed by trigger flags, paths switched at the center trigger."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import TYPE_CHECKING, Final, Literal

import numpy as np

from planning import SpeedProfile, WaypointPath

if TYPE_CHECKING:
    from collections.abc import Sequence

    from track import TrackDefinition, Trigger
    from utils.types import Meters


log = logging.getLogger(__name__)

LAPS_PER_CIRCLE: Final = 2
CENTER: Final = "center"

type Side = Literal["right", "left"]


class SkidpadSegment(StrEnum):
    ENTRY_LINE = "entry_line"
    RIGHT_CIRCLE = "right_circle"
    LEFT_CIRCLE = "left_circle"
    EXIT_LINE = "exit_line"


_CIRCLE: Final = {"right": SkidpadSegment.RIGHT_CIRCLE, "left": SkidpadSegment.LEFT_CIRCLE}


@dataclass(frozen=True, slots=True)
class SkidpadState:
    segment: SkidpadSegment = SkidpadSegment.ENTRY_LINE
    flags: dict[Side, tuple[bool, bool]] = field(
        default_factory=lambda: {"right": (False, False), "left": (False, False)}
    )
    counters: dict[Side, int] = field(default_factory=lambda: {"right": 0, "left": 0})
    occupied: frozenset[str] = frozenset()  # triggers the vehicle is currently inside
    center_crossings: int = 0
    first: Side = "right"

    @property
    def second(self) -> Side:
        return "left" if self.first == "right" else "right"


@dataclass(frozen=True, slots=True, eq=False)
class SkidpadPaths:
    entry: WaypointPath
    right: WaypointPath
    left: WaypointPath
    exit: WaypointPath

    def for_segment(self, segment: SkidpadSegment) -> WaypointPath:
        match segment:
            case SkidpadSegment.ENTRY_LINE:
                return self.entry
            case SkidpadSegment.RIGHT_CIRCLE:
                return self.right
            case SkidpadSegment.LEFT_CIRCLE:
                return self.left
            case SkidpadSegment.EXIT_LINE:
                return self.exit


def _straight(x0: float, x1: float, spacing: Meters, profile: SpeedProfile) -> WaypointPath:
    n = max(round((x1 - x0) / spacing), 1) + 1
    return WaypointPath.from_points(np.column_stack([np.linspace(x0, x1, n), np.zeros(n)]), profile=profile)


def _circle(cy: float, radius: Meters, *, clockwise: bool, spacing: Meters, profile: SpeedProfile) -> WaypointPath:
    n = max(round(2 * math.pi * radius / spacing), 8)
    sign = -1.0 if clockwise else 1.0
    a = math.pi / 2 * (1.0 if clockwise else -1.0) + sign * 2 * math.pi * np.arange(n) / n
    points = np.column_stack([radius * np.cos(a), cy + radius * np.sin(a)])
    return WaypointPath.from_points(points, closed=True, profile=profile)


def skidpad_paths(
    track: TrackDefinition, *, spacing: Meters = 0.5, exit_length: Meters = 25.0, profile: SpeedProfile | None = None
) -> SkidpadPaths:
    """Entry line, both circles (through the center trigger, heading +x) and the exit line."""
    profile = profile or SpeedProfile()
    center = track.trigger(CENTER)
    radius = abs(track.trigger("right_1").y - center.y) / 2
    x_start = track.start_pose.x
    return SkidpadPaths(
        entry=_straight(x_start, center.x + radius / 2, spacing, profile),
        right=_circle(center.y - radius, radius, clockwise=True, spacing=spacing, profile=profile),
        left=_circle(center.y + radius, radius, clockwise=False, spacing=spacing, profile=profile),
        exit=_straight(center.x, center.x + exit_length, spacing, profile),
    )


def _on_center(state: SkidpadState) -> SkidpadState:
    if state.counters[state.first] < LAPS_PER_CIRCLE:
        segment = _CIRCLE[state.first]
    elif state.counters[state.second] < LAPS_PER_CIRCLE:
        segment = _CIRCLE[state.second]
    else:
        segment = SkidpadSegment.EXIT_LINE
    if segment is not state.segment:
        log.info("skidpad: %s -> %s (counters %s)", state.segment, segment, state.counters)
    return replace(state, segment=segment, center_crossings=state.center_crossings + 1)


def _on_flag(state: SkidpadState, side: Side, slot: int) -> SkidpadState:
    flags = list(state.flags[side])
    flags[slot] = True
    new_flags = dict(state.flags)
    counters = dict(state.counters)
    if all(flags):
        counters[side] = min(counters[side] + 1, LAPS_PER_CIRCLE)
        new_flags[side] = (False, False)
    else:
        new_flags[side] = (flags[0], flags[1])
    return replace(state, flags=new_flags, counters=counters)


def skidpad_step(
    state: SkidpadState, vehicle_pos: tuple[float, float], triggers: Sequence[Trigger], paths: SkidpadPaths
) -> tuple[SkidpadState, WaypointPath]:
    """Advance the FSM on trigger entries at `vehicle_pos` and return the path of the active segment.

    Only entering a trigger counts; staying inside, or re-entering a trigger whose flag is
    already set, changes nothing.
    """
    x, y = vehicle_pos
    inside = frozenset(t.id for t in triggers if t.contains(x, y))
    for trigger_id in sorted(inside - state.occupied):
        if trigger_id == CENTER:
            state = _on_center(state)
            continue
        side, _, slot = trigger_id.partition("_")
        if side in _CIRCLE and slot in {"1", "2"}:
            state = _on_flag(state, side, int(slot) - 1)  # type: ignore[arg-type]
    state = replace(state, occupied=inside)
    return state, paths.for_segment(state.segment)
