"""Progress bars for long batch jobs (the depth benchmark)."""

from __future__ import annotations

from typing import TYPE_CHECKING

from rich.progress import (
    BarColumn,
    MofNCompleteColumn,
    Progress,
    TaskProgressColumn,
    TextColumn,
    TimeElapsedColumn,
    TimeRemainingColumn,
)

from .console import cout

if TYPE_CHECKING:
    from collections.abc import Iterable, Iterator

    from utils.types import Uint


def _bar(unit: str, *, transient: bool) -> Progress:
    return Progress(
        TextColumn("[bold]{task.description}"),
        BarColumn(bar_width=24),
        MofNCompleteColumn(),
        TextColumn(unit),
        TaskProgressColumn(),
        TimeElapsedColumn(),
        TextColumn("eta"),
        TimeRemainingColumn(),
        console=cout,
        transient=transient,
    )


def tracked[T](
    items: Iterable[T],
    label: str,
    *,
    total: Uint,
    unit: str = "cones",
    show: bool = True,
    transient: bool = True,
) -> Iterator[tuple[Uint, T]]:
    """Yield `(index, item)` while advancing a bar; with `show` off this is a bare `enumerate`.

    Results arrive in submission order even from a process pool, so the bar tracks
    completed prefixes, not finished workers.
    """
    if not show or cout.quiet:
        yield from enumerate(items)
        return
    with _bar(unit, transient=transient) as progress:
        task = progress.add_task(label, total=total)
        for i, item in enumerate(items):
            yield i, item
            progress.advance(task)
