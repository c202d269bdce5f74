"""Console printing (shorthands for `cout.print` & `cerr.print`)."""

from __future__ import annotations

import sys
from typing import TYPE_CHECKING, Any, Final, TypedDict, Unpack

from rich.console import Console
from rich.theme import Theme

if TYPE_CHECKING:
    from rich.console import JustifyMethod, OverflowMethod
    from rich.style import Style


THEME: Final = Theme(
    {
        "tier.lidar_fusion": "green",
        "tier.monocular": "cyan",
        "tier.stereo": "magenta",
        "status.starting": "dim",
        "status.racing": "bold cyan",
        "status.finishing": "bold green",
        "status.emergency_stop": "bold red",
    }
)


class _RichConsolePrintKwargs(TypedDict, total=False):
    """Typed keyword arguments for `rich.console.print`."""

    sep: str
    end: str
    style: str | Style | None
    justify: JustifyMethod | None
    overflow: OverflowMethod | None
    no_wrap: bool | None
    markup: bool | None
    highlight: bool | None
    width: int | None
    crop: bool
    soft_wrap: bool | None


class _Console(Console):
    def __call__(
        self,
        *objects: Any,  # noqa: ANN401
        **kwargs: Unpack[_RichConsolePrintKwargs],
    ) -> None:
        self.print(*objects, **kwargs)


class _ErrConsole(Console):
    def __call__(
        self,
        *objects: Any,  # noqa: ANN401
        exit_code: int | None = None,
        prefix: str = "[bold red]error:[/]",
        **kwargs: Unpack[_RichConsolePrintKwargs],
    ) -> None:
        self.print(prefix, *objects, **kwargs)

        if exit_code is not None:
            sys.exit(exit_code)


def styled(value: str, group: str) -> str:
    """Wrap `value` in the theme style `group.value` (e.g. tier or status names)."""
    return f"[{group}.{value}]{value}[/]"


cout = _Console(theme=THEME)
cerr = _ErrConsole(stderr=True, theme=THEME)
