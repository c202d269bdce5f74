from __future__ import annotations

import json
import shutil
from contextlib import contextmanager
from typing import TYPE_CHECKING, Any, Final

from utils.display import pretty_path

from .console import cerr

if TYPE_CHECKING:
    from collections.abc import Generator
    from pathlib import Path

    from pandas import DataFrame


FLOAT_FORMAT: Final = "%.9g"


@contextmanager
def graceful_exit(msg: str = "exiting", *, out_dir: Path | None = None, fresh: bool = False) -> Generator[None]:
    """Catch KeyboardInterrupt, clean up a partial output dir (if created by this run), & exit."""
    try:
        yield
    except KeyboardInterrupt:
        prefix = "[bold yellow]>[/]"
        if fresh and out_dir and out_dir.exists():
            shutil.rmtree(out_dir)
            cerr(f"{msg} (removed partial {pretty_path(out_dir)})", exit_code=130, prefix=prefix)
        else:
            cerr(msg, exit_code=130, prefix=prefix)


def write_csv(df: DataFrame, path: Path, /) -> Path:
    """Write `df` with a fixed float format so repeated runs are byte-identical."""
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_json(payload: Any, path: Path, /) -> Path:  # noqa: ANN401
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
