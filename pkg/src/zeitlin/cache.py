"""On-disk cache of structure-constant tables.

Files live in ``$ZEITLIN_CACHE_DIR`` when set, or in a directory passed
explicitly; with neither, tables are only memoized in memory.
"""
from __future__ import annotations

import os
from functools import lru_cache
from pathlib import Path
from typing import Optional

from .structconst import StructureTable, build_tables, load_table, save_table

ENV_VAR = "ZEITLIN_CACHE_DIR"


def cache_dir(override=None) -> Optional[Path]:
    raw = override if override is not None else os.environ.get(ENV_VAR)
    if not raw:
        return None
    path = Path(raw).expanduser()
    path.mkdir(parents=True, exist_ok=True)
    return path


def table_paths(directory: Path, N: int, scale: str) -> tuple[Path, Path]:
    stem = f"structconst_N{N}_{scale}"
    return directory / f"{stem}_discrete.zstc", directory / f"{stem}_continuous.zstc"


@lru_cache(maxsize=8)
def _memo(N: int, scale: str, directory: Optional[str]):
    if directory is None:
        return build_tables(N, scale)
    pd, pc = table_paths(Path(directory), N, scale)
    if pd.exists() and pc.exists():
        try:
            return load_table(pd, "discrete", scale), load_table(pc, "continuous", None)
        except ValueError:
            pass  # corrupt or stale; rebuild below
    disc, cont = build_tables(N, scale)
    for table, path in ((disc, pd), (cont, pc)):
        tmp = path.with_suffix(".tmp")
        save_table(table, tmp)
        os.replace(tmp, path)
    return disc, cont


def cached_tables(N: int, scale: str = "dimension", directory=None) -> tuple[StructureTable, StructureTable]:
    d = cache_dir(directory)
    return _memo(N, scale, None if d is None else str(d))
