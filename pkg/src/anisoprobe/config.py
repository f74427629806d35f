"""Run configuration with paper-default values and config-file overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

from .catalog import DEFAULT_MARGIN
from .compositing import DEFAULT_CROP, DEFAULT_SIZES
from .planner import MASTER_OFFSETS


@dataclass
class RunConfig:
    catalog_root: Path
    output_root: Path
    sizes: tuple[float, ...] = DEFAULT_SIZES
    crop_dimension: int = DEFAULT_CROP
    margin: int = DEFAULT_MARGIN
    master_offsets: tuple[int, ...] = MASTER_OFFSETS
    seed: int = 0
    workers: int = 1
    replicates: int = 1

    @classmethod
    def resolve(
        cls,
        catalog_root: str | Path,
        output_root: str | Path,
        config_file: str | Path | None = None,
        **overrides,
    ) -> "RunConfig":
        """Defaults, then config-file values, then explicit overrides."""
        values: dict = {}
        if config_file is not None:
            values.update(json.loads(Path(config_file).read_text(encoding="utf-8")))
        for key, value in overrides.items():
            if value is not None:
                values[key] = value
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        config = cls(
            catalog_root=Path(catalog_root), output_root=Path(output_root), **values
        )
        config.sizes = tuple(float(s) for s in config.sizes)
        config.master_offsets = tuple(int(o) for o in config.master_offsets)
        return config
