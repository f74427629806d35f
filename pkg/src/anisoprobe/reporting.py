"""Heatmap rendering and annotation-density maps."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from matplotlib import colormaps
from matplotlib.figure import Figure
from PIL import Image

from . import rle
from .metrics import CellMetrics

__all__ = [
    "METRIC_FIELDS",
    "DensityMap",
    "cell_grid",
    "heatmap",
    "read_heatmap_csv",
    "density_map",
    "write_density_map",
]

METRIC_FIELDS = ("r_t", "r_a", "c_t", "c_a", "s_t", "s_a")
STANDARD_DENSITY_SIZE = 640


def cell_grid(
    cells: Sequence[CellMetrics], metric: str
) -> tuple[list[int], list[int], np.ndarray]:
    """Offsets and a dy-by-dx value grid (NaN where the metric is absent).

    Cells are placed at ordinal grid positions; exact offsets label the axes.
    """
    if metric not in METRIC_FIELDS:
        raise ValueError(
            f"unknown metric {metric!r}; choose from {', '.join(METRIC_FIELDS)}"
        )
    if not cells:
        raise ValueError("no cells to render")
    sizes = {c.size for c in cells}
    if len(sizes) != 1:
        raise ValueError(f"cells span multiple size classes: {sorted(sizes)}")
    dxs = sorted({c.dx for c in cells})
    dys = sorted({c.dy for c in cells})
    grid = np.full((len(dys), len(dxs)), np.nan)
    for cell in cells:
        value = getattr(cell, metric)
        grid[dys.index(cell.dy), dxs.index(cell.dx)] = (
            np.nan if value is None else value
        )
    return dxs, dys, grid


def heatmap(
    cells: Sequence[CellMetrics],
    metric: str,
    png_path: str | Path,
    csv_path: str | Path,
    title: str | None = None,
) -> tuple[list[int], list[int], np.ndarray]:
    """Render one metric as a tile map and mirror the values to CSV."""
    dxs, dys, grid = cell_grid(cells, metric)

    fig = Figure(figsize=(0.35 * len(dxs) + 2.0, 0.35 * len(dys) + 1.6))
    ax = fig.subplots()
    cmap = colormaps["viridis"].copy()
    cmap.set_bad("lightgrey")
    image = ax.imshow(grid, cmap=cmap, origin="upper", interpolation="nearest")
    ax.set_xticks(range(len(dxs)), [str(v) for v in dxs], rotation=90, fontsize=7)
    ax.set_yticks(range(len(dys)), [str(v) for v in dys], fontsize=7)
    ax.set_xlabel("x offset (px)")
    ax.set_ylabel("y offset (px)")
    ax.set_title(title or metric)
    fig.colorbar(image, ax=ax, shrink=0.85)
    png_path = Path(png_path)
    png_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(png_path, dpi=120, bbox_inches="tight")

    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["dy\\dx"] + [str(v) for v in dxs])
        for yi, dy in enumerate(dys):
            row = [str(dy)]
            for xi in range(len(dxs)):
                value = grid[yi, xi]
                row.append("" if np.isnan(value) else repr(float(value)))
            writer.writerow(row)
    return dxs, dys, grid


def read_heatmap_csv(path: str | Path) -> tuple[list[int], list[int], np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    dxs = [int(v) for v in rows[0][1:]]
    dys = [int(r[0]) for r in rows[1:]]
    grid = np.full((len(dys), len(dxs)), np.nan)
    for yi, row in enumerate(rows[1:]):
        for xi, value in enumerate(row[1:]):
            if value:
                grid[yi, xi] = float(value)
    return dxs, dys, grid


# ---------------------------------------------------------------------------
# Annotation density (framing-bias audit)
# ---------------------------------------------------------------------------


@dataclass
class DensityMap:
    grid: np.ndarray  # (size, size) int64 counts
    images: int


def _nearest_resize(mask: np.ndarray, size: int) -> np.ndarray:
    h, w = mask.shape
    rows = np.minimum(((np.arange(size) + 0.5) * h / size).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(size) + 0.5) * w / size).astype(np.int64), w - 1)
    return mask[np.ix_(rows, cols)]


def density_map(
    annotations: Iterable[tuple[tuple[int, int], Sequence[Sequence[int]]]],
    standard_size: int = STANDARD_DENSITY_SIZE,
) -> DensityMap:
    """Sum binary object masks after nearest-neighbor resize to a common frame.

    ``annotations`` yields ``((height, width), [rle_counts, ...])`` per image.
    """
    grid = np.zeros((standard_size, standard_size), dtype=np.int64)
    images = 0
    for (height, width), masks in annotations:
        images += 1
        for counts in masks:
            mask = rle.decode(counts, height, width)
            grid += _nearest_resize(mask, standard_size)
    return DensityMap(grid=grid, images=images)


def write_density_map(
    density: DensityMap, png_path: str | Path, csv_path: str | Path
) -> None:
    png_path = Path(png_path)
    png_path.parent.mkdir(parents=True, exist_ok=True)
    clipped = np.minimum(density.grid, 65535).astype(np.uint16)
    Image.fromarray(clipped).save(png_path)

    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        for row in density.grid:
            writer.writerow([int(v) for v in row])
