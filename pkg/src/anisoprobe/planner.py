"""Offset grids, crop-window geometry, and experiment planning.

Probes place a target at an exact (dx, dy) pixel distance between the crop
border and the nearest ground-truth bbox edge, measured against the corner of
the background closest to the insertion point.  Planning is deterministic
given the seed and emits a stable, sorted manifest.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from . import compositing
from .catalog import (
    DEFAULT_MARGIN,
    BackgroundScene,
    SceneCatalog,
    TargetObject,
    effective_region,
)
from .compositing import DEFAULT_CROP, DEFAULT_SIZES, ResizedTarget
from .errors import DegenerateTargetError, InfeasibleProbeError
from .rng import derive_rng

__all__ = [
    "MASTER_OFFSETS",
    "CORNERS",
    "CropWindow",
    "TestImageSpec",
    "ProbeSpec",
    "SkipRecord",
    "ExperimentPlan",
    "offset_grid",
    "nearest_corner",
    "crop_window",
    "plan_crop",
    "measured_offsets",
    "plan_experiment",
]

MASTER_OFFSETS = (
    0, 2, 4, 7, 10, 14, 18, 24, 30, 38, 46, 60, 75, 90,
    120, 150, 200, 250, 300, 350,
)
CORNERS = ("TL", "TR", "BL", "BR")


def offset_grid(
    major_dimension: int,
    crop_dimension: int = DEFAULT_CROP,
    master: Sequence[int] = MASTER_OFFSETS,
) -> tuple[int, ...]:
    """Offsets probed for a target of the given nominal major dimension.

    An offset survives when the target still fits on the border side of the
    crop's midline: ``offset + major <= crop / 2``.
    """
    if not 0 < major_dimension < crop_dimension:
        raise ValueError(
            f"major dimension must be in (0, {crop_dimension}), got {major_dimension}"
        )
    offsets = tuple(int(o) for o in master)
    if any(b <= a for a, b in zip(offsets, offsets[1:])) or offsets[0] < 0:
        raise ValueError("master offsets must be non-negative and strictly increasing")
    return tuple(o for o in offsets if 2 * (o + major_dimension) <= crop_dimension)


@dataclass(frozen=True)
class CropWindow:
    x0: int
    y0: int
    side: int

    @property
    def x1(self) -> int:
        return self.x0 + self.side

    @property
    def y1(self) -> int:
        return self.y0 + self.side


def nearest_corner(
    bbox: tuple[int, int, int, int], width: int, height: int
) -> str:
    """Background corner nearest the bbox center; ties go TL, TR, BL, BR."""
    cx2 = bbox[0] + bbox[2]  # doubled center, exact integer arithmetic
    cy2 = bbox[1] + bbox[3]
    corners = {
        "TL": (0, 0),
        "TR": (2 * width, 0),
        "BL": (0, 2 * height),
        "BR": (2 * width, 2 * height),
    }
    best = None
    for name in CORNERS:
        px2, py2 = corners[name]
        dist = (px2 - cx2) ** 2 + (py2 - cy2) ** 2
        if best is None or dist < best[0]:
            best = (dist, name)
    return best[1]


def crop_window(
    bbox: tuple[int, int, int, int],
    background_size: tuple[int, int],
    corner: str,
    dx: int,
    dy: int,
    side: int,
) -> CropWindow:
    """Square window placing the bbox exactly (dx, dy) from the corner-side borders."""
    bg_w, bg_h = background_size
    bx0, by0, bx1, by1 = bbox
    if corner not in CORNERS:
        raise ValueError(f"unknown corner {corner!r}")
    if corner in ("TL", "BL"):
        x0 = bx0 - dx
    else:
        x0 = bx1 + dx - side
    if corner in ("TL", "TR"):
        y0 = by0 - dy
    else:
        y0 = by1 + dy - side
    window = CropWindow(x0=x0, y0=y0, side=side)
    if window.x0 < 0 or window.y0 < 0 or window.x1 > bg_w or window.y1 > bg_h:
        raise InfeasibleProbeError(
            f"window [{window.x0}, {window.x1}) x [{window.y0}, {window.y1}) "
            f"for offset ({dx}, {dy}) at corner {corner} exits the "
            f"{bg_w}x{bg_h} background"
        )
    if bx0 < window.x0 or bx1 > window.x1 or by0 < window.y0 or by1 > window.y1:
        raise InfeasibleProbeError(
            f"bbox {bbox} does not fit inside the window at offset ({dx}, {dy})"
        )
    return window


def plan_crop(
    test_image: compositing.TestImage,
    offset: tuple[int, int],
    crop_dimension: int = DEFAULT_CROP,
) -> CropWindow:
    height, width = test_image.image.shape[:2]
    corner = nearest_corner(test_image.bbox, width, height)
    return crop_window(
        test_image.bbox, (width, height), corner, offset[0], offset[1], crop_dimension
    )


def measured_offsets(
    window: CropWindow, bbox: tuple[int, int, int, int]
) -> tuple[int, int]:
    """Distance from the bbox to the nearest crop border, per axis."""
    bx0, by0, bx1, by1 = bbox
    return (
        min(bx0 - window.x0, window.x1 - bx1),
        min(by0 - window.y0, window.y1 - by1),
    )


# ---------------------------------------------------------------------------
# Whole-experiment planning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestImageSpec:
    test_image_id: str
    scene_id: str
    target_id: str
    replicate: int
    size_proportion: float
    major_px: int
    point: tuple[int, int]
    bbox: tuple[int, int, int, int]
    sub_category: str
    category: str


@dataclass(frozen=True)
class ProbeSpec:
    probe_id: str
    test_image_id: str
    dx: int
    dy: int
    corner: str
    window: CropWindow


@dataclass(frozen=True)
class SkipRecord:
    kind: str
    scene_id: str
    target_id: str
    detail: str


@dataclass(frozen=True)
class ExperimentPlan:
    test_images: tuple[TestImageSpec, ...]
    probes: tuple[ProbeSpec, ...]
    skips: tuple[SkipRecord, ...]
    sizes: tuple[float, ...]
    crop_dimension: int
    margin: int
    master_offsets: tuple[int, ...]
    seed: int
    replicates: int

    def grid_for(self, size_proportion: float) -> tuple[int, ...]:
        major = compositing.target_major_px(size_proportion, self.crop_dimension)
        return offset_grid(major, self.crop_dimension, self.master_offsets)

    def pair_count(self) -> int:
        return len({(t.scene_id, t.target_id, t.replicate) for t in self.test_images})


def size_label(size_proportion: float) -> str:
    return f"p{int(round(size_proportion * 1000)):04d}"


def test_image_id(
    scene_id: str, target_id: str, replicate: int, size_proportion: float
) -> str:
    return f"{scene_id}--{target_id}--r{replicate:02d}--{size_label(size_proportion)}"


def probe_id(tiid: str, dx: int, dy: int) -> str:
    return f"{tiid}--x{dx:03d}y{dy:03d}"


def load_target_rgba(catalog: SceneCatalog, target: TargetObject) -> np.ndarray:
    with Image.open(catalog.path(target.image)) as img:
        return np.asarray(img.convert("RGBA"))


class ResizeCache:
    """Resized-target geometry, computed once per (target, proportion)."""

    def __init__(self, catalog: SceneCatalog, crop_dimension: int) -> None:
        self.catalog = catalog
        self.crop_dimension = crop_dimension
        self._rgba: dict[str, np.ndarray] = {}
        self._resized: dict[tuple[str, float], ResizedTarget] = {}

    def rgba(self, target_id: str) -> np.ndarray:
        if target_id not in self._rgba:
            self._rgba[target_id] = load_target_rgba(
                self.catalog, self.catalog.target(target_id)
            )
        return self._rgba[target_id]

    def resized(self, target_id: str, size_proportion: float) -> ResizedTarget:
        key = (target_id, size_proportion)
        if key not in self._resized:
            self._resized[key] = compositing.resize_target(
                self.rgba(target_id), size_proportion, self.crop_dimension
            )
        return self._resized[key]


def _union_region(
    scene: BackgroundScene, category: str, margin: int
) -> np.ndarray:
    """Deduplicated (x, y) pixels of every region allowing the category."""
    parts = []
    for region in scene.regions:
        if category not in region.allowed_categories:
            continue
        mask = effective_region(region, scene, margin)
        if not mask.is_empty():
            parts.append(mask.pixels())
    if not parts:
        return np.zeros((0, 2), dtype=np.int64)
    if len(parts) == 1:
        return parts[0]
    merged = np.concatenate(parts, axis=0)
    keys = np.unique(merged[:, 1].astype(np.int64) * scene.width + merged[:, 0])
    return np.column_stack((keys % scene.width, keys // scene.width))


def plan_experiment(
    catalog: SceneCatalog,
    sizes: Iterable[float] = DEFAULT_SIZES,
    seed: int = 0,
    *,
    crop_dimension: int = DEFAULT_CROP,
    margin: int = DEFAULT_MARGIN,
    master_offsets: Sequence[int] = MASTER_OFFSETS,
    replicates: int = 1,
    resize_cache: ResizeCache | None = None,
) -> ExperimentPlan:
    """Enumerate every probe for every (scene, compatible target) pair.

    Each pair gets ``replicates`` independently sampled insertion points; each
    point yields one test image per size and one probe per (dx, dy) cell of
    that size's offset grid.  Infeasible probes and pairs with no valid
    location are listed in the skip report rather than silently dropped.
    """
    sizes = tuple(sorted(float(s) for s in sizes))
    if not sizes:
        raise ValueError("at least one size proportion is required")
    if replicates < 1:
        raise ValueError(f"replicates must be >= 1, got {replicates}")
    cache = resize_cache or ResizeCache(catalog, crop_dimension)

    test_images: list[TestImageSpec] = []
    probes: list[ProbeSpec] = []
    skips: list[SkipRecord] = []

    union_cache: dict[tuple[str, str], np.ndarray] = {}
    for scene in catalog.scenes:
        bg_size = (scene.width, scene.height)
        for target in catalog.compatible_targets(scene):
            cache_key = (scene.id, target.category)
            if cache_key not in union_cache:
                union_cache[cache_key] = _union_region(scene, target.category, margin)
            points = union_cache[cache_key]
            if len(points) == 0:
                skips.append(
                    SkipRecord(
                        kind="no-insertion-location",
                        scene_id=scene.id,
                        target_id=target.id,
                        detail=f"no effective region pixels at margin {margin}",
                    )
                )
                continue
            for replicate in range(replicates):
                rng = derive_rng(seed, scene.id, target.id, replicate)
                index = int(rng.integers(len(points)))
                point = (int(points[index, 0]), int(points[index, 1]))
                for size in sizes:
                    try:
                        resized = cache.resized(target.id, size)
                    except DegenerateTargetError as exc:
                        skips.append(
                            SkipRecord(
                                kind="degenerate-target",
                                scene_id=scene.id,
                                target_id=target.id,
                                detail=f"size {size}: {exc}",
                            )
                        )
                        continue
                    origin = compositing.paste_origin(resized, point)
                    if (
                        origin[0] < 0
                        or origin[1] < 0
                        or origin[0] + resized.width > scene.width
                        or origin[1] + resized.height > scene.height
                    ):
                        skips.append(
                            SkipRecord(
                                kind="composite-out-of-bounds",
                                scene_id=scene.id,
                                target_id=target.id,
                                detail=f"size {size} at point {point}",
                            )
                        )
                        continue
                    bbox = compositing.placed_bbox(resized, point)
                    major = compositing.target_major_px(size, crop_dimension)
                    tiid = test_image_id(scene.id, target.id, replicate, size)
                    test_images.append(
                        TestImageSpec(
                            test_image_id=tiid,
                            scene_id=scene.id,
                            target_id=target.id,
                            replicate=replicate,
                            size_proportion=size,
                            major_px=major,
                            point=point,
                            bbox=bbox,
                            sub_category=target.category,
                            category=catalog.category_map.collapse(target.category),
                        )
                    )
                    corner = nearest_corner(bbox, scene.width, scene.height)
                    grid = offset_grid(major, crop_dimension, master_offsets)
                    for dx, dy in product(grid, grid):
                        try:
                            window = crop_window(
                                bbox, bg_size, corner, dx, dy, crop_dimension
                            )
                        except InfeasibleProbeError as exc:
                            skips.append(
                                SkipRecord(
                                    kind="infeasible-probe",
                                    scene_id=scene.id,
                                    target_id=target.id,
                                    detail=f"{tiid} ({dx}, {dy}): {exc}",
                                )
                            )
                            continue
                        probes.append(
                            ProbeSpec(
                                probe_id=probe_id(tiid, dx, dy),
                                test_image_id=tiid,
                                dx=dx,
                                dy=dy,
                                corner=corner,
                                window=window,
                            )
                        )

    test_images.sort(key=lambda t: t.test_image_id)
    probes.sort(key=lambda p: (p.test_image_id, p.dx, p.dy))
    return ExperimentPlan(
        test_images=tuple(test_images),
        probes=tuple(probes),
        skips=tuple(skips),
        sizes=sizes,
        crop_dimension=crop_dimension,
        margin=margin,
        master_offsets=tuple(int(o) for o in master_offsets),
        seed=seed,
        replicates=replicates,
    )
