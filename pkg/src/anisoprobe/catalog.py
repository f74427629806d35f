"""Scene/target catalog: data model, manifest IO, regions, and sampling.

A catalog directory holds one ``catalog.json`` manifest plus the image assets
it references.  Backgrounds are large natural scenes annotated with insertion
regions (polygons tagged with the sub-categories plausible there); targets are
RGBA cutouts whose alpha channel is the object mask.  Sub-categories collapse
to the evaluation vocabulary through the category map.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from shapely.geometry import Polygon as _ShapelyPolygon

from .errors import CatalogError, NoValidLocationError

__all__ = [
    "MIN_BACKGROUND_SIDE",
    "MIN_TARGET_MAJOR",
    "DEFAULT_MARGIN",
    "OPAQUE_ALPHA",
    "InsertionRegion",
    "BackgroundScene",
    "TargetObject",
    "CategoryMap",
    "SceneCatalog",
    "RegionMask",
    "load_catalog",
    "save_catalog",
    "rasterize_polygon",
    "effective_region",
    "sample_insertion_point",
]

MIN_BACKGROUND_SIDE = 1600
MIN_TARGET_MAJOR = 50
DEFAULT_MARGIN = 400
# uint8 alpha at or above this counts as inside the object mask (>= 0.5 in unit scale)
OPAQUE_ALPHA = 128


@dataclass(frozen=True)
class InsertionRegion:
    polygon: tuple[tuple[int, int], ...]
    allowed_categories: frozenset[str]


@dataclass(frozen=True)
class BackgroundScene:
    id: str
    image: str  # path relative to the catalog root
    width: int
    height: int
    regions: tuple[InsertionRegion, ...]


@dataclass(frozen=True)
class TargetObject:
    id: str
    image: str
    category: str
    native_width: int  # tight alpha-mask bounds
    native_height: int

    @property
    def native_major(self) -> int:
        return max(self.native_width, self.native_height)


@dataclass(frozen=True)
class CategoryMap:
    """Collapse map from annotation sub-categories to evaluation categories.

    A sub-category resolves through an explicit entry, or to itself when it is
    already an evaluation category; anything else is unknown.
    """

    mapping: dict[str, str]
    evaluation_categories: frozenset[str]

    def collapse(self, sub_category: str) -> str:
        mapped = self.mapping.get(sub_category)
        if mapped is not None:
            return mapped
        if sub_category in self.evaluation_categories:
            return sub_category
        raise CatalogError(
            f"category {sub_category!r} has no collapse entry and is not an "
            "evaluation category"
        )

    def knows(self, sub_category: str) -> bool:
        return (
            sub_category in self.mapping
            or sub_category in self.evaluation_categories
        )


@dataclass(frozen=True)
class SceneCatalog:
    root: Path
    scenes: tuple[BackgroundScene, ...]
    targets: tuple[TargetObject, ...]
    category_map: CategoryMap

    def path(self, relative: str) -> Path:
        return self.root / relative

    def scene(self, scene_id: str) -> BackgroundScene:
        for scene in self.scenes:
            if scene.id == scene_id:
                return scene
        raise KeyError(scene_id)

    def target(self, target_id: str) -> TargetObject:
        for target in self.targets:
            if target.id == target_id:
                return target
        raise KeyError(target_id)

    def compatible_targets(self, scene: BackgroundScene) -> list[TargetObject]:
        """Targets whose sub-category is allowed by at least one region."""
        allowed: set[str] = set()
        for region in scene.regions:
            allowed |= region.allowed_categories
        return [t for t in self.targets if t.category in allowed]


# ---------------------------------------------------------------------------
# Manifest loading / saving
# ---------------------------------------------------------------------------


def _polygon_area(points: tuple[tuple[int, int], ...]) -> float:
    area = 0.0
    n = len(points)
    for i in range(n):
        x0, y0 = points[i]
        x1, y1 = points[(i + 1) % n]
        area += x0 * y1 - x1 * y0
    return abs(area) / 2.0


def _validate_region(
    region: dict, scene_id: str, index: int, width: int, height: int,
    category_map: CategoryMap, problems: list[str],
) -> InsertionRegion | None:
    where = f"background {scene_id!r} region {index}"
    raw = region.get("polygon")
    if not isinstance(raw, list) or len(raw) < 3:
        problems.append(f"{where}: polygon needs at least 3 vertices")
        return None
    polygon = tuple((int(x), int(y)) for x, y in raw)
    for x, y in polygon:
        if not (0 <= x <= width and 0 <= y <= height):
            problems.append(f"{where}: vertex ({x}, {y}) outside the image")
            return None
    if _polygon_area(polygon) <= 0:
        problems.append(f"{where}: degenerate polygon (zero area)")
        return None
    if not _ShapelyPolygon(polygon).is_valid:
        problems.append(f"{where}: polygon is not simple")
        return None
    categories = frozenset(region.get("categories", []))
    if not categories:
        problems.append(f"{where}: no allowed categories")
        return None
    for category in sorted(categories):
        if not category_map.knows(category):
            problems.append(f"{where}: unknown category {category!r}")
    return InsertionRegion(polygon=polygon, allowed_categories=categories)


def load_catalog(root: str | Path) -> SceneCatalog:
    """Load and fully validate a catalog directory.

    Every referenced image is opened and checked; all problems are gathered
    and reported together, each naming the offending id.
    """
    root = Path(root)
    manifest_path = root / "catalog.json"
    if not manifest_path.is_file():
        raise CatalogError(f"no catalog manifest at {manifest_path}")
    try:
        data = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CatalogError(f"catalog manifest is not valid JSON: {exc}") from exc

    mapping = {str(k): str(v) for k, v in dict(data.get("category_map", {})).items()}
    evaluation = frozenset(str(c) for c in data.get("evaluation_categories", []))
    evaluation |= frozenset(mapping.values())
    category_map = CategoryMap(mapping=mapping, evaluation_categories=evaluation)

    problems: list[str] = []
    scenes: list[BackgroundScene] = []
    for entry in data.get("backgrounds", []):
        scene_id = str(entry.get("id", "<missing id>"))
        rel = entry.get("image")
        path = root / str(rel)
        if not path.is_file():
            problems.append(f"background {scene_id!r}: missing image {rel}")
            continue
        try:
            with Image.open(path) as img:
                width, height = img.size
        except Exception as exc:
            problems.append(f"background {scene_id!r}: cannot decode {rel} ({exc})")
            continue
        if width < MIN_BACKGROUND_SIDE or height < MIN_BACKGROUND_SIDE:
            problems.append(
                f"background {scene_id!r} too small: {width}x{height}, "
                f"minimum is {MIN_BACKGROUND_SIDE} on both sides"
            )
            continue
        regions = []
        for index, region in enumerate(entry.get("regions", [])):
            parsed = _validate_region(
                region, scene_id, index, width, height, category_map, problems
            )
            if parsed is not None:
                regions.append(parsed)
        scenes.append(
            BackgroundScene(
                id=scene_id, image=str(rel), width=width, height=height,
                regions=tuple(regions),
            )
        )

    targets: list[TargetObject] = []
    for entry in data.get("targets", []):
        target_id = str(entry.get("id", "<missing id>"))
        rel = entry.get("image")
        category = str(entry.get("category", ""))
        path = root / str(rel)
        if not path.is_file():
            problems.append(f"target {target_id!r}: missing image {rel}")
            continue
        try:
            with Image.open(path) as img:
                if "A" not in img.getbands():
                    problems.append(
                        f"target {target_id!r}: image {rel} has no alpha channel"
                    )
                    continue
                alpha = np.asarray(img.convert("RGBA"))[..., 3]
        except Exception as exc:
            problems.append(f"target {target_id!r}: cannot decode {rel} ({exc})")
            continue
        mask = alpha >= OPAQUE_ALPHA
        if not mask.any():
            problems.append(f"target {target_id!r}: alpha mask has no opaque pixels")
            continue
        ys, xs = np.nonzero(mask)
        native_w = int(xs.max() - xs.min() + 1)
        native_h = int(ys.max() - ys.min() + 1)
        if max(native_w, native_h) < MIN_TARGET_MAJOR:
            problems.append(
                f"target {target_id!r} too small: mask {native_w}x{native_h}, "
                f"major dimension must be >= {MIN_TARGET_MAJOR}"
            )
            continue
        if not category_map.knows(category):
            problems.append(f"target {target_id!r}: unknown category {category!r}")
            continue
        targets.append(
            TargetObject(
                id=target_id, image=str(rel), category=category,
                native_width=native_w, native_height=native_h,
            )
        )

    ids = [s.id for s in scenes]
    if len(set(ids)) != len(ids):
        problems.append("duplicate background ids")
    ids = [t.id for t in targets]
    if len(set(ids)) != len(ids):
        problems.append("duplicate target ids")

    if problems:
        raise CatalogError("catalog validation failed:\n" + "\n".join(problems))
    return SceneCatalog(
        root=root,
        scenes=tuple(sorted(scenes, key=lambda s: s.id)),
        targets=tuple(sorted(targets, key=lambda t: t.id)),
        category_map=category_map,
    )


def save_catalog(catalog: SceneCatalog, root: str | Path | None = None) -> Path:
    """Write the manifest back out (images are left untouched)."""
    root = Path(root) if root is not None else catalog.root
    payload = {
        "evaluation_categories": sorted(catalog.category_map.evaluation_categories),
        "category_map": dict(sorted(catalog.category_map.mapping.items())),
        "backgrounds": [
            {
                "id": scene.id,
                "image": scene.image,
                "regions": [
                    {
                        "polygon": [list(v) for v in region.polygon],
                        "categories": sorted(region.allowed_categories),
                    }
                    for region in scene.regions
                ],
            }
            for scene in catalog.scenes
        ],
        "targets": [
            {"id": t.id, "image": t.image, "category": t.category}
            for t in catalog.targets
        ],
    }
    path = root / "catalog.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Region geometry
# ---------------------------------------------------------------------------


@dataclass
class RegionMask:
    """Rasterized pixel set in scene coordinates.

    ``mask[y, x]`` covers scene pixel ``(x0 + x, y0 + y)``.
    """

    x0: int
    y0: int
    mask: np.ndarray
    _pixels: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def is_empty(self) -> bool:
        return self.count == 0

    def pixels(self) -> np.ndarray:
        """(N, 2) array of scene (x, y) coordinates in row-major order."""
        if self._pixels is None:
            ys, xs = np.nonzero(self.mask)
            self._pixels = np.column_stack((xs + self.x0, ys + self.y0))
        return self._pixels

    def clipped(self, x_min: int, y_min: int, x_max: int, y_max: int) -> "RegionMask":
        """Intersect with the half-open box [x_min, x_max) x [y_min, y_max)."""
        nx0 = max(self.x0, x_min)
        ny0 = max(self.y0, y_min)
        nx1 = min(self.x0 + self.mask.shape[1], x_max)
        ny1 = min(self.y0 + self.mask.shape[0], y_max)
        if nx0 >= nx1 or ny0 >= ny1:
            return RegionMask(nx0, ny0, np.zeros((0, 0), dtype=bool))
        sub = self.mask[
            ny0 - self.y0 : ny1 - self.y0, nx0 - self.x0 : nx1 - self.x0
        ]
        return RegionMask(nx0, ny0, sub.copy())


def rasterize_polygon(
    polygon: tuple[tuple[int, int], ...], width: int, height: int
) -> RegionMask:
    """Even-odd fill, a pixel included when its center lies inside.

    Pixel (x, y) covers [x, x+1) x [y, y+1) with center (x + 0.5, y + 0.5);
    half-integer centers against integer vertices keep the crossing test free
    of on-edge ambiguity for rectilinear polygons.
    """
    xs = [x for x, _ in polygon]
    ys = [y for _, y in polygon]
    x0 = max(0, math.floor(min(xs)))
    y0 = max(0, math.floor(min(ys)))
    x1 = min(width, math.ceil(max(xs)))
    y1 = min(height, math.ceil(max(ys)))
    if x0 >= x1 or y0 >= y1:
        return RegionMask(x0, y0, np.zeros((0, 0), dtype=bool))

    px = x0 + 0.5 + np.arange(x1 - x0)
    py = (y0 + 0.5 + np.arange(y1 - y0))[:, None]
    inside = np.zeros((y1 - y0, x1 - x0), dtype=bool)
    n = len(polygon)
    for i in range(n):
        xa, ya = polygon[i]
        xb, yb = polygon[(i + 1) % n]
        if ya == yb:
            continue
        crosses = (ya > py) != (yb > py)
        x_at = xa + (py - ya) * (xb - xa) / (yb - ya)
        inside ^= crosses & (px < x_at)
    return RegionMask(x0, y0, inside)


def effective_region(
    region: InsertionRegion,
    scene: BackgroundScene,
    margin: int = DEFAULT_MARGIN,
) -> RegionMask:
    """Region with everything within ``margin`` of the scene border removed.

    The result may be empty; clipping is idempotent.
    """
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    full = rasterize_polygon(region.polygon, scene.width, scene.height)
    return full.clipped(margin, margin, scene.width - margin, scene.height - margin)


def sample_insertion_point(
    region: RegionMask, rng: int | np.random.Generator
) -> tuple[int, int]:
    """Uniform pixel draw from the region, deterministic given the seed."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    points = region.pixels()
    if len(points) == 0:
        raise NoValidLocationError("insertion region has no pixels to sample")
    index = int(rng.integers(len(points)))
    return int(points[index, 0]), int(points[index, 1])
