"""Target resizing and alpha compositing with exact ground-truth bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .catalog import OPAQUE_ALPHA
from .errors import DegenerateTargetError, OutOfBoundsError

__all__ = [
    "DEFAULT_SIZES",
    "DEFAULT_CROP",
    "round_half_up",
    "target_major_px",
    "CompositeSpec",
    "ResizedTarget",
    "TestImage",
    "resize_target",
    "composite",
    "render_composite",
    "paste_origin",
    "placed_bbox",
]

DEFAULT_SIZES = (0.05, 0.08, 0.12, 0.18)
DEFAULT_CROP = 800


@dataclass(frozen=True)
class CompositeSpec:
    """One composite: which target goes where, and at what size."""

    scene_id: str
    target_id: str
    point: tuple[int, int]
    size_proportion: float
    crop_dimension: int = DEFAULT_CROP

    def __post_init__(self) -> None:
        if not 0.0 < self.size_proportion < 1.0:
            raise ValueError(
                f"size proportion must be in (0, 1), got {self.size_proportion}"
            )
        if self.crop_dimension < 1:
            raise ValueError(
                f"crop dimension must be >= 1, got {self.crop_dimension}"
            )


def round_half_up(x: float) -> int:
    """Round halves away from zero; valid for the non-negative values used here."""
    return int(math.floor(x + 0.5))


def target_major_px(size_proportion: float, crop_dimension: int) -> int:
    """Major dimension in pixels for a target at the given proportion."""
    return round_half_up(size_proportion * crop_dimension)


@dataclass(frozen=True)
class ResizedTarget:
    """RGBA cutout scaled for insertion.

    ``bbox`` is the tight half-open bounds of the thresholded alpha mask in
    cutout coordinates.  Alpha is zeroed outside ``bbox`` so that compositing
    cannot touch background pixels beyond the reported ground-truth bounds.
    """

    rgba: np.ndarray  # (h, w, 4) uint8
    bbox: tuple[int, int, int, int]

    @property
    def width(self) -> int:
        return self.rgba.shape[1]

    @property
    def height(self) -> int:
        return self.rgba.shape[0]

    @property
    def mask(self) -> np.ndarray:
        return self.rgba[..., 3] >= OPAQUE_ALPHA

    @property
    def bbox_width(self) -> int:
        return self.bbox[2] - self.bbox[0]

    @property
    def bbox_height(self) -> int:
        return self.bbox[3] - self.bbox[1]


@dataclass
class TestImage:
    """A composited scene plus its exact ground truth."""

    image: np.ndarray  # (H, W, 3) uint8
    mask: np.ndarray  # (H, W) bool
    bbox: tuple[int, int, int, int]  # half-open, scene coordinates
    sub_category: str
    category: str


def _tight_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(mask)
    return int(xs.min()), int(ys.min()), int(xs.max() + 1), int(ys.max() + 1)


def resize_target(
    rgba: np.ndarray, size_proportion: float, crop_dimension: int
) -> ResizedTarget:
    """Scale a cutout so its mask's major dimension hits the configured size.

    The cutout is cropped to the tight alpha bounds, scaled uniformly so the
    major dimension equals ``round(size_proportion * crop_dimension)``, and
    resampled bilinearly.  The ground-truth mask is the resampled alpha
    thresholded at half opacity.
    """
    if not 0.0 < size_proportion < 1.0:
        raise ValueError(f"size proportion must be in (0, 1), got {size_proportion}")
    if crop_dimension < 1:
        raise ValueError(f"crop dimension must be >= 1, got {crop_dimension}")
    rgba = np.asarray(rgba)
    if rgba.ndim != 3 or rgba.shape[2] != 4 or rgba.dtype != np.uint8:
        raise ValueError("target must be an (h, w, 4) uint8 array")

    native = rgba[..., 3] >= OPAQUE_ALPHA
    if not native.any():
        raise DegenerateTargetError("target has no opaque pixels")
    x0, y0, x1, y1 = _tight_bbox(native)
    cut = rgba[y0:y1, x0:x1]
    cut_h, cut_w = cut.shape[:2]

    desired = target_major_px(size_proportion, crop_dimension)
    if desired < 1:
        raise DegenerateTargetError(
            f"target degenerates: desired major dimension {desired} < 1"
        )
    scale = desired / max(cut_w, cut_h)
    new_w = desired if cut_w >= cut_h else round_half_up(cut_w * scale)
    new_h = desired if cut_h > cut_w else round_half_up(cut_h * scale)
    if min(new_w, new_h) < 1:
        raise DegenerateTargetError(
            f"target degenerates to {new_w}x{new_h} at proportion {size_proportion}"
        )

    resized = np.asarray(
        Image.fromarray(cut, "RGBA").resize((new_w, new_h), Image.Resampling.BILINEAR)
    ).copy()
    mask = resized[..., 3] >= OPAQUE_ALPHA
    if not mask.any():
        raise DegenerateTargetError("target mask vanished after resizing")
    bx0, by0, bx1, by1 = _tight_bbox(mask)
    # Confine blending to the reported bounds: bit-identical background outside.
    support = np.zeros_like(mask)
    support[by0:by1, bx0:bx1] = True
    resized[..., 3] = np.where(support, resized[..., 3], 0)
    return ResizedTarget(rgba=resized, bbox=(bx0, by0, bx1, by1))


def paste_origin(resized: ResizedTarget, point: tuple[int, int]) -> tuple[int, int]:
    """Top-left cutout placement for a center-anchored insertion point."""
    return point[0] - resized.width // 2, point[1] - resized.height // 2


def placed_bbox(
    resized: ResizedTarget, point: tuple[int, int]
) -> tuple[int, int, int, int]:
    """Ground-truth bounds in scene coordinates for the given insertion point."""
    ox, oy = paste_origin(resized, point)
    x0, y0, x1, y1 = resized.bbox
    return ox + x0, oy + y0, ox + x1, oy + y1


def composite(
    background: np.ndarray,
    resized: ResizedTarget,
    point: tuple[int, int],
    sub_category: str = "",
    category: str = "",
) -> TestImage:
    """Source-over blend of the cutout into the background at ``point``.

    Continuous alpha drives the blend; the ground truth is the thresholded
    mask and its tight bounds.  Blended values round halves away from zero.
    """
    background = np.asarray(background)
    if background.ndim != 3 or background.shape[2] != 3 or background.dtype != np.uint8:
        raise ValueError("background must be an (H, W, 3) uint8 array")
    bg_h, bg_w = background.shape[:2]
    ox, oy = paste_origin(resized, point)
    if ox < 0 or oy < 0 or ox + resized.width > bg_w or oy + resized.height > bg_h:
        raise OutOfBoundsError(
            f"target extent [{ox}, {ox + resized.width}) x [{oy}, {oy + resized.height}) "
            f"exceeds background {bg_w}x{bg_h}"
        )

    out = background.copy()
    patch = background[oy : oy + resized.height, ox : ox + resized.width]
    alpha = resized.rgba[..., 3:4].astype(np.float64) / 255.0
    src = resized.rgba[..., :3].astype(np.float64)
    blended = np.floor(alpha * src + (1.0 - alpha) * patch + 0.5).astype(np.uint8)
    out[oy : oy + resized.height, ox : ox + resized.width] = blended

    mask = np.zeros((bg_h, bg_w), dtype=bool)
    mask[oy : oy + resized.height, ox : ox + resized.width] = resized.mask
    if not mask.any():
        raise DegenerateTargetError("composited ground-truth mask is empty")
    return TestImage(
        image=out,
        mask=mask,
        bbox=placed_bbox(resized, point),
        sub_category=sub_category,
        category=category,
    )


def render_composite(catalog, spec: CompositeSpec) -> TestImage:
    """One-shot render of a :class:`CompositeSpec` from catalog assets.

    Loads, resizes, and composites on every call; batch renderers should
    cache resized targets and backgrounds themselves.
    """
    scene = catalog.scene(spec.scene_id)
    target = catalog.target(spec.target_id)
    with Image.open(catalog.path(scene.image)) as img:
        background = np.asarray(img.convert("RGB"))
    with Image.open(catalog.path(target.image)) as img:
        rgba = np.asarray(img.convert("RGBA"))
    resized = resize_target(rgba, spec.size_proportion, spec.crop_dimension)
    return composite(
        background,
        resized,
        spec.point,
        sub_category=target.category,
        category=catalog.category_map.collapse(target.category),
    )
