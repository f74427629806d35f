"""Shared fixtures: synthetic catalogs with known geometry."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

CATEGORY_MAP = {"bird_flying": "bird", "bird_walking": "bird", "ship": "boat"}
EVALUATION_CATEGORIES = ["bird", "boat", "car", "cat", "dog"]

# (target id, sub-category), all compatible with the default full-category region
TARGET_ROSTER = [
    ("gull", "bird_flying"),
    ("heron", "bird_walking"),
    ("dinghy", "ship"),
    ("tabby", "cat"),
    ("collie", "dog"),
    ("sedan", "car"),
]


def make_background(width: int, height: int, seed: int) -> np.ndarray:
    """Deterministic low-frequency RGB pattern; compresses small as PNG."""
    ys = np.arange(height)[:, None]
    xs = np.arange(width)[None, :]
    r = ((ys * (seed * 7 + 3)) // 16 + xs // 8) % 256
    g = ((xs * (seed * 5 + 1)) // 16 + ys // 8) % 256
    b = ((xs + ys) // 4 + seed * 41) % 256
    return np.stack([r, g, b], axis=-1).astype(np.uint8)


def make_target_rgba(
    width: int,
    height: int,
    color: tuple[int, int, int],
    shape: str = "ellipse",
    soft_edge: bool = False,
) -> np.ndarray:
    """Opaque blob on a transparent canvas with a one-pixel transparent border."""
    rgba = np.zeros((height, width, 4), dtype=np.uint8)
    ys = np.arange(height)[:, None]
    xs = np.arange(width)[None, :]
    cy, cx = (height - 1) / 2, (width - 1) / 2
    if shape == "ellipse":
        ry, rx = (height - 2) / 2, (width - 2) / 2
        inside = ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
    else:
        inside = (
            (ys >= 1) & (ys < height - 1) & (xs >= 1) & (xs < width - 1)
        )
    rgba[..., 0][inside] = color[0]
    rgba[..., 1][inside] = color[1]
    rgba[..., 2][inside] = color[2]
    rgba[..., 3][inside] = 255
    if soft_edge:
        ring = inside & ~(
            np.roll(inside, 1, 0) & np.roll(inside, -1, 0)
            & np.roll(inside, 1, 1) & np.roll(inside, -1, 1)
        )
        rgba[..., 3][ring] = 160
    return rgba


def build_catalog(
    root: Path,
    n_scenes: int = 2,
    targets: list[tuple[str, str]] | None = None,
    scene_size: tuple[int, int] = (1600, 1600),
    region_box: tuple[int, int, int, int] = (440, 440, 1160, 1160),
) -> Path:
    """Write a complete, valid catalog under ``root`` and return it.

    Each scene gets one rectangular region allowing every roster category.
    """
    targets = targets if targets is not None else TARGET_ROSTER
    (root / "backgrounds").mkdir(parents=True, exist_ok=True)
    (root / "targets").mkdir(parents=True, exist_ok=True)
    width, height = scene_size
    x0, y0, x1, y1 = region_box
    all_categories = sorted({cat for _, cat in targets})

    backgrounds = []
    for index in range(n_scenes):
        scene_id = f"scene-{index:02d}"
        rel = f"backgrounds/{scene_id}.png"
        Image.fromarray(make_background(width, height, index)).save(root / rel)
        backgrounds.append(
            {
                "id": scene_id,
                "image": rel,
                "regions": [
                    {
                        "polygon": [[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
                        "categories": all_categories,
                    }
                ],
            }
        )

    target_rows = []
    palette = [(200, 40, 40), (40, 200, 40), (40, 40, 200),
               (220, 180, 30), (30, 200, 220), (180, 60, 200)]
    for index, (target_id, category) in enumerate(targets):
        rel = f"targets/{target_id}.png"
        w = 160 + 8 * index
        h = 120 + 6 * index
        rgba = make_target_rgba(w, h, palette[index % len(palette)])
        Image.fromarray(rgba, "RGBA").save(root / rel)
        target_rows.append({"id": target_id, "image": rel, "category": category})

    manifest = {
        "evaluation_categories": EVALUATION_CATEGORIES,
        "category_map": CATEGORY_MAP,
        "backgrounds": backgrounds,
        "targets": target_rows,
    }
    (root / "catalog.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
    )
    return root


@pytest.fixture
def small_catalog(tmp_path: Path) -> Path:
    return build_catalog(tmp_path / "catalog", n_scenes=2, targets=TARGET_ROSTER[:3])


@pytest.fixture(scope="session")
def acceptance_catalog(tmp_path_factory: pytest.TempPathFactory) -> Path:
    root = tmp_path_factory.mktemp("acceptance-catalog")
    return build_catalog(root, n_scenes=4, targets=TARGET_ROSTER)
