from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from anisoprobe.compositing import (
    CompositeSpec,
    ResizedTarget,
    composite,
    paste_origin,
    placed_bbox,
    render_composite,
    resize_target,
    round_half_up,
    target_major_px,
)
from anisoprobe.errors import DegenerateTargetError, OutOfBoundsError
from conftest import make_background, make_target_rgba


def _opaque_rect(width: int, height: int, color=(10, 200, 30)) -> np.ndarray:
    rgba = np.zeros((height, width, 4), dtype=np.uint8)
    rgba[..., 0] = color[0]
    rgba[..., 1] = color[1]
    rgba[..., 2] = color[2]
    rgba[..., 3] = 255
    return rgba


def test_round_half_up():
    assert round_half_up(39.5) == 40
    assert round_half_up(40.4999) == 40
    assert round_half_up(0.5) == 1
    assert round_half_up(96.0) == 96


@pytest.mark.parametrize(
    "proportion,expected", [(0.05, 40), (0.08, 64), (0.12, 96), (0.18, 144)]
)
def test_paper_size_ladder(proportion, expected):
    assert target_major_px(proportion, 800) == expected


def test_resize_opaque_rect_exact_bbox():
    resized = resize_target(_opaque_rect(200, 100), 0.12, 800)
    assert (resized.bbox_width, resized.bbox_height) == (96, 48)
    assert resized.rgba.shape[:2] == (48, 96)


def test_resize_minor_axis_on_height():
    resized = resize_target(_opaque_rect(100, 200), 0.05, 800)
    assert (resized.bbox_width, resized.bbox_height) == (20, 40)


def test_resize_degenerate_minor_dimension():
    rgba = np.zeros((4, 300, 4), dtype=np.uint8)
    rgba[1, :, 3] = 255  # one-pixel-high sliver
    with pytest.raises(DegenerateTargetError):
        resize_target(rgba, 0.05, 800)  # minor scales to round(1 * 40/300) = 0


def test_resize_transparent_target_rejected():
    with pytest.raises(DegenerateTargetError, match="opaque"):
        resize_target(np.zeros((80, 80, 4), dtype=np.uint8), 0.05, 800)


def test_fully_opaque_composite_is_bit_exact_inside():
    background = make_background(300, 300, 3)
    resized = resize_target(_opaque_rect(160, 160), 0.05, 800)
    image = composite(background, resized, (150, 150), "cat", "cat")
    x0, y0, x1, y1 = image.bbox
    assert (x1 - x0, y1 - y0) == (40, 40)
    np.testing.assert_array_equal(
        image.image[y0:y1, x0:x1][image.mask[y0:y1, x0:x1]],
        np.broadcast_to(
            np.array([10, 200, 30], dtype=np.uint8),
            (int(image.mask.sum()), 3),
        ),
    )


def test_half_alpha_blend_matches_exact_rational_arithmetic():
    rgba = np.zeros((4, 4, 4), dtype=np.uint8)
    rgba[..., 0] = 200
    rgba[..., 1] = 60
    rgba[..., 2] = 240
    rgba[..., 3] = 255
    rgba[1:3, 1:3, 3] = 128  # half-opacity core
    resized = ResizedTarget(rgba=rgba, bbox=(0, 0, 4, 4))
    background = make_background(16, 16, 1)
    image = composite(background, resized, (8, 8))
    ox, oy = paste_origin(resized, (8, 8))
    for yy in range(4):
        for xx in range(4):
            a = int(rgba[yy, xx, 3])
            for c, s in enumerate((200, 60, 240)):
                b = int(background[oy + yy, ox + xx, c])
                exact = (
                    Fraction(a, 255) * s + Fraction(255 - a, 255) * b + Fraction(1, 2)
                )
                assert image.image[oy + yy, ox + xx, c] == exact.__floor__()


def test_pixels_outside_bbox_untouched():
    rng = np.random.default_rng(5)
    for trial in range(10):
        background = make_background(400, 400, trial)
        target = make_target_rgba(
            int(rng.integers(60, 200)),
            int(rng.integers(60, 200)),
            tuple(int(v) for v in rng.integers(0, 256, 3)),
            soft_edge=True,
        )
        proportion = float(rng.choice([0.05, 0.08, 0.12, 0.18]))
        resized = resize_target(target, proportion, 800)
        image = composite(background, resized, (200, 200))
        x0, y0, x1, y1 = image.bbox
        outside = np.ones(background.shape[:2], dtype=bool)
        outside[y0:y1, x0:x1] = False
        np.testing.assert_array_equal(
            image.image[outside], background[outside]
        )
        assert image.mask.sum() > 0
        major = max(x1 - x0, y1 - y0)
        assert abs(major - round_half_up(proportion * 800)) <= 1


def test_composite_deterministic():
    background = make_background(300, 300, 9)
    resized = resize_target(make_target_rgba(120, 90, (1, 2, 3)), 0.08, 800)
    a = composite(background, resized, (150, 140))
    b = composite(background, resized, (150, 140))
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.mask, b.mask)
    assert a.bbox == b.bbox


def test_out_of_bounds_rejected():
    background = make_background(100, 100, 2)
    resized = resize_target(_opaque_rect(160, 160), 0.18, 800)
    with pytest.raises(OutOfBoundsError):
        composite(background, resized, (30, 50))


def test_placed_bbox_is_center_anchored():
    resized = resize_target(_opaque_rect(160, 80), 0.05, 800)  # 40 x 20
    x0, y0, x1, y1 = placed_bbox(resized, (100, 100))
    assert (x0 + x1) // 2 == 100
    assert (y0 + y1) // 2 == 100


def test_composite_spec_validation():
    with pytest.raises(ValueError):
        CompositeSpec("s", "t", (10, 10), 1.5)
    with pytest.raises(ValueError):
        CompositeSpec("s", "t", (10, 10), 0.05, crop_dimension=0)


def test_render_composite_from_catalog(small_catalog):
    from anisoprobe.catalog import load_catalog

    catalog = load_catalog(small_catalog)
    spec = CompositeSpec("scene-00", "gull", (800, 800), 0.08)
    image = render_composite(catalog, spec)
    assert image.category == "bird" and image.sub_category == "bird_flying"
    x0, y0, x1, y1 = image.bbox
    assert max(x1 - x0, y1 - y0) == 64
    assert image.image.shape == (1600, 1600, 3)
