from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from anisoprobe import rle
from anisoprobe.metrics import CellMetrics
from anisoprobe.reporting import (
    cell_grid,
    density_map,
    heatmap,
    read_heatmap_csv,
    write_density_map,
)


def _cell(dx, dy, r_t=0.8, c_t=0.5, size=0.05, n=10) -> CellMetrics:
    return CellMetrics(
        size=size, dx=dx, dy=dy, n=n,
        r_t=r_t, r_a=r_t / 2, c_t=c_t, c_a=c_t, s_t=0.66, s_a=None,
    )


def test_uniform_grid_is_constant():
    cells = [_cell(dx, dy) for dx in (0, 10, 30) for dy in (0, 10, 30)]
    dxs, dys, grid = cell_grid(cells, "r_t")
    assert dxs == [0, 10, 30] and dys == [0, 10, 30]
    assert np.all(grid == 0.8)


def test_absent_value_renders_as_nan_and_empty_csv_field(tmp_path):
    cells = [_cell(dx, dy) for dx in (0, 10) for dy in (0, 10)]
    cells[3] = CellMetrics(
        size=0.05, dx=10, dy=10, n=4,
        r_t=0.0, r_a=0.0, c_t=None, c_a=None, s_t=None, s_a=None,
    )
    png = tmp_path / "h.png"
    csv_path = tmp_path / "h.csv"
    _, _, grid = heatmap(cells, "c_t", png, csv_path)
    assert np.isnan(grid[1, 1])
    assert png.stat().st_size > 0
    text = csv_path.read_text().splitlines()
    assert text[-1].endswith(",")  # absent cell is an empty field


def test_heatmap_csv_round_trips_exactly(tmp_path):
    rng = np.random.default_rng(51)
    cells = [
        _cell(dx, dy, r_t=float(rng.random()), c_t=float(rng.random()))
        for dx in (0, 2, 4, 7) for dy in (0, 2, 4, 7)
    ]
    for metric in ("r_t", "c_t"):
        _, _, grid = heatmap(
            cells, metric, tmp_path / f"{metric}.png", tmp_path / f"{metric}.csv"
        )
        _, _, reread = read_heatmap_csv(tmp_path / f"{metric}.csv")
        np.testing.assert_array_equal(grid, reread)


def test_unknown_metric_rejected(tmp_path):
    with pytest.raises(ValueError, match="unknown metric"):
        cell_grid([_cell(0, 0)], "accuracy")


def test_mixed_size_classes_rejected():
    with pytest.raises(ValueError, match="size"):
        cell_grid([_cell(0, 0, size=0.05), _cell(0, 0, size=0.12)], "r_t")


def _full_mask(h, w):
    return rle.encode(np.ones((h, w), dtype=bool))


def test_density_full_frame_mask_counts_everywhere():
    density = density_map([((480, 360), [_full_mask(480, 360)])], standard_size=64)
    assert density.images == 1
    assert np.all(density.grid == 1)


def test_density_partition_sums_to_frame():
    top = np.zeros((100, 80), dtype=bool)
    top[:50] = True
    bottom = ~top
    density = density_map(
        [((100, 80), [rle.encode(top), rle.encode(bottom)])], standard_size=64
    )
    assert set(np.unique(density.grid)) == {1}
    assert density.grid.sum() == 64 * 64


def test_density_overlapping_centered_boxes():
    def centered(h, w):
        mask = np.zeros((h, w), dtype=bool)
        mask[h // 4 : 3 * h // 4, w // 4 : 3 * w // 4] = True
        return rle.encode(mask)

    annotations = [((200, 200), [centered(200, 200)]) for _ in range(3)]
    density = density_map(annotations, standard_size=64)
    assert density.images == 3
    assert density.grid[32, 32] == 3
    assert density.grid[0, 0] == 0
    assert density.grid.max() == 3


def test_density_additive_over_disjoint_annotation_sets():
    rng = np.random.default_rng(52)

    def random_set(k):
        out = []
        for _ in range(k):
            h, w = int(rng.integers(30, 90)), int(rng.integers(30, 90))
            masks = [
                rle.encode(rng.random((h, w)) < 0.3)
                for _ in range(int(rng.integers(1, 4)))
            ]
            out.append(((h, w), masks))
        return out

    a = random_set(3)
    b = random_set(4)
    da = density_map(a, standard_size=48)
    db = density_map(b, standard_size=48)
    dab = density_map(a + b, standard_size=48)
    np.testing.assert_array_equal(dab.grid, da.grid + db.grid)
    assert dab.images == da.images + db.images


def test_density_written_as_16_bit_png(tmp_path):
    density = density_map([((64, 64), [_full_mask(64, 64)])], standard_size=32)
    write_density_map(density, tmp_path / "d.png", tmp_path / "d.csv")
    with Image.open(tmp_path / "d.png") as img:
        arr = np.asarray(img)
    assert arr.dtype in (np.uint16, np.int32)
    np.testing.assert_array_equal(arr.astype(np.int64), density.grid)
    rows = (tmp_path / "d.csv").read_text().splitlines()
    assert len(rows) == 32 and rows[0].split(",")[0] == "1"
