"""Prediction-to-ground-truth matching and per-cell aggregation.

Predictions that do not overlap the target mask at all are discarded before
scoring.  Per probe, the top prediction is the overlap-surviving prediction
with the highest confidence regardless of label; the accurate prediction is
the same argmax restricted to the collapsed ground-truth category.  Ties
break by higher IoU, then lexicographically smaller label, then input order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import UndefinedIouError
from .protocol import PredictionRecord

__all__ = [
    "ScoredHit",
    "MatchedResult",
    "CellMetrics",
    "iou",
    "filter_overlapping",
    "match",
    "aggregate",
    "write_cells_csv",
    "read_cells_csv",
]

CELL_CSV_COLUMNS = ("size", "dx", "dy", "n", "r_t", "r_a", "c_t", "c_a", "s_t", "s_a")


def iou(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        raise UndefinedIouError("IoU is undefined for two empty masks")
    return int(np.logical_and(a, b).sum()) / union


def filter_overlapping(
    predictions: Sequence[PredictionRecord], gt_mask: np.ndarray
) -> list[PredictionRecord]:
    """Keep predictions sharing at least one pixel with the ground truth."""
    kept = []
    for record in predictions:
        mask = record.decode_mask()
        if mask.shape != gt_mask.shape:
            raise ValueError(
                f"prediction for {record.probe_id!r} is {mask.shape}, "
                f"ground truth is {gt_mask.shape}"
            )
        if np.logical_and(mask, gt_mask).any():
            kept.append(record)
    return kept


@dataclass(frozen=True)
class ScoredHit:
    confidence: float
    iou: float
    label: str


@dataclass(frozen=True)
class MatchedResult:
    probe_id: str
    top: ScoredHit | None
    accurate: ScoredHit | None


def _beats(cand: tuple[float, float, str], incumbent: tuple[float, float, str]) -> bool:
    if cand[0] != incumbent[0]:
        return cand[0] > incumbent[0]
    if cand[1] != incumbent[1]:
        return cand[1] > incumbent[1]
    if cand[2] != incumbent[2]:
        return cand[2] < incumbent[2]
    return False  # equal on all keys: the earlier record stays


def match(
    probe_id: str,
    predictions: Sequence[PredictionRecord],
    gt_mask: np.ndarray,
    gt_category: str,
) -> MatchedResult:
    best: tuple[float, float, str] | None = None
    best_accurate: tuple[float, float, str] | None = None
    for record in predictions:
        mask = record.decode_mask()
        if mask.shape != gt_mask.shape:
            raise ValueError(
                f"prediction for {record.probe_id!r} is {mask.shape}, "
                f"ground truth is {gt_mask.shape}"
            )
        if not np.logical_and(mask, gt_mask).any():
            continue
        cand = (record.confidence, iou(mask, gt_mask), record.label)
        if best is None or _beats(cand, best):
            best = cand
        if record.label == gt_category and (
            best_accurate is None or _beats(cand, best_accurate)
        ):
            best_accurate = cand
    return MatchedResult(
        probe_id=probe_id,
        top=ScoredHit(*best) if best else None,
        accurate=ScoredHit(*best_accurate) if best_accurate else None,
    )


@dataclass(frozen=True)
class CellMetrics:
    size: float
    dx: int
    dy: int
    n: int
    r_t: float
    r_a: float
    c_t: float | None
    c_a: float | None
    s_t: float | None
    s_a: float | None


def _mean(values: list[float]) -> float | None:
    # fsum keeps aggregation exactly permutation-invariant
    return math.fsum(values) / len(values) if values else None


def aggregate(
    grouped: Mapping[tuple[float, int, int], Sequence[MatchedResult]],
) -> list[CellMetrics]:
    """Reduce matched results into one :class:`CellMetrics` per offset cell.

    Rates are over all probes in the cell; confidence/IoU means are over
    probes with a qualifying prediction only, and absent when there are none.
    """
    cells = []
    for key in sorted(grouped):
        results = list(grouped[key])
        if not results:
            raise ValueError(f"cell {key} has no probes")
        size, dx, dy = key
        tops = [r.top for r in results if r.top is not None]
        accs = [r.accurate for r in results if r.accurate is not None]
        cells.append(
            CellMetrics(
                size=size,
                dx=dx,
                dy=dy,
                n=len(results),
                r_t=len(tops) / len(results),
                r_a=len(accs) / len(results),
                c_t=_mean([h.confidence for h in tops]),
                c_a=_mean([h.confidence for h in accs]),
                s_t=_mean([h.iou for h in tops]),
                s_a=_mean([h.iou for h in accs]),
            )
        )
    return cells


def _format(value: float | None) -> str:
    return "" if value is None else repr(value)


def write_cells_csv(cells: Iterable[CellMetrics], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CELL_CSV_COLUMNS)
        for cell in cells:
            writer.writerow(
                [
                    repr(cell.size),
                    cell.dx,
                    cell.dy,
                    cell.n,
                    repr(cell.r_t),
                    repr(cell.r_a),
                    _format(cell.c_t),
                    _format(cell.c_a),
                    _format(cell.s_t),
                    _format(cell.s_a),
                ]
            )


def read_cells_csv(path: str | Path) -> list[CellMetrics]:
    cells = []
    with Path(path).open(newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            cells.append(
                CellMetrics(
                    size=float(row["size"]),
                    dx=int(row["dx"]),
                    dy=int(row["dy"]),
                    n=int(row["n"]),
                    r_t=float(row["r_t"]),
                    r_a=float(row["r_a"]),
                    c_t=float(row["c_t"]) if row["c_t"] else None,
                    c_a=float(row["c_a"]) if row["c_a"] else None,
                    s_t=float(row["s_t"]) if row["s_t"] else None,
                    s_a=float(row["s_a"]) if row["s_a"] else None,
                )
            )
    return cells
