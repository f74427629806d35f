"""Stage orchestration: plan, generate, mock-run, evaluate, report.

Stages communicate only through on-disk artifacts under the run directory::

    plan/       meta.json, test_images.jsonl, probes.jsonl, skips.jsonl
    exchange/   manifest.json, probes/<probe_id>.png   (for external detectors)
    preds/      shard-*.jsonl                           (detector output)
    eval/       cells.csv, summary.json
    report/     heatmap_<metric>_<size>.png / .csv

Everything except ``eval/summary.json`` (which carries a wall-clock stamp) is
a pure function of the catalog, the configuration, and the prediction files.
"""

from __future__ import annotations

import json
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from . import metrics as metrics_mod
from . import planner as planner_mod
from . import protocol, reporting
from .catalog import load_catalog
from .compositing import composite
from .config import RunConfig
from .errors import ProtocolError
from .planner import (
    CropWindow,
    ExperimentPlan,
    ProbeSpec,
    ResizeCache,
    SkipRecord,
    TestImageSpec,
)

PLAN_DIR = "plan"
EXCHANGE_DIR = "exchange"
EVAL_DIR = "eval"
REPORT_DIR = "report"


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "\n".join(_dump_line(r) for r in rows)
    path.write_text(text + ("\n" if text else ""), encoding="utf-8")


def _read_jsonl(path: Path) -> list[dict]:
    if not path.is_file():
        return []
    return [
        json.loads(line)
        for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]


# ---------------------------------------------------------------------------
# plan
# ---------------------------------------------------------------------------


def write_plan(plan: ExperimentPlan, run_dir: str | Path) -> Path:
    plan_dir = Path(run_dir) / PLAN_DIR
    plan_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "sizes": list(plan.sizes),
        "crop_dimension": plan.crop_dimension,
        "margin": plan.margin,
        "master_offsets": list(plan.master_offsets),
        "seed": plan.seed,
        "replicates": plan.replicates,
        "grids": {
            planner_mod.size_label(s): list(plan.grid_for(s)) for s in plan.sizes
        },
        "n_test_images": len(plan.test_images),
        "n_probes": len(plan.probes),
        "n_skips": len(plan.skips),
    }
    (plan_dir / "meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8"
    )
    _write_jsonl(
        plan_dir / "test_images.jsonl",
        [
            {
                "test_image_id": t.test_image_id,
                "scene_id": t.scene_id,
                "target_id": t.target_id,
                "replicate": t.replicate,
                "size_proportion": t.size_proportion,
                "major_px": t.major_px,
                "point": list(t.point),
                "bbox": list(t.bbox),
                "sub_category": t.sub_category,
                "category": t.category,
            }
            for t in plan.test_images
        ],
    )
    _write_jsonl(
        plan_dir / "probes.jsonl",
        [
            {
                "probe_id": p.probe_id,
                "test_image_id": p.test_image_id,
                "dx": p.dx,
                "dy": p.dy,
                "corner": p.corner,
                "window": [p.window.x0, p.window.y0, p.window.side],
            }
            for p in plan.probes
        ],
    )
    _write_jsonl(
        plan_dir / "skips.jsonl",
        [
            {
                "kind": s.kind,
                "scene_id": s.scene_id,
                "target_id": s.target_id,
                "detail": s.detail,
            }
            for s in plan.skips
        ],
    )
    return plan_dir


def read_plan(run_dir: str | Path) -> ExperimentPlan:
    plan_dir = Path(run_dir) / PLAN_DIR
    meta_path = plan_dir / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(
            f"no plan at {plan_dir}; run the plan stage first"
        )
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    test_images = tuple(
        TestImageSpec(
            test_image_id=r["test_image_id"],
            scene_id=r["scene_id"],
            target_id=r["target_id"],
            replicate=int(r["replicate"]),
            size_proportion=float(r["size_proportion"]),
            major_px=int(r["major_px"]),
            point=tuple(r["point"]),
            bbox=tuple(r["bbox"]),
            sub_category=r["sub_category"],
            category=r["category"],
        )
        for r in _read_jsonl(plan_dir / "test_images.jsonl")
    )
    probes = tuple(
        ProbeSpec(
            probe_id=r["probe_id"],
            test_image_id=r["test_image_id"],
            dx=int(r["dx"]),
            dy=int(r["dy"]),
            corner=r["corner"],
            window=CropWindow(*r["window"]),
        )
        for r in _read_jsonl(plan_dir / "probes.jsonl")
    )
    skips = tuple(
        SkipRecord(
            kind=r["kind"],
            scene_id=r["scene_id"],
            target_id=r["target_id"],
            detail=r["detail"],
        )
        for r in _read_jsonl(plan_dir / "skips.jsonl")
    )
    return ExperimentPlan(
        test_images=test_images,
        probes=probes,
        skips=skips,
        sizes=tuple(meta["sizes"]),
        crop_dimension=int(meta["crop_dimension"]),
        margin=int(meta["margin"]),
        master_offsets=tuple(meta["master_offsets"]),
        seed=int(meta["seed"]),
        replicates=int(meta["replicates"]),
    )


def run_plan(config: RunConfig) -> ExperimentPlan:
    catalog = load_catalog(config.catalog_root)
    plan = planner_mod.plan_experiment(
        catalog,
        sizes=config.sizes,
        seed=config.seed,
        crop_dimension=config.crop_dimension,
        margin=config.margin,
        master_offsets=config.master_offsets,
        replicates=config.replicates,
    )
    write_plan(plan, config.output_root)
    return plan


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def _probes_by_image(plan: ExperimentPlan) -> dict[str, list[ProbeSpec]]:
    grouped: dict[str, list[ProbeSpec]] = defaultdict(list)
    for probe in plan.probes:
        grouped[probe.test_image_id].append(probe)
    return grouped


def _generate_chunk(
    catalog_root: str,
    run_dir: str,
    crop_dimension: int,
    image_specs: list[TestImageSpec],
    probe_groups: list[list[ProbeSpec]],
) -> list[tuple[str, str]]:
    catalog = load_catalog(catalog_root)
    cache = ResizeCache(catalog, crop_dimension)
    probes_root = Path(run_dir) / EXCHANGE_DIR / protocol.PROBES_DIR
    probes_root.mkdir(parents=True, exist_ok=True)
    backgrounds: dict[str, np.ndarray] = {}
    entries = []
    for spec, probes in zip(image_specs, probe_groups):
        if spec.scene_id not in backgrounds:
            scene = catalog.scene(spec.scene_id)
            with Image.open(catalog.path(scene.image)) as img:
                backgrounds[spec.scene_id] = np.asarray(img.convert("RGB"))
        resized = cache.resized(spec.target_id, spec.size_proportion)
        test_image = composite(
            backgrounds[spec.scene_id],
            resized,
            spec.point,
            sub_category=spec.sub_category,
            category=spec.category,
        )
        for probe in probes:
            w = probe.window
            crop = test_image.image[w.y0 : w.y1, w.x0 : w.x1]
            rel = f"{protocol.PROBES_DIR}/{probe.probe_id}.png"
            Image.fromarray(crop).save(probes_root / f"{probe.probe_id}.png")
            entries.append((probe.probe_id, rel))
    return entries


def run_generate(config: RunConfig) -> protocol.ProbeManifest:
    """Materialize probe crops and the detector-facing manifest."""
    plan = read_plan(config.output_root)
    grouped = _probes_by_image(plan)
    specs = [t for t in plan.test_images if grouped.get(t.test_image_id)]
    groups = [grouped[t.test_image_id] for t in specs]

    if config.workers > 1 and len(specs) > 1:
        chunks = np.array_split(np.arange(len(specs)), config.workers)
        results = []
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [
                pool.submit(
                    _generate_chunk,
                    str(config.catalog_root),
                    str(config.output_root),
                    config.crop_dimension,
                    [specs[i] for i in chunk],
                    [groups[i] for i in chunk],
                )
                for chunk in chunks
                if len(chunk)
            ]
            for future in futures:
                results.extend(future.result())
    else:
        results = _generate_chunk(
            str(config.catalog_root),
            str(config.output_root),
            config.crop_dimension,
            specs,
            groups,
        )

    side = config.crop_dimension
    entries = [
        protocol.ManifestEntry(probe_id=pid, image=rel, width=side, height=side)
        for pid, rel in sorted(results)
    ]
    meta = {
        "seed": plan.seed,
        "sizes": list(plan.sizes),
        "crop_dimension": plan.crop_dimension,
        "master_offsets": list(plan.master_offsets),
    }
    return protocol.write_manifest(
        entries, Path(config.output_root) / EXCHANGE_DIR, meta
    )


# ---------------------------------------------------------------------------
# mock-run
# ---------------------------------------------------------------------------


def gt_mask_in_window(
    resized_mask: np.ndarray,
    bbox: tuple[int, int, int, int],
    resized_bbox: tuple[int, int, int, int],
    window: CropWindow,
) -> np.ndarray:
    """Ground-truth mask at crop resolution, synthesized without pixels.

    ``bbox`` is the placed ground truth in scene coordinates, ``resized_bbox``
    the same box in cutout coordinates; the window is guaranteed to contain it.
    """
    out = np.zeros((window.side, window.side), dtype=bool)
    x0, y0, x1, y1 = bbox
    rx0, ry0, rx1, ry1 = resized_bbox
    out[y0 - window.y0 : y1 - window.y0, x0 - window.x0 : x1 - window.x0] = (
        resized_mask[ry0:ry1, rx0:rx1]
    )
    return out


def run_mock(config: RunConfig, profile: protocol.DegradationProfile) -> int:
    """Run the built-in detector over the plan; returns the probe count."""
    plan = read_plan(config.output_root)
    catalog = load_catalog(config.catalog_root)
    cache = ResizeCache(catalog, config.crop_dimension)
    images = {t.test_image_id: t for t in plan.test_images}

    by_probe: dict[str, list[protocol.PredictionRecord]] = {}
    for probe in plan.probes:
        spec = images[probe.test_image_id]
        resized = cache.resized(spec.target_id, spec.size_proportion)
        gt = gt_mask_in_window(resized.mask, spec.bbox, resized.bbox, probe.window)
        by_probe[probe.probe_id] = protocol.mock_detect(
            probe.probe_id,
            probe.dx,
            probe.dy,
            gt,
            spec.category,
            profile,
            config.seed,
        )
    protocol.write_predictions(config.output_root, by_probe)
    return len(by_probe)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _match_chunk(
    catalog_root: str,
    crop_dimension: int,
    probe_rows: list[tuple[ProbeSpec, TestImageSpec]],
    records_by_probe: dict[str, list[protocol.PredictionRecord]],
) -> list[tuple[tuple[float, int, int], metrics_mod.MatchedResult]]:
    catalog = load_catalog(catalog_root)
    cache = ResizeCache(catalog, crop_dimension)
    out = []
    for probe, spec in probe_rows:
        resized = cache.resized(spec.target_id, spec.size_proportion)
        gt = gt_mask_in_window(resized.mask, spec.bbox, resized.bbox, probe.window)
        result = metrics_mod.match(
            probe.probe_id,
            records_by_probe.get(probe.probe_id, []),
            gt,
            spec.category,
        )
        out.append(((spec.size_proportion, probe.dx, probe.dy), result))
    return out


def run_evaluate(config: RunConfig) -> dict:
    """Match predictions against ground truth and write the per-cell table."""
    plan = read_plan(config.output_root)
    preds_dir = Path(config.output_root) / protocol.PREDICTIONS_DIR
    if not any(preds_dir.glob("*.jsonl")):
        raise FileNotFoundError(
            f"no prediction shards under {preds_dir}; run mock-run or an "
            "external detector over the generated manifest first"
        )
    records = protocol.read_predictions(config.output_root)
    covered = protocol.covered_probe_ids(config.output_root)

    planned_ids = {p.probe_id for p in plan.probes}
    unknown = {r.probe_id for r in records} - planned_ids
    if unknown:
        raise ProtocolError(
            f"predictions reference unknown probe ids: {sorted(unknown)[:5]}"
        )

    records_by_probe: dict[str, list[protocol.PredictionRecord]] = defaultdict(list)
    for record in records:
        records_by_probe[record.probe_id].append(record)

    images = {t.test_image_id: t for t in plan.test_images}
    rows = [
        (probe, images[probe.test_image_id])
        for probe in plan.probes
        if probe.probe_id in covered
    ]

    if config.workers > 1 and len(rows) > 1:
        chunks = np.array_split(np.arange(len(rows)), config.workers)
        matched = []
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [
                pool.submit(
                    _match_chunk,
                    str(config.catalog_root),
                    config.crop_dimension,
                    [rows[i] for i in chunk],
                    {
                        rows[i][0].probe_id: records_by_probe.get(
                            rows[i][0].probe_id, []
                        )
                        for i in chunk
                    },
                )
                for chunk in chunks
                if len(chunk)
            ]
            for future in futures:
                matched.extend(future.result())
    else:
        matched = _match_chunk(
            str(config.catalog_root),
            config.crop_dimension,
            rows,
            dict(records_by_probe),
        )

    grouped: dict[tuple[float, int, int], list[metrics_mod.MatchedResult]] = (
        defaultdict(list)
    )
    for key, result in matched:
        grouped[key].append(result)
    cells = metrics_mod.aggregate(grouped)

    eval_dir = Path(config.output_root) / EVAL_DIR
    eval_dir.mkdir(parents=True, exist_ok=True)
    metrics_mod.write_cells_csv(cells, eval_dir / "cells.csv")
    coverage = len(covered & planned_ids) / len(planned_ids) if planned_ids else 0.0
    summary = {
        "planned_probes": len(planned_ids),
        "covered_probes": len(covered & planned_ids),
        "coverage": coverage,
        "n_cells": len(cells),
        "n_predictions": len(records),
        "completed_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (eval_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8"
    )
    return summary


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def run_report(config: RunConfig, metrics_wanted: list[str] | None = None) -> list[Path]:
    eval_dir = Path(config.output_root) / EVAL_DIR
    cells_path = eval_dir / "cells.csv"
    if not cells_path.is_file():
        raise FileNotFoundError(
            f"no metrics table at {cells_path}; run the evaluate stage first"
        )
    cells = metrics_mod.read_cells_csv(cells_path)
    report_dir = Path(config.output_root) / REPORT_DIR
    wanted = metrics_wanted or list(reporting.METRIC_FIELDS)
    outputs = []
    for size in sorted({c.size for c in cells}):
        subset = [c for c in cells if c.size == size]
        label = planner_mod.size_label(size)
        for metric in wanted:
            png = report_dir / f"heatmap_{metric}_{label}.png"
            csv_out = report_dir / f"heatmap_{metric}_{label}.csv"
            reporting.heatmap(
                subset, metric, png, csv_out, title=f"{metric} at proportion {size}"
            )
            outputs.extend([png, csv_out])
    return outputs
