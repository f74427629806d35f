"""Command-line entry point.

Stages communicate via on-disk artifacts so an external detector can be
slotted between ``generate`` and ``evaluate``.  Exit codes: 0 success,
1 validation error, 2 infeasible probes present, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from . import pipeline, protocol, reporting
from .border import LayerSpec, affected_band
from .catalog import load_catalog
from .config import RunConfig
from .errors import HarnessError


def _add_run_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--catalog", required=True, help="catalog root directory")
    parser.add_argument("--run", required=True, help="run output directory")
    parser.add_argument("--config", help="JSON config file overriding defaults")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--sizes", help="comma-separated size proportions")
    parser.add_argument("--crop", type=int, dest="crop_dimension")
    parser.add_argument("--margin", type=int)
    parser.add_argument("--offsets", help="comma-separated master offset list")
    parser.add_argument("--replicates", type=int)
    parser.add_argument("--workers", type=int)


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    sizes = (
        tuple(float(s) for s in args.sizes.split(",")) if args.sizes else None
    )
    offsets = (
        tuple(int(o) for o in args.offsets.split(",")) if args.offsets else None
    )
    return RunConfig.resolve(
        args.catalog,
        args.run,
        config_file=args.config,
        sizes=sizes,
        master_offsets=offsets,
        seed=args.seed,
        crop_dimension=args.crop_dimension,
        margin=args.margin,
        replicates=args.replicates,
        workers=args.workers,
    )


def _cmd_catalog_validate(args: argparse.Namespace) -> int:
    catalog = load_catalog(args.catalog)
    regions = sum(len(s.regions) for s in catalog.scenes)
    print(
        f"catalog ok: {len(catalog.scenes)} backgrounds, {regions} regions, "
        f"{len(catalog.targets)} targets, "
        f"{len(catalog.category_map.evaluation_categories)} evaluation categories"
    )
    return 0


def _cmd_plan(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    plan = pipeline.run_plan(config)
    print(
        f"planned {len(plan.test_images)} test images, {len(plan.probes)} probes, "
        f"{len(plan.skips)} skips -> {Path(config.output_root) / pipeline.PLAN_DIR}"
    )
    if plan.skips:
        for skip in plan.skips[:10]:
            print(f"  skip [{skip.kind}] {skip.scene_id}/{skip.target_id}: {skip.detail}")
        if len(plan.skips) > 10:
            print(f"  ... and {len(plan.skips) - 10} more")
        return 2
    return 0


def _cmd_generate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    manifest = pipeline.run_generate(config)
    print(
        f"wrote {len(manifest.entries)} probe crops under "
        f"{Path(config.output_root) / pipeline.EXCHANGE_DIR}"
    )
    return 0


def _cmd_mock_run(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    profile = protocol.DegradationProfile(
        base_rate=args.base_rate,
        border_penalty=args.penalty,
        decay_px=args.decay,
        corner_factor=args.corner_factor,
        label_accuracy=args.label_accuracy,
        confidence_mean=args.confidence_mean,
        confidence_sd=args.confidence_sd,
        mask_jitter_px=args.mask_jitter,
    )
    n = pipeline.run_mock(config, profile)
    print(f"mock detector answered {n} probes")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    summary = pipeline.run_evaluate(config)
    print(
        f"evaluated {summary['covered_probes']}/{summary['planned_probes']} probes "
        f"(coverage {summary['coverage']:.3f}) into {summary['n_cells']} cells"
    )
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    metrics_wanted = args.metrics.split(",") if args.metrics else None
    outputs = pipeline.run_report(config, metrics_wanted)
    print(f"wrote {len(outputs)} report files")
    return 0


def _parse_architecture(path: Path) -> list[LayerSpec]:
    """Layers from JSON (list of dicts or triples) or 'kernel stride padding' lines."""
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        rows = json.loads(text)
        layers = []
        for row in rows:
            if isinstance(row, dict):
                layers.append(
                    LayerSpec(
                        kernel=int(row["kernel"]),
                        stride=int(row.get("stride", 1)),
                        padding=int(row.get("padding", 0)),
                    )
                )
            else:
                k, s, p = row
                layers.append(LayerSpec(kernel=int(k), stride=int(s), padding=int(p)))
        return layers
    layers = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        k, s, p = (int(v) for v in parts)
        layers.append(LayerSpec(kernel=k, stride=s, padding=p))
    return layers


def _cmd_border_calc(args: argparse.Namespace) -> int:
    layers = _parse_architecture(Path(args.architecture))
    width, height = (int(v) for v in args.input.split("x"))
    report = affected_band(layers, (width, height))
    header = (
        f"{'layer':>5} {'output':>11} {'left':>5} {'right':>5} {'top':>5} "
        f"{'bottom':>6} {'input px (l/r/t/b)':>20} {'affected':>9}"
    )
    print(f"input {width}x{height}")
    print(header)
    for row in report.per_layer:
        spec = layers[row.index]
        mapped = f"{row.left_input}/{row.right_input}/{row.top_input}/{row.bottom_input}"
        print(
            f"{row.index:>5} {row.output_width:>5}x{row.output_height:<5} "
            f"{row.left:>5} {row.right:>5} {row.top:>5} {row.bottom:>6} "
            f"{mapped:>20} {row.fraction:>9.6f}   # {spec}"
        )
    if args.csv:
        import csv as _csv

        with open(args.csv, "w", newline="", encoding="utf-8") as handle:
            writer = _csv.writer(handle)
            writer.writerow(
                [
                    "layer", "output_width", "output_height",
                    "left", "right", "top", "bottom",
                    "left_input", "right_input", "top_input", "bottom_input",
                    "fraction",
                ]
            )
            for row in report.per_layer:
                writer.writerow(
                    [
                        row.index, row.output_width, row.output_height,
                        row.left, row.right, row.top, row.bottom,
                        row.left_input, row.right_input, row.top_input,
                        row.bottom_input, repr(row.fraction),
                    ]
                )
    return 0


def _cmd_bias_map(args: argparse.Namespace) -> int:
    annotations = []
    for row in Path(args.annotations).read_text(encoding="utf-8").splitlines():
        row = row.strip()
        if not row:
            continue
        data = json.loads(row)
        annotations.append(
            ((int(data["height"]), int(data["width"])), data["masks"])
        )
    density = reporting.density_map(annotations, standard_size=args.size)
    out = Path(args.out)
    reporting.write_density_map(density, out / "density.png", out / "density.csv")
    print(
        f"density map over {density.images} images "
        f"(max count {int(density.grid.max())}) -> {out}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anisoprobe",
        description="Measure positional anisotropy in detector performance.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("catalog-validate", help="validate a catalog directory")
    p.add_argument("--catalog", required=True)
    p.set_defaults(func=_cmd_catalog_validate)

    p = sub.add_parser("plan", help="plan test images and probe crops")
    _add_run_args(p)
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("generate", help="materialize probe crops for a detector")
    _add_run_args(p)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("mock-run", help="answer the plan with the built-in detector")
    _add_run_args(p)
    p.add_argument("--base-rate", type=float, default=0.9)
    p.add_argument("--penalty", type=float, default=0.3)
    p.add_argument("--decay", type=float, default=30.0)
    p.add_argument("--corner-factor", type=float, default=1.5)
    p.add_argument("--label-accuracy", type=float, default=0.9)
    p.add_argument("--confidence-mean", type=float, default=0.8)
    p.add_argument("--confidence-sd", type=float, default=0.08)
    p.add_argument("--mask-jitter", type=int, default=1)
    p.set_defaults(func=_cmd_mock_run)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    _add_run_args(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="render per-cell heatmaps")
    _add_run_args(p)
    p.add_argument("--metrics", help="comma-separated subset of r_t,r_a,c_t,c_a,s_t,s_a")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("border-calc", help="padding-contamination table for a layer stack")
    p.add_argument("architecture", help="JSON list or 'kernel stride padding' lines")
    p.add_argument("--input", default="800x800", help="input size, e.g. 800x800")
    p.add_argument("--csv", help="also write the table as CSV")
    p.set_defaults(func=_cmd_border_calc)

    p = sub.add_parser("bias-map", help="annotation density map from RLE masks")
    p.add_argument("annotations", help="JSONL of {height, width, masks: [counts...]}")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--size", type=int, default=reporting.STANDARD_DENSITY_SIZE)
    p.set_defaults(func=_cmd_bias_map)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HarnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
