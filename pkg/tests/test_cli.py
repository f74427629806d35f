from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from anisoprobe.border import LayerSpec, affected_band
from anisoprobe.cli import main
from anisoprobe.protocol import read_manifest
from conftest import build_catalog


def _run_args(catalog: Path, run: Path, *extra: str) -> list[str]:
    return [
        "--catalog", str(catalog), "--run", str(run),
        "--crop", "400", "--sizes", "0.05,0.12", "--offsets", "0,30,75",
        "--seed", "11", *extra,
    ]


@pytest.fixture
def tiny_catalog(tmp_path: Path) -> Path:
    return build_catalog(
        tmp_path / "catalog",
        n_scenes=2,
        targets=[("gull", "bird_flying"), ("tabby", "cat")],
    )


def test_catalog_validate_ok(tiny_catalog, capsys):
    assert main(["catalog-validate", "--catalog", str(tiny_catalog)]) == 0
    assert "2 backgrounds" in capsys.readouterr().out


def test_catalog_validate_failure_exits_1(tmp_path, capsys):
    root = build_catalog(tmp_path / "bad", n_scenes=1)
    (root / "targets" / "gull.png").unlink()
    assert main(["catalog-validate", "--catalog", str(root)]) == 1
    assert "gull" in capsys.readouterr().err


def test_full_pipeline_stages(tiny_catalog, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["plan", *_run_args(tiny_catalog, run)]) == 0
    assert (run / "plan" / "probes.jsonl").is_file()

    assert main(["generate", *_run_args(tiny_catalog, run)]) == 0
    manifest = read_manifest(run / "exchange")
    assert len(manifest.entries) > 0
    with Image.open(run / "exchange" / manifest.entries[0].image) as img:
        assert img.size == (400, 400)

    assert main(["mock-run", *_run_args(tiny_catalog, run)]) == 0
    assert list((run / "preds").glob("*.jsonl"))

    assert main(["evaluate", *_run_args(tiny_catalog, run)]) == 0
    out = capsys.readouterr().out
    assert "coverage 1.000" in out
    assert (run / "eval" / "cells.csv").is_file()

    assert main(["report", *_run_args(tiny_catalog, run), "--metrics", "r_t,c_t"]) == 0
    pngs = sorted((run / "report").glob("heatmap_*.png"))
    # 2 metrics x 2 size classes
    assert len(pngs) == 4


def test_pipeline_determinism(tiny_catalog, tmp_path):
    digests = []
    for name in ("a", "b"):
        run = tmp_path / name
        assert main(["plan", *_run_args(tiny_catalog, run)]) == 0
        assert main(["mock-run", *_run_args(tiny_catalog, run)]) == 0
        assert main(["evaluate", *_run_args(tiny_catalog, run)]) == 0
        files = {}
        for path in sorted(run.rglob("*")):
            if path.is_file() and path.name != "summary.json":
                files[str(path.relative_to(run))] = path.read_bytes()
        digests.append(files)
    assert digests[0] == digests[1]


def test_generate_parallel_matches_serial(tiny_catalog, tmp_path):
    outputs = []
    for name, workers in (("serial", "1"), ("parallel", "3")):
        run = tmp_path / name
        assert main(["plan", *_run_args(tiny_catalog, run)]) == 0
        assert main(
            ["generate", *_run_args(tiny_catalog, run), "--workers", workers]
        ) == 0
        files = {
            str(p.relative_to(run)): p.read_bytes()
            for p in sorted((run / "exchange").rglob("*"))
            if p.is_file()
        }
        outputs.append(files)
    assert outputs[0] == outputs[1]


def test_evaluate_reports_partial_coverage(tiny_catalog, tmp_path, capsys):
    run = tmp_path / "run"
    main(["plan", *_run_args(tiny_catalog, run)])
    main(["mock-run", *_run_args(tiny_catalog, run)])
    # drop a slice of the prediction lines to simulate an unfinished detector
    shards = sorted((run / "preds").glob("*.jsonl"))
    kept, dropped = [], set()
    all_lines = [
        json.loads(line)
        for shard in shards
        for line in shard.read_text().splitlines()
    ]
    probe_ids = sorted({row["probe_id"] for row in all_lines})
    dropped = set(probe_ids[:: 10])
    for shard in shards:
        shard.unlink()
    kept = [row for row in all_lines if row["probe_id"] not in dropped]
    (run / "preds" / "shard-00000.jsonl").write_text(
        "\n".join(json.dumps(r, sort_keys=True) for r in kept) + "\n"
    )
    assert main(["evaluate", *_run_args(tiny_catalog, run)]) == 0
    summary = json.loads((run / "eval" / "summary.json").read_text())
    expected = 1 - len(dropped) / len(probe_ids)
    assert summary["coverage"] == pytest.approx(expected, abs=1e-9)


def test_plan_with_skips_exits_2(tmp_path):
    # region hugging the border + zero margin puts insertion points where
    # large offsets cannot be honored
    catalog = build_catalog(
        tmp_path / "border-catalog",
        n_scenes=1,
        targets=[("gull", "bird_flying")],
        region_box=(10, 10, 250, 250),
    )
    run = tmp_path / "run"
    code = main(
        [
            "plan", "--catalog", str(catalog), "--run", str(run),
            "--crop", "400", "--sizes", "0.05", "--offsets", "0,30,75,150,200",
            "--margin", "0", "--seed", "1", "--replicates", "4",
        ]
    )
    assert code == 2
    skips = [
        json.loads(line)
        for line in (run / "plan" / "skips.jsonl").read_text().splitlines()
    ]
    assert any(s["kind"] == "infeasible-probe" for s in skips)


def test_evaluate_before_plan_fails_actionably(tiny_catalog, tmp_path, capsys):
    run = tmp_path / "empty"
    assert main(["evaluate", *_run_args(tiny_catalog, run)]) == 1
    assert "plan" in capsys.readouterr().err


def test_evaluate_without_predictions_fails_actionably(tiny_catalog, tmp_path, capsys):
    run = tmp_path / "run"
    main(["plan", *_run_args(tiny_catalog, run)])
    assert main(["evaluate", *_run_args(tiny_catalog, run)]) == 1
    assert "prediction" in capsys.readouterr().err


def test_border_calc_matches_library(tmp_path, capsys):
    arch = tmp_path / "stem.txt"
    arch.write_text("7 2 3\n3 1 1\n3 1 1\n3 1 1\n3 1 1\n")
    csv_out = tmp_path / "bands.csv"
    assert main(
        ["border-calc", str(arch), "--input", "64x64", "--csv", str(csv_out)]
    ) == 0
    layers = [LayerSpec(7, 2, 3)] + [LayerSpec(3, 1, 1)] * 4
    report = affected_band(layers, (64, 64))
    rows = csv_out.read_text().splitlines()[1:]
    assert len(rows) == 5
    for row, expected in zip(rows, report.per_layer):
        fields = row.split(",")
        assert int(fields[3]) == expected.left
        assert int(fields[4]) == expected.right
        assert float(fields[11]) == expected.fraction
    out = capsys.readouterr().out
    assert "input 64x64" in out


def test_border_calc_json_architecture(tmp_path):
    arch = tmp_path / "net.json"
    arch.write_text(json.dumps([{"kernel": 3, "stride": 1, "padding": 1}] * 3))
    assert main(["border-calc", str(arch), "--input", "32x32"]) == 0


def test_bias_map_command(tmp_path, capsys):
    from anisoprobe import rle

    lines = []
    mask = np.zeros((100, 100), dtype=bool)
    mask[25:75, 25:75] = True
    lines.append(json.dumps({"height": 100, "width": 100, "masks": [rle.encode(mask)]}))
    annotations = tmp_path / "annotations.jsonl"
    annotations.write_text("\n".join(lines))
    out = tmp_path / "bias"
    assert main(
        ["bias-map", str(annotations), "--out", str(out), "--size", "64"]
    ) == 0
    assert (out / "density.png").is_file()
    assert (out / "density.csv").is_file()


def test_config_file_overrides(tiny_catalog, tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"sizes": [0.05], "crop_dimension": 400,
                                  "master_offsets": [0, 30], "seed": 4}))
    run = tmp_path / "run"
    assert main(
        ["plan", "--catalog", str(tiny_catalog), "--run", str(run),
         "--config", str(config)]
    ) == 0
    meta = json.loads((run / "plan" / "meta.json").read_text())
    assert meta["sizes"] == [0.05]
    assert meta["crop_dimension"] == 400
    assert meta["master_offsets"] == [0, 30]
