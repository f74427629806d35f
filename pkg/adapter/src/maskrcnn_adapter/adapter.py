"""Serve a probe manifest with an instance-segmentation model.

The adapter speaks the harness wire format and nothing else: it reads
``manifest.json`` (probe id, image path, dimensions), runs the model over
each crop, and writes JSONL shards where every line is either a prediction::

    {"probe_id", "label", "confidence", "height", "width", "counts"}

or a ``{"probe_id", "no_detections": true}`` marker.  Masks are binarized at
0.5 and encoded as uncompressed row-major RLE starting with the zero run.
All predictions are emitted by default (score floor 0); the harness owns
every scoring decision downstream.

A model is any callable taking a list of HxWx3 float32 arrays in [0, 1] and
returning one dict per image with ``labels`` (int class ids), ``scores``
(floats), and ``masks`` (N x H x W floats in [0, 1]).  The default model
wraps torchvision's pre-trained Mask R-CNN.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

from .labels import label_for

log = logging.getLogger("maskrcnn_adapter")

MASK_THRESHOLD = 0.5

ModelFn = Callable[[list[np.ndarray]], list[dict]]


@dataclass
class AdapterConfig:
    manifest: Path
    out_dir: Path
    score_floor: float = 0.0
    batch_size: int = 4
    device: str = "cpu"
    weights: str | None = None  # local checkpoint path; None -> torchvision default

    def __post_init__(self) -> None:
        if not 0.0 <= self.score_floor <= 1.0:
            raise ValueError(f"score floor must be in [0, 1], got {self.score_floor}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")


def load_manifest(path: Path) -> tuple[list[dict], Path]:
    """Probe entries plus the directory their image paths are relative to."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    data = json.loads(path.read_text(encoding="utf-8"))
    return list(data["probes"]), path.parent


def rle_encode(mask: np.ndarray) -> list[int]:
    flat = np.asarray(mask, dtype=bool).ravel()
    breaks = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], breaks, [flat.size]))
    counts = [int(c) for c in np.diff(edges)]
    if flat[0]:
        counts.insert(0, 0)
    return counts


def build_torchvision_model(device: str = "cpu", weights: str | None = None) -> ModelFn:
    """Wrap torchvision's Mask R-CNN behind the plain-numpy model interface."""
    import torch
    from torchvision.models.detection import (
        MaskRCNN_ResNet50_FPN_Weights,
        maskrcnn_resnet50_fpn,
    )

    if weights:
        model = maskrcnn_resnet50_fpn(weights=None)
        state = torch.load(weights, map_location=device)
        model.load_state_dict(state)
    else:
        model = maskrcnn_resnet50_fpn(weights=MaskRCNN_ResNet50_FPN_Weights.COCO_V1)
    model.eval().to(device)

    def run(batch: list[np.ndarray]) -> list[dict]:
        tensors = [
            torch.from_numpy(img.transpose(2, 0, 1)).to(device) for img in batch
        ]
        with torch.no_grad():
            outputs = model(tensors)
        results = []
        for out in outputs:
            results.append(
                {
                    "labels": out["labels"].cpu().numpy(),
                    "scores": out["scores"].cpu().numpy(),
                    "masks": out["masks"].squeeze(1).cpu().numpy(),
                }
            )
        return results

    return run


def _record_lines(
    probe_id: str, output: dict, height: int, width: int, score_floor: float
) -> list[str]:
    lines = []
    scores = np.asarray(output.get("scores", []), dtype=float)
    labels = np.asarray(output.get("labels", []), dtype=int)
    masks = output.get("masks")
    for index in range(len(scores)):
        score = float(scores[index])
        if score < score_floor:
            continue
        mask = np.asarray(masks[index]) >= MASK_THRESHOLD
        if mask.shape != (height, width):
            log.warning(
                "probe %s: prediction %d mask is %s, expected (%d, %d); skipped",
                probe_id, index, mask.shape, height, width,
            )
            continue
        lines.append(
            json.dumps(
                {
                    "probe_id": probe_id,
                    "label": label_for(int(labels[index])),
                    "confidence": min(1.0, max(0.0, score)),
                    "height": height,
                    "width": width,
                    "counts": rle_encode(mask),
                },
                sort_keys=True,
                separators=(",", ":"),
            )
        )
    if not lines:
        lines.append(
            json.dumps(
                {"no_detections": True, "probe_id": probe_id},
                sort_keys=True,
                separators=(",", ":"),
            )
        )
    return lines


def _write_shard_atomic(path: Path, lines: list[str]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    os.replace(tmp, path)


def serve_manifest(config: AdapterConfig, model: ModelFn | None = None) -> list[Path]:
    """Answer every probe in the manifest; returns the shard paths written.

    Undecodable crops are logged with their probe id and skipped, never
    silently dropped from the log.
    """
    probes, base_dir = load_manifest(config.manifest)
    if model is None:
        model = build_torchvision_model(config.device, config.weights)

    preds_dir = Path(config.out_dir) / "preds"
    preds_dir.mkdir(parents=True, exist_ok=True)

    shard_paths = []
    n_batches = max(1, math.ceil(len(probes) / config.batch_size))
    for batch_index in range(n_batches):
        rows = probes[
            batch_index * config.batch_size : (batch_index + 1) * config.batch_size
        ]
        images = []
        loaded_rows = []
        for row in rows:
            image_path = base_dir / row["image"]
            try:
                with Image.open(image_path) as img:
                    array = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
            except Exception as exc:
                log.error("probe %s: cannot decode %s (%s); skipped",
                          row["probe_id"], image_path, exc)
                continue
            images.append(array)
            loaded_rows.append(row)

        lines: list[str] = []
        if images:
            outputs = model(images)
            for row, output in zip(loaded_rows, outputs):
                lines.extend(
                    _record_lines(
                        row["probe_id"], output,
                        int(row["height"]), int(row["width"]),
                        config.score_floor,
                    )
                )
        shard = preds_dir / f"shard-{batch_index:05d}.jsonl"
        _write_shard_atomic(shard, lines)
        shard_paths.append(shard)
    return shard_paths
