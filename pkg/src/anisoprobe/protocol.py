"""File-exchange protocol between the harness and any detector.

The harness writes ``manifest.json`` plus one PNG per probe under ``probes/``;
a detector writes JSONL shards under ``preds/``.  Each shard line is either a
prediction record::

    {"probe_id": ..., "label": ..., "confidence": ..., "height": ...,
     "width": ..., "counts": [...]}

or an explicit no-detection marker ``{"probe_id": ..., "no_detections": true}``
so that a processed probe with zero predictions is distinguishable from one
that was never processed.  Masks travel as uncompressed row-major RLE (first
count is zeros).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import rle
from .errors import ProtocolError
from .rng import derive_rng

__all__ = [
    "PROBES_DIR",
    "PREDICTIONS_DIR",
    "MANIFEST_NAME",
    "ManifestEntry",
    "ProbeManifest",
    "PredictionRecord",
    "DegradationProfile",
    "write_manifest",
    "read_manifest",
    "write_predictions",
    "read_predictions",
    "covered_probe_ids",
    "detection_probability",
    "mock_detect",
]

PROBES_DIR = "probes"
PREDICTIONS_DIR = "preds"
MANIFEST_NAME = "manifest.json"
SHARD_SIZE = 512


@dataclass(frozen=True)
class ManifestEntry:
    probe_id: str
    image: str  # path relative to the exchange directory
    width: int
    height: int


@dataclass(frozen=True)
class ProbeManifest:
    entries: tuple[ManifestEntry, ...]
    meta: dict


@dataclass(frozen=True)
class PredictionRecord:
    probe_id: str
    label: str
    confidence: float
    height: int
    width: int
    counts: tuple[int, ...]

    def decode_mask(self) -> np.ndarray:
        return rle.decode(self.counts, self.height, self.width)


def write_manifest(
    entries: Iterable[ManifestEntry], out_dir: str | Path, meta: dict | None = None
) -> ProbeManifest:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = list(entries)
    seen: set[str] = set()
    for entry in entries:
        if entry.probe_id in seen:
            raise ProtocolError(f"duplicate probe id {entry.probe_id!r} in manifest")
        seen.add(entry.probe_id)
    payload = {
        "meta": meta or {},
        "probes": [
            {
                "probe_id": e.probe_id,
                "image": e.image,
                "width": e.width,
                "height": e.height,
            }
            for e in entries
        ],
    }
    _atomic_write_text(out_dir / MANIFEST_NAME, json.dumps(payload, indent=2, sort_keys=True))
    return ProbeManifest(entries=tuple(entries), meta=dict(meta or {}))


def read_manifest(exchange_dir: str | Path) -> ProbeManifest:
    path = Path(exchange_dir)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise ProtocolError(f"no manifest at {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    entries = []
    seen: set[str] = set()
    for row in data.get("probes", []):
        pid = str(row["probe_id"])
        if pid in seen:
            raise ProtocolError(f"duplicate probe id {pid!r} in manifest")
        seen.add(pid)
        entries.append(
            ManifestEntry(
                probe_id=pid,
                image=str(row["image"]),
                width=int(row["width"]),
                height=int(row["height"]),
            )
        )
    return ProbeManifest(entries=tuple(entries), meta=dict(data.get("meta", {})))


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _record_to_json(record: PredictionRecord) -> str:
    return json.dumps(
        {
            "probe_id": record.probe_id,
            "label": record.label,
            "confidence": record.confidence,
            "height": record.height,
            "width": record.width,
            "counts": list(record.counts),
        },
        sort_keys=True,
        separators=(",", ":"),
    )


def write_predictions(
    out_dir: str | Path,
    by_probe: Mapping[str, Sequence[PredictionRecord]],
    shard_size: int = SHARD_SIZE,
) -> list[Path]:
    """Write predictions sharded by probe id; empty lists become miss markers."""
    preds_dir = Path(out_dir) / PREDICTIONS_DIR
    preds_dir.mkdir(parents=True, exist_ok=True)
    probe_ids = sorted(by_probe)
    paths = []
    for shard_index in range(0, max(1, math.ceil(len(probe_ids) / shard_size))):
        chunk = probe_ids[shard_index * shard_size : (shard_index + 1) * shard_size]
        lines = []
        for pid in chunk:
            records = by_probe[pid]
            if not records:
                lines.append(
                    json.dumps(
                        {"no_detections": True, "probe_id": pid},
                        sort_keys=True,
                        separators=(",", ":"),
                    )
                )
            for record in records:
                if record.probe_id != pid:
                    raise ProtocolError(
                        f"record probe id {record.probe_id!r} filed under {pid!r}"
                    )
                lines.append(_record_to_json(record))
        path = preds_dir / f"shard-{shard_index:05d}.jsonl"
        _atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))
        paths.append(path)
    return paths


def _validate_record(record: PredictionRecord, where: str) -> None:
    if not 0.0 <= record.confidence <= 1.0:
        raise ProtocolError(
            f"{where}: probe {record.probe_id!r} confidence "
            f"{record.confidence} outside [0, 1]"
        )
    counts = record.counts
    if not counts:
        raise ProtocolError(f"{where}: probe {record.probe_id!r} has empty run list")
    if counts[0] < 0 or any(c < 1 for c in counts[1:]):
        raise ProtocolError(
            f"{where}: probe {record.probe_id!r} run counts are not canonical"
        )
    if sum(counts) != record.height * record.width:
        raise ProtocolError(
            f"{where}: probe {record.probe_id!r} run counts sum to {sum(counts)}, "
            f"expected {record.height}x{record.width}"
        )


def _iter_lines(in_dir: str | Path):
    preds_dir = Path(in_dir)
    if (preds_dir / PREDICTIONS_DIR).is_dir():
        preds_dir = preds_dir / PREDICTIONS_DIR
    for path in sorted(preds_dir.glob("*.jsonl")):
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            where = f"{path.name}:{lineno}"
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"{where}: malformed JSON ({exc})") from exc
            if "probe_id" not in row:
                raise ProtocolError(f"{where}: record is missing probe_id")
            yield where, row


def read_predictions(in_dir: str | Path) -> list[PredictionRecord]:
    """Parse and validate every prediction line; miss markers carry no record."""
    records = []
    for where, row in _iter_lines(in_dir):
        if row.get("no_detections"):
            continue
        try:
            record = PredictionRecord(
                probe_id=str(row["probe_id"]),
                label=str(row["label"]),
                confidence=float(row["confidence"]),
                height=int(row["height"]),
                width=int(row["width"]),
                counts=tuple(int(c) for c in row["counts"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(
                f"{where}: probe {row.get('probe_id')!r} is malformed ({exc})"
            ) from exc
        _validate_record(record, where)
        records.append(record)
    return records


def covered_probe_ids(in_dir: str | Path) -> set[str]:
    """Probe ids a detector reported on, whether or not it found anything."""
    return {str(row["probe_id"]) for _, row in _iter_lines(in_dir)}


# ---------------------------------------------------------------------------
# Mock detector
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DegradationProfile:
    """Closed-form positional deficit injected by the mock detector.

    Detection fires with probability
    ``clamp(base_rate - border_penalty * f * exp(-min(dx, dy) / decay_px))``
    where ``f`` is ``corner_factor`` when both offsets are below ``decay_px``
    and 1 otherwise.  On a hit the ground-truth mask is jittered by up to
    ``mask_jitter_px`` rounds of erosion or dilation (falling back to the
    exact mask if jitter would destroy the overlap), the label is correct
    with probability ``label_accuracy``, and confidence is a clipped normal.
    """

    base_rate: float = 0.9
    border_penalty: float = 0.0
    decay_px: float = 30.0
    corner_factor: float = 1.0
    label_accuracy: float = 1.0
    decoy_label: str = "decoy"
    confidence_mean: float = 0.8
    confidence_sd: float = 0.08
    mask_jitter_px: int = 1

    def __post_init__(self) -> None:
        if self.decay_px <= 0:
            raise ValueError(f"decay_px must be > 0, got {self.decay_px}")
        if self.corner_factor < 1:
            raise ValueError(f"corner_factor must be >= 1, got {self.corner_factor}")


def detection_probability(profile: DegradationProfile, dx: int, dy: int) -> float:
    d = min(dx, dy)
    factor = (
        profile.corner_factor
        if dx < profile.decay_px and dy < profile.decay_px
        else 1.0
    )
    p = profile.base_rate - profile.border_penalty * factor * math.exp(
        -d / profile.decay_px
    )
    return min(1.0, max(0.0, p))


def _shift(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    ys = slice(max(0, dy), min(h, h + dy))
    xs = slice(max(0, dx), min(w, w + dx))
    ys_src = slice(max(0, -dy), min(h, h - dy))
    xs_src = slice(max(0, -dx), min(w, w - dx))
    out[ys, xs] = mask[ys_src, xs_src]
    return out


def _erode(mask: np.ndarray) -> np.ndarray:
    return (
        mask
        & _shift(mask, 1, 0)
        & _shift(mask, -1, 0)
        & _shift(mask, 0, 1)
        & _shift(mask, 0, -1)
    )


def _dilate(mask: np.ndarray) -> np.ndarray:
    return (
        mask
        | _shift(mask, 1, 0)
        | _shift(mask, -1, 0)
        | _shift(mask, 0, 1)
        | _shift(mask, 0, -1)
    )


def _jitter_mask(
    mask: np.ndarray, radius: int, rng: np.random.Generator
) -> np.ndarray:
    if radius <= 0:
        return mask
    rounds = int(rng.integers(0, radius + 1))
    grow = bool(rng.integers(0, 2))
    out = mask
    for _ in range(rounds):
        out = _dilate(out) if grow else _erode(out)
    return out

def mock_detect(
    probe_id: str,
    dx: int,
    dy: int,
    gt_mask: np.ndarray,
    gt_category: str,
    profile: DegradationProfile,
    seed: int,
) -> list[PredictionRecord]:
    """Synthesize detector output for one probe, reproducible per (probe, seed)."""
    rng = derive_rng(seed, probe_id)
    if rng.random() >= detection_probability(profile, dx, dy):
        return []
    mask = _jitter_mask(gt_mask, profile.mask_jitter_px, rng)
    if not np.logical_and(mask, gt_mask).any():
        mask = gt_mask  # jitter must not turn a hit into a miss
    label = (
        gt_category
        if rng.random() < profile.label_accuracy
        else profile.decoy_label
    )
    confidence = float(
        np.clip(rng.normal(profile.confidence_mean, profile.confidence_sd), 0.0, 1.0)
    )
    height, width = mask.shape
    return [
        PredictionRecord(
            probe_id=probe_id,
            label=label,
            confidence=confidence,
            height=height,
            width=width,
            counts=tuple(rle.encode(mask)),
        )
    ]
