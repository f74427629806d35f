"""Command-line front end for the adapter."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .adapter import AdapterConfig, serve_manifest


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="maskrcnn-adapter",
        description="Serve an anisoprobe manifest with pre-trained Mask R-CNN.",
    )
    parser.add_argument("manifest", help="manifest.json or the exchange directory")
    parser.add_argument("--out", required=True, help="directory for preds/ shards")
    parser.add_argument("--score-floor", type=float, default=0.0)
    parser.add_argument("--batch-size", type=int, default=4)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--weights", help="local checkpoint instead of the default")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    config = AdapterConfig(
        manifest=Path(args.manifest),
        out_dir=Path(args.out),
        score_floor=args.score_floor,
        batch_size=args.batch_size,
        device=args.device,
        weights=args.weights,
    )
    try:
        shards = serve_manifest(config)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(shards)} shard files under {config.out_dir}/preds")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
