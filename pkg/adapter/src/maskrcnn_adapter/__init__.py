"""Reference detector adapter for the anisoprobe wire protocol."""

from .adapter import (
    AdapterConfig,
    build_torchvision_model,
    load_manifest,
    rle_encode,
    serve_manifest,
)
from .labels import COCO_INSTANCE_CATEGORY_NAMES, label_for

__version__ = "0.1.0"
