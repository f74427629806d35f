"""Positional-anisotropy probing harness for vision detectors.

Composites targets into large backgrounds, crops probe images that pin the
target at exact offsets from the crop border, scores detector output per
offset cell, and analytically bounds padding contamination in convolutional
stacks.
"""

from .border import (
    BandReport,
    LayerSpec,
    ReceptiveFieldState,
    affected_band,
    compose_rf,
    taint_oracle,
)
from .catalog import (
    SceneCatalog,
    effective_region,
    load_catalog,
    sample_insertion_point,
    save_catalog,
)
from .compositing import (
    CompositeSpec,
    TestImage,
    composite,
    render_composite,
    resize_target,
)
from .metrics import CellMetrics, MatchedResult, aggregate, filter_overlapping, iou, match
from .planner import (
    MASTER_OFFSETS,
    CropWindow,
    ExperimentPlan,
    ProbeSpec,
    offset_grid,
    plan_crop,
    plan_experiment,
)
from .protocol import (
    DegradationProfile,
    PredictionRecord,
    ProbeManifest,
    mock_detect,
    read_manifest,
    read_predictions,
    write_manifest,
    write_predictions,
)
from .reporting import DensityMap, density_map, heatmap

__version__ = "0.1.0"
