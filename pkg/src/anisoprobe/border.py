"""Padding contamination analysis for stacks of convolution-style layers.

A layer that pads its input produces border outputs whose values depend on
the padding rather than on real image content.  This module tracks how that
contaminated band grows with depth along two fully independent routes:

* :func:`affected_band` folds an exact receptive-field recurrence (rational
  arithmetic, no floats) and marks an output cell contaminated when its
  receptive-field interval leaves the input extent;
* :func:`taint_oracle` densely simulates a boolean "influenced by padding"
  grid layer by layer.

Both produce identical :class:`BandReport` values cell for cell, so either
can verify the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArchitectureError

__all__ = [
    "LayerSpec",
    "ReceptiveFieldState",
    "LayerBands",
    "BandReport",
    "compose_rf",
    "affected_band",
    "taint_oracle",
]

MAX_SIMULATED_SIDE = 4096


@dataclass(frozen=True)
class LayerSpec:
    """One square, symmetrically padded window op (convolution or pooling)."""

    kernel: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self) -> None:
        if self.kernel < 1:
            raise ValueError(f"kernel must be >= 1, got {self.kernel}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")

    def output_size(self, n: int) -> int:
        return (n + 2 * self.padding - self.kernel) // self.stride + 1

    def __str__(self) -> str:
        return f"k{self.kernel} s{self.stride} p{self.padding}"


@dataclass(frozen=True)
class ReceptiveFieldState:
    """Geometry of one output cell expressed in input-pixel coordinates.

    ``rf_size`` is the receptive-field extent, ``jump`` the input-pixel
    spacing between adjacent output centers, and ``start`` the (possibly
    fractional) input coordinate of output index 0.
    """

    rf_size: int
    jump: int
    start: Fraction

    @property
    def half_width(self) -> Fraction:
        return Fraction(self.rf_size - 1, 2)


IDENTITY_STATE = ReceptiveFieldState(rf_size=1, jump=1, start=Fraction(0))


def _scan_states(layers: Sequence[LayerSpec]) -> list[ReceptiveFieldState]:
    if not layers:
        raise ValueError("layer list must not be empty")
    states: list[ReceptiveFieldState] = []
    state = IDENTITY_STATE
    for layer in layers:
        half = Fraction(layer.kernel - 1, 2)
        state = ReceptiveFieldState(
            rf_size=state.rf_size + (layer.kernel - 1) * state.jump,
            jump=state.jump * layer.stride,
            start=state.start + (half - layer.padding) * state.jump,
        )
        states.append(state)
    return states


def compose_rf(layers: Iterable[LayerSpec]) -> ReceptiveFieldState:
    """Fold the receptive-field recurrence over the stack."""
    return _scan_states(list(layers))[-1]


def _scan_sizes(layers: Sequence[LayerSpec], n: int, axis: str) -> list[int]:
    sizes = []
    for index, layer in enumerate(layers):
        n = layer.output_size(n)
        if n < 1:
            raise InvalidArchitectureError(
                f"layer {index} ({layer}) collapses the {axis} dimension to {n}"
            )
        sizes.append(n)
    return sizes


@dataclass(frozen=True)
class LayerBands:
    """Contaminated-band summary for one layer's output.

    ``left``/``right``/``top``/``bottom`` count fully contaminated leading and
    trailing columns (resp. rows) of the output grid; the ``*_input`` values
    map those counts back to input pixels through the cumulative stride.
    """

    index: int
    output_width: int
    output_height: int
    left: int
    right: int
    top: int
    bottom: int
    left_input: int
    right_input: int
    top_input: int
    bottom_input: int
    fraction: float


@dataclass(frozen=True)
class BandReport:
    input_width: int
    input_height: int
    per_layer: tuple[LayerBands, ...]

    @property
    def final(self) -> LayerBands:
        return self.per_layer[-1]


def _make_layer_bands(
    index: int,
    width: int,
    height: int,
    left: int,
    right: int,
    top: int,
    bottom: int,
    jump: int,
) -> LayerBands:
    clean = max(0, width - left - right) * max(0, height - top - bottom)
    return LayerBands(
        index=index,
        output_width=width,
        output_height=height,
        left=left,
        right=right,
        top=top,
        bottom=bottom,
        left_input=left * jump,
        right_input=right * jump,
        top_input=top * jump,
        bottom_input=bottom * jump,
        fraction=1.0 - clean / (width * height),
    )


def _axis_bands(
    state: ReceptiveFieldState, n_out: int, n_in: int
) -> tuple[int, int, int]:
    """Leading/trailing counts of cells whose interval leaves [0, n_in - 1].

    Returns ``(lead, trail, clean)`` where ``clean`` is the number of
    unaffected cells.  When nothing is clean, both sides span the whole axis.
    """
    half = state.half_width
    first_clean = max(0, math.ceil((half - state.start) / state.jump))
    last_clean = min(
        n_out - 1, math.floor((n_in - 1 - half - state.start) / state.jump)
    )
    if first_clean > last_clean:
        return n_out, n_out, 0
    return first_clean, n_out - 1 - last_clean, last_clean - first_clean + 1


def _check_input_size(input_size: tuple[int, int]) -> tuple[int, int]:
    width, height = input_size
    if width < 1 or height < 1:
        raise ValueError(f"input size must be positive, got {input_size}")
    return width, height


def affected_band(
    layers: Iterable[LayerSpec], input_size: tuple[int, int]
) -> BandReport:
    """Per-layer contaminated bands, computed analytically.

    An output cell is contaminated when its receptive-field interval
    ``[center - (rf - 1)/2, center + (rf - 1)/2]`` extends beyond the input
    on either axis.  All interval arithmetic is exact.
    """
    layers = list(layers)
    width, height = _check_input_size(input_size)
    states = _scan_states(layers)
    widths = _scan_sizes(layers, width, "width")
    heights = _scan_sizes(layers, height, "height")

    rows = []
    for index, state in enumerate(states):
        lead_x, trail_x, clean_x = _axis_bands(state, widths[index], width)
        lead_y, trail_y, clean_y = _axis_bands(state, heights[index], height)
        # A fully contaminated axis contaminates every row/column of the other.
        if clean_y == 0:
            lead_x = trail_x = widths[index]
        if clean_x == 0:
            lead_y = trail_y = heights[index]
        rows.append(
            _make_layer_bands(
                index, widths[index], heights[index],
                lead_x, trail_x, lead_y, trail_y, state.jump,
            )
        )
    return BandReport(width, height, tuple(rows))


def _taint_step(grid: np.ndarray, layer: LayerSpec) -> np.ndarray:
    padded = np.pad(grid, layer.padding, constant_values=True)
    windows = sliding_window_view(padded, (layer.kernel, layer.kernel))
    return windows[:: layer.stride, :: layer.stride].any(axis=(2, 3))


def _edge_runs(fully_tainted: np.ndarray) -> tuple[int, int]:
    clean = np.flatnonzero(~fully_tainted)
    if clean.size == 0:
        n = int(fully_tainted.size)
        return n, n
    return int(clean[0]), int(fully_tainted.size - 1 - clean[-1])


def taint_oracle(
    layers: Iterable[LayerSpec], input_size: tuple[int, int]
) -> BandReport:
    """Brute-force contamination report via dense boolean simulation.

    Each layer pads its input with taint, and an output cell becomes tainted
    when any cell of its kernel footprint is tainted.  Report shape matches
    :func:`affected_band` exactly.
    """
    layers = list(layers)
    width, height = _check_input_size(input_size)
    if width > MAX_SIMULATED_SIDE or height > MAX_SIMULATED_SIDE:
        raise ValueError(
            f"dense simulation is limited to {MAX_SIMULATED_SIDE} per side"
        )
    _scan_sizes(layers, width, "width")
    _scan_sizes(layers, height, "height")

    grid = np.zeros((height, width), dtype=bool)
    rows = []
    jump = 1
    for index, layer in enumerate(layers):
        grid = _taint_step(grid, layer)
        jump *= layer.stride
        lead_x, trail_x = _edge_runs(grid.all(axis=0))
        lead_y, trail_y = _edge_runs(grid.all(axis=1))
        rows.append(
            _make_layer_bands(
                index, grid.shape[1], grid.shape[0],
                lead_x, trail_x, lead_y, trail_y, jump,
            )
        )
    return BandReport(width, height, tuple(rows))
