"""Closed-form im2col/GeMM cost accounting.

Reproduces the residual-block cost table (column size X, filter size Y,
MACs as linear functions of the chunk size T), the aggregate matrix-size
curves and their crossover, and per-model parameter/MAC counters with two
transform-accounting modes (the conv-based STFT/iSTFT layers counted as
matrices, or excluded).
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .layers import CostEntry
from .tensor import ConvGeometry

FRAMES_PER_SECOND = 100


@dataclass(frozen=True)
class LinearCost:
    """Integer-valued ``slope * T + intercept``."""

    slope: int
    intercept: int

    def at(self, t: int) -> int:
        return self.slope * t + self.intercept

    def __str__(self) -> str:
        if self.slope and self.intercept:
            return f"{self.slope}*T+{self.intercept}"
        if self.slope:
            return f"{self.slope}*T"
        return str(self.intercept)


@dataclass(frozen=True)
class CostBreakdown:
    """im2col column size X, filter size Y, and MACs for one convolution."""

    column: LinearCost
    filter: LinearCost
    macs: LinearCost


def im2col_cost(geom: ConvGeometry, in_freq: int = 1) -> CostBreakdown:
    """Exact im2col/GeMM cost of a stride-1, time-preserving convolution.

    ``in_freq`` is the (preserved) frequency extent H; the time extent is
    the symbolic chunk size T. Depthwise geometries are costed through the
    channel-as-batch reformulation.
    """
    if geom.stride != (1, 1):
        raise ConfigError("closed-form costs assume stride 1")
    b = geom.batch
    k = geom.filter_h * geom.filter_w
    if geom.depthwise:
        col = b * geom.in_channels * in_freq * k
        filt = geom.in_channels * k
        macs = col
    else:
        col = b * in_freq * geom.in_channels * k
        filt = geom.in_channels * k * geom.out_channels
        macs = col * geom.out_channels
    return CostBreakdown(
        column=LinearCost(col, 0),
        filter=LinearCost(0, filt),
        macs=LinearCost(macs, 0),
    )


@dataclass(frozen=True)
class BlockRow:
    """One residual-block convolution row of the cost table."""

    name: str
    geom: ConvGeometry
    in_freq: int
    cost: CostBreakdown


def _row(name: str, c_in: int, c_out: int, kh: int, kw: int, in_freq: int, depthwise: bool) -> BlockRow:
    geom = ConvGeometry(
        batch=1,
        in_channels=c_in,
        out_channels=c_out,
        filter_h=kh,
        filter_w=kw,
        groups=c_in if depthwise else 1,
        padding="symmetric",
    )
    return BlockRow(name, geom, in_freq, im2col_cost(geom, in_freq))


def block_cost_table() -> list[BlockRow]:
    """The six depthwise/pointwise rows of the 1-D and 2-D residual blocks."""
    return [
        _row("DW 1D", 512, 512, 1, 7, 1, True),
        _row("PW-1st 1D", 512, 1536, 1, 1, 1, False),
        _row("PW-2nd 1D", 1536, 512, 1, 1, 1, False),
        _row("DW 2D", 32, 32, 7, 7, 241, True),
        _row("PW-1st 2D", 32, 64, 1, 1, 241, False),
        _row("PW-2nd 2D", 64, 32, 1, 1, 241, False),
    ]


PROFILE_VARIANTS = ("vocos_1d", "wavehax_2d")


@dataclass(frozen=True)
class BlockCostProfile:
    """Per-layer costs of one residual block plus the aggregate X+Y line."""

    name: str
    layers: dict[str, CostBreakdown]

    @property
    def aggregate(self) -> LinearCost:
        slope = sum(c.column.slope + c.filter.slope for c in self.layers.values())
        intercept = sum(c.column.intercept + c.filter.intercept for c in self.layers.values())
        return LinearCost(slope, intercept)


def aggregate_profile(variant: str) -> BlockCostProfile:
    """Aggregate matrix-size profile of one residual-block family."""
    if variant not in PROFILE_VARIANTS:
        raise ConfigError(f"unknown profile {variant!r}; choose from {PROFILE_VARIANTS}")
    suffix = "1D" if variant == "vocos_1d" else "2D"
    layers = {
        row.name: row.cost for row in block_cost_table() if row.name.endswith(suffix)
    }
    return BlockCostProfile(variant, layers)


def crossover_chunk(a: BlockCostProfile, b: BlockCostProfile) -> float | None:
    """Chunk size where two aggregate X+Y lines meet; None for parallel lines."""
    la, lb = a.aggregate, b.aggregate
    if la.slope == lb.slope:
        return None
    return (lb.intercept - la.intercept) / (la.slope - lb.slope)


# ---------------------------------------------------------------------------
# Per-model counters
# ---------------------------------------------------------------------------

TRANSFORM_MODES = ("as_matrix", "excluded")


@dataclass(frozen=True)
class ParamReport:
    entries: tuple[CostEntry, ...]
    trainable: int
    transform: int

    def total(self, transform_mode: str = "as_matrix") -> int:
        _check_mode(transform_mode)
        return self.trainable + (self.transform if transform_mode == "as_matrix" else 0)


@dataclass(frozen=True)
class MacReport:
    entries: tuple[tuple[str, int], ...]
    total: int

    def prefix_total(self, prefix: str) -> int:
        return sum(m for name, m in self.entries if name.startswith(prefix))


def _check_mode(mode: str) -> None:
    if mode not in TRANSFORM_MODES:
        raise ConfigError(f"transform mode must be one of {TRANSFORM_MODES}")


def count_params(model) -> ParamReport:
    """Per-layer and total parameter counts.

    Trainable counts cover conv, normalization, and filter-bank tensors
    (biases included); ``transform`` is the fixed DFT-matrix footprint of
    the conv-based STFT/iSTFT layers, included in the deploy-format total.
    """
    entries = tuple(model.pipeline.cost_entries())
    trainable = sum(e.weights + e.biases for e in entries if e.kind != "transform")
    transform = sum(e.weights + e.biases for e in entries if e.kind == "transform")
    return ParamReport(entries=entries, trainable=trainable, transform=transform)


def count_macs(model, seconds: float, transform_mode: str = "as_matrix") -> MacReport:
    """Per-layer and total MACs for ``seconds`` of audio.

    Only multiply-accumulate chains are counted (bias additions,
    normalization, activations, and the harmonic-prior oscillator are not).
    ``transform_mode`` selects whether the matrix-DFT STFT/iSTFT layers
    contribute.
    """
    _check_mode(transform_mode)
    frames_f = seconds * FRAMES_PER_SECOND
    frames = int(round(frames_f))
    if abs(frames_f - frames) > 1e-9 or frames < 0:
        raise ConfigError("seconds must map to a whole number of frames")
    entries = []
    for e in model.pipeline.cost_entries():
        if e.kind == "transform" and transform_mode == "excluded":
            continue
        entries.append((e.name, e.macs_per_frame * frames))
    return MacReport(entries=tuple(entries), total=sum(m for _, m in entries))
