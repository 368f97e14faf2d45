"""Dense float32 tensor kernels: im2col, GeMM, convolutions, activations.

Everything operates on plain numpy arrays in NCHW layout
(``[batch, channels, height, width]``); 1-D sequences use height 1 and keep
time on the trailing (width) axis. All kernels are pure functions with a
deterministic accumulation order, so repeated calls on identical inputs are
bit-identical. ``conv`` runs the im2col+GeMM route; ``conv_direct`` is the
tap-loop route used for cross-checking and MAC instrumentation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError

PADDING_MODES = ("causal_time", "symmetric", "none")


def asarray32(x) -> np.ndarray:
    """Return ``x`` as a C-contiguous float32 array."""
    return np.ascontiguousarray(x, dtype=np.float32)


def check_finite(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Reject NaN/Inf in externally supplied data."""
    if not np.isfinite(x).all():
        raise DataError(f"{name} contains non-finite values")
    return x


@dataclass
class MacCounter:
    """Tally of work actually performed by the kernels it is passed to."""

    macs: int = 0
    column_elements: int = 0
    filter_elements: int = 0

    def reset(self) -> None:
        self.macs = 0
        self.column_elements = 0
        self.filter_elements = 0


@dataclass(frozen=True)
class ConvGeometry:
    """Static shape description of one convolution.

    ``groups == 1`` is a standard convolution, ``groups == in_channels ==
    out_channels`` is depthwise. Time is the width axis; ``causal_time``
    pads only its leading side (the frequency/height axis stays symmetric).
    """

    batch: int
    in_channels: int
    out_channels: int
    filter_h: int
    filter_w: int
    groups: int = 1
    stride: tuple[int, int] = (1, 1)
    padding: str = "causal_time"

    def __post_init__(self):
        for label, v in (
            ("batch", self.batch),
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("filter_h", self.filter_h),
            ("filter_w", self.filter_w),
            ("groups", self.groups),
        ):
            if v < 1:
                raise ConfigError(f"{label} must be >= 1, got {v}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError("in/out channels must be divisible by groups")
        if self.groups > 1 and not self.depthwise:
            raise ConfigError("grouped convolution supports groups=1 or depthwise only")
        if self.padding not in PADDING_MODES:
            raise ConfigError(f"unknown padding mode {self.padding!r}")
        if self.stride[0] < 1 or self.stride[1] < 1:
            raise ConfigError("stride components must be >= 1")
        if self.padding != "none":
            if self.filter_h % 2 == 0:
                raise ConfigError("height padding requires an odd filter_h")
            if self.padding == "symmetric" and self.filter_w % 2 == 0:
                raise ConfigError("symmetric padding requires an odd filter_w")

    @property
    def depthwise(self) -> bool:
        return self.groups > 1 and self.groups == self.in_channels == self.out_channels

    def pad_amounts(self) -> tuple[tuple[int, int], tuple[int, int]]:
        """((top, bottom), (left, right)) zero padding per mode."""
        if self.padding == "none":
            return (0, 0), (0, 0)
        ph = (self.filter_h - 1) // 2
        if self.padding == "causal_time":
            return (ph, ph), (self.filter_w - 1, 0)
        pw = (self.filter_w - 1) // 2
        return (ph, ph), (pw, pw)

    def out_extent(self, in_h: int, in_w: int) -> tuple[int, int]:
        (pt, pb), (pl, pr) = self.pad_amounts()
        h = in_h + pt + pb - self.filter_h
        w = in_w + pl + pr - self.filter_w
        if h < 0 or w < 0:
            if in_h == 0 or in_w == 0:
                return (0, 0)
            raise ConfigError("input smaller than filter after padding")
        return h // self.stride[0] + 1, w // self.stride[1] + 1


def _pad_input(x: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    (pt, pb), (pl, pr) = geom.pad_amounts()
    if pt == pb == pl == pr == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))


def _check_input(x: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 4:
        raise ConfigError(f"expected NCHW input, got ndim={x.ndim}")
    if x.shape[0] != geom.batch or x.shape[1] != geom.in_channels:
        raise ConfigError(
            f"input shape {x.shape} does not match geometry "
            f"(batch {geom.batch}, channels {geom.in_channels})"
        )
    return x


def im2col(x: np.ndarray, geom: ConvGeometry, chunk_t: int | None = None) -> np.ndarray:
    """Rearrange receptive-field patches into a matrix.

    Standard convolutions produce ``[B*H_o*W_o, C_i*H_f*W_f]`` with columns
    ordered (channel, tap_h, tap_w). Depthwise convolutions fold the channel
    axis into the batch axis and produce ``[B*C*H_o*W_o, H_f*W_f]``.
    """
    x = _check_input(x, geom)
    h_o, w_o = geom.out_extent(x.shape[2], x.shape[3])
    if chunk_t is not None and w_o != chunk_t:
        raise ConfigError(f"chunk_T={chunk_t} inconsistent with output width {w_o}")
    b, c = x.shape[0], x.shape[1]
    kh, kw = geom.filter_h, geom.filter_w
    if h_o == 0 or w_o == 0:
        width = kh * kw if geom.depthwise else c * kh * kw
        return np.zeros((0, width), dtype=np.float32)
    xp = _pad_input(x, geom)
    sh, sw = geom.stride
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (h_o - 1) * sh + 1 : sh, : (w_o - 1) * sw + 1 : sw]
    if geom.depthwise:
        cols = win.reshape(b * c * h_o * w_o, kh * kw)
    else:
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h_o * w_o, c * kh * kw)
    return np.ascontiguousarray(cols, dtype=np.float32)


def gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two float32 matrices.

    Delegates to the BLAS sgemm backend: a fixed-blocking path whose result
    is bit-identical across repeated calls on the same operands, and whose
    row ``m`` depends only on row ``m`` of ``a``.
    """
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.ndim != 2 or b.ndim != 2:
        raise ConfigError("gemm expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ConfigError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def _check_weights(w: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    w = np.asarray(w, dtype=np.float32)
    expect = (geom.out_channels, geom.in_channels // geom.groups, geom.filter_h, geom.filter_w)
    if w.shape != expect:
        raise ConfigError(f"weights shape {w.shape}, geometry expects {expect}")
    return w


def filter_matrix(weights: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """GeMM-ready filter: ``[C_i*H_f*W_f, C_o]``, or ``[C, K, 1]`` depthwise.

    Stateful callers cache this (the rearrangement is pure data movement and
    would otherwise dominate small-chunk streaming).
    """
    w = _check_weights(weights, geom)
    if geom.depthwise:
        return np.ascontiguousarray(
            w.reshape(geom.in_channels, geom.filter_h * geom.filter_w, 1)
        )
    return np.ascontiguousarray(w.transpose(1, 2, 3, 0).reshape(-1, geom.out_channels))


def conv(
    x: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray | None,
    geom: ConvGeometry,
    tally: MacCounter | None = None,
    w_mat: np.ndarray | None = None,
) -> np.ndarray:
    """Convolution via im2col and matrix multiplication.

    ``w_mat`` may carry a cached :func:`filter_matrix` of ``weights``.
    """
    x = _check_input(x, geom)
    if w_mat is None:
        w_mat = filter_matrix(weights, geom)
    h_o, w_o = geom.out_extent(x.shape[2], x.shape[3])
    b = geom.batch
    cols = im2col(x, geom)
    if geom.depthwise:
        c = geom.in_channels
        colsb = cols.reshape(b, c, h_o * w_o, geom.filter_h * geom.filter_w)
        y = np.matmul(colsb, w_mat[None]).reshape(b, c, h_o, w_o)
        macs = cols.size  # one multiply-accumulate per column element
    else:
        y = gemm(cols, w_mat).reshape(b, h_o, w_o, geom.out_channels)
        y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
        macs = cols.shape[0] * cols.shape[1] * geom.out_channels
    if tally is not None:
        tally.column_elements += cols.size
        tally.filter_elements += w_mat.size
        tally.macs += macs
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float32)
        if bias.shape != (geom.out_channels,):
            raise ConfigError(f"bias shape {bias.shape} != ({geom.out_channels},)")
        y = y + bias[None, :, None, None]
    return np.ascontiguousarray(y, dtype=np.float32)


def conv_direct(
    x: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray | None,
    geom: ConvGeometry,
    tally: MacCounter | None = None,
) -> np.ndarray:
    """Convolution by explicit tap loops; no column matrix is formed.

    Accumulation order (tap-major) differs from the im2col+GeMM route, so
    agreement between the two is a meaningful cross-check. The tally counts
    every multiply-accumulate actually executed.
    """
    x = _check_input(x, geom)
    w = _check_weights(weights, geom)
    h_o, w_o = geom.out_extent(x.shape[2], x.shape[3])
    b = geom.batch
    y = np.zeros((b, geom.out_channels, h_o, w_o), dtype=np.float32)
    if h_o == 0 or w_o == 0:
        return y
    xp = _pad_input(x, geom)
    sh, sw = geom.stride
    macs = 0
    for kh in range(geom.filter_h):
        for kw in range(geom.filter_w):
            patch = xp[
                :, :, kh : kh + (h_o - 1) * sh + 1 : sh, kw : kw + (w_o - 1) * sw + 1 : sw
            ]
            if geom.depthwise:
                y += patch * w[:, 0, kh, kw][None, :, None, None]
                macs += patch.size
            else:
                y += np.einsum("bchw,oc->bohw", patch, w[:, :, kh, kw])
                macs += b * h_o * w_o * geom.in_channels * geom.out_channels
    if tally is not None:
        tally.macs += macs
    if bias is not None:
        y = y + np.asarray(bias, dtype=np.float32)[None, :, None, None]
    return np.ascontiguousarray(y, dtype=np.float32)


def transposed_conv_strided(
    x: np.ndarray, weights: np.ndarray, stride: int, phase: int = 0
) -> np.ndarray:
    """Zero-insertion upsampling followed by FIR filtering, per stream.

    ``x`` is ``[streams, n]`` (or 1-D), ``weights`` is ``[streams, taps]``.
    Input sample ``m`` lands at output index ``m*stride + phase``; the output
    is trimmed to exactly ``n*stride`` samples (the filter tail beyond that
    point is the caller's delay-compensation concern).
    """
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    x = np.asarray(x, dtype=np.float32)
    w = np.asarray(weights, dtype=np.float32)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None]
        w = w[None] if w.ndim == 1 else w
    if x.ndim != 2 or w.ndim != 2 or w.shape[0] != x.shape[0]:
        raise ConfigError("expected [streams, n] input with matching [streams, taps] weights")
    if not 0 <= phase < stride:
        raise ConfigError(f"phase must lie in [0, {stride})")
    streams, n = x.shape
    taps = w.shape[1]
    out_len = n * stride
    if n == 0:
        out = np.zeros((streams, 0), dtype=np.float32)
        return out[0] if squeeze else out
    up = np.zeros((streams, (n - 1) * stride + phase + 1), dtype=np.float32)
    up[:, phase::stride] = x
    full = np.zeros((streams, up.shape[1] + taps - 1), dtype=np.float32)
    for s in range(streams):
        full[s] = np.convolve(up[s], w[s])
    out = np.zeros((streams, out_len), dtype=np.float32)
    keep = min(out_len, full.shape[1])
    out[:, :keep] = full[:, :keep]
    return out[0] if squeeze else out


_GELU_C = np.float32(np.sqrt(2.0 / np.pi))
_GELU_A = np.float32(0.044715)


def gelu(x: np.ndarray) -> np.ndarray:
    """GELU, tanh approximation."""
    x = np.asarray(x, dtype=np.float32)
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    return np.float32(0.5) * x * (np.float32(1.0) + np.tanh(inner))


def batchnorm_apply(
    x: np.ndarray,
    mean: np.ndarray,
    var: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    eps: float = 1e-5,
    channel_axis: int = 1,
) -> np.ndarray:
    """Inference-time batch normalization from stored statistics."""
    x = np.asarray(x, dtype=np.float32)
    c = x.shape[channel_axis]
    params = []
    for name, p in (("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)):
        p = np.asarray(p, dtype=np.float32)
        if p.shape != (c,):
            raise ConfigError(f"batchnorm {name} shape {p.shape} != ({c},)")
        params.append(p)
    mean, var, gamma, beta = params
    if np.any(var < 0):
        raise DataError("batchnorm variance must be non-negative")
    shape = [1] * x.ndim
    shape[channel_axis] = c
    scale = (gamma / np.sqrt(var + np.float32(eps))).reshape(shape)
    shift = (beta - mean * gamma / np.sqrt(var + np.float32(eps))).reshape(shape)
    return x * scale + shift
