"""Model layers with paired batch and chunked-streaming execution.

Every layer implements ``forward`` over a whole sequence plus a streaming
triple ``init_state`` / ``push`` / ``flush`` whose concatenated emissions
reproduce ``forward`` on the same input. Time is the trailing axis; a layer
that needs future context under symmetric padding emits ``lag`` frames late
and completes during ``flush``. Causal layers have ``lag == 0`` and emit one
output frame per input frame from the first push.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import (
    HarmonicPrior,
    OverlapAdd,
    PriorConfig,
    StftConfig,
    dft_matrices,
    hann_window,
)
from .errors import ConfigError, DataError
from .streaming import RingBuffer
from .tensor import ConvGeometry, batchnorm_apply, conv, filter_matrix, gelu, gemm


@dataclass(frozen=True)
class CostEntry:
    """One accountable layer: parameter counts and per-frame MACs.

    ``kind`` routes mode handling in the cost counters: ``conv``/``norm``/
    ``filterbank`` entries are trainable model weights, ``transform``
    entries are the fixed DFT matrices of the conv-based STFT/iSTFT path.
    """

    name: str
    weights: int
    biases: int
    macs_per_frame: int
    kind: str


class Layer:
    """Base streaming-capable layer."""

    name = "layer"
    lag = 0  # frames of delayed emission (symmetric time padding)
    past_frames = 0

    def forward(self, x):
        raise NotImplementedError

    def init_state(self):
        return None

    def push(self, state, x):
        return self.forward(x)

    def flush(self, state):
        return None

    def cost_entries(self) -> list[CostEntry]:
        return []


class Pipeline(Layer):
    """Sequential composition; threads pushes and cascades flushes."""

    def __init__(self, layers: list[Layer], name: str = "pipeline"):
        self.layers = layers
        self.name = name

    @property
    def lag(self) -> int:
        return sum(l.lag for l in self.layers)

    @property
    def past_frames(self) -> int:
        return sum(l.past_frames for l in self.layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def init_state(self):
        return [l.init_state() for l in self.layers]

    def push(self, state, x):
        for layer, st in zip(self.layers, state):
            x = layer.push(st, x)
        return x

    def flush(self, state):
        pieces = []
        for i, layer in enumerate(self.layers):
            y = layer.flush(state[i])
            if y is None:
                continue
            for j in range(i + 1, len(self.layers)):
                y = self.layers[j].push(state[j], y)
            pieces.append(y)
        if not pieces:
            return None
        return np.concatenate(pieces, axis=-1)

    def cost_entries(self):
        out = []
        for layer in self.layers:
            out.extend(layer.cost_entries())
        return out


@dataclass
class _ConvState:
    ring: RingBuffer
    skip: int


class ConvStage(Layer):
    """Standard or depthwise convolution over ``[1, C, F, T]``.

    Causal stages pad only the past side of the time axis; symmetric stages
    emit ``(k-1)/2`` frames late. The frequency axis is padded symmetrically
    in both modes.
    """

    def __init__(
        self,
        name: str,
        weights: np.ndarray,
        bias: np.ndarray | None,
        causal: bool,
        in_freq: int,
        depthwise: bool = False,
    ):
        self.name = name
        self.weights = np.asarray(weights, dtype=np.float32)
        self.bias = None if bias is None else np.asarray(bias, dtype=np.float32)
        c_out, c_in_g, kh, kw = self.weights.shape
        groups = c_out if depthwise else 1
        c_in = c_out if depthwise else c_in_g
        if depthwise and c_in_g != 1:
            raise ConfigError(f"{name}: depthwise weights need a unit channel axis")
        self.causal = causal
        self.in_freq = in_freq
        self.k = kw
        self.lag = 0 if causal else (kw - 1) // 2
        self.past_frames = (kw - 1) - self.lag
        self.geom = ConvGeometry(
            batch=1,
            in_channels=c_in,
            out_channels=c_out,
            filter_h=kh,
            filter_w=kw,
            groups=groups,
            padding="causal_time" if causal else "symmetric",
        )
        self._sgeom = ConvGeometry(
            batch=1,
            in_channels=c_in,
            out_channels=c_out,
            filter_h=kh,
            filter_w=kw,
            groups=groups,
            padding="none",
        )
        self._ph = (kh - 1) // 2
        self._w_mat = filter_matrix(self.weights, self.geom)

    def forward(self, x):
        if x.shape[2] != self.in_freq:
            raise DataError(f"{self.name}: frequency extent {x.shape[2]} != {self.in_freq}")
        if x.shape[-1] == 0:
            return self._empty_out()
        return conv(x, self.weights, self.bias, self.geom, w_mat=self._w_mat)

    def _empty_out(self):
        return np.zeros((1, self.geom.out_channels, self.in_freq, 0), dtype=np.float32)

    def init_state(self):
        ring = RingBuffer((1, self.geom.in_channels, self.in_freq), self.k - 1)
        return _ConvState(ring=ring, skip=self.lag)

    def _run_valid(self, seq):
        if seq.shape[-1] < self.k:
            return self._empty_out()
        if self._ph:
            seq = np.pad(seq, ((0, 0), (0, 0), (self._ph, self._ph), (0, 0)))
        return conv(seq, self.weights, self.bias, self._sgeom, w_mat=self._w_mat)

    def push(self, state, x):
        if x.shape[-1] == 0:
            return self._empty_out()
        seq = np.concatenate([state.ring.read_all(), x], axis=-1)
        state.ring.write(x)
        y = self._run_valid(seq)
        if state.skip:
            drop = min(state.skip, y.shape[-1])
            y = y[..., drop:]
            state.skip -= drop
        return y

    def flush(self, state):
        if self.lag == 0:
            return None
        pad = np.zeros((1, self.geom.in_channels, self.in_freq, self.lag), dtype=np.float32)
        return self.push(state, pad)

    def cost_entries(self):
        g = self.geom
        per_frame = self.in_freq * (g.in_channels // g.groups) * g.filter_h * g.filter_w * g.out_channels
        if g.depthwise:
            per_frame = self.in_freq * g.in_channels * g.filter_h * g.filter_w
        return [
            CostEntry(
                self.name,
                self.weights.size,
                0 if self.bias is None else self.bias.size,
                per_frame,
                "conv",
            )
        ]


class BatchNormStage(Layer):
    """Inference-time batch normalization from stored statistics."""

    def __init__(self, name, gamma, beta, mean, var, eps: float = 1e-5):
        self.name = name
        self.gamma = np.asarray(gamma, np.float32)
        self.beta = np.asarray(beta, np.float32)
        self.mean = np.asarray(mean, np.float32)
        self.var = np.asarray(var, np.float32)
        if np.any(self.var < 0):
            raise DataError(f"{name}: negative variance")
        self.eps = eps

    def forward(self, x):
        return batchnorm_apply(x, self.mean, self.var, self.gamma, self.beta, self.eps)

    def cost_entries(self):
        return [CostEntry(self.name, self.gamma.size + self.beta.size, 0, 0, "norm")]


class GeluStage(Layer):
    name = "gelu"

    def forward(self, x):
        return gelu(x)


@dataclass
class _BlockState:
    branch: list
    fifo: np.ndarray


class ResidualBlock(Layer):
    """``y = x + branch(x)`` with the skip path delayed to match the branch."""

    def __init__(self, name: str, inner: list[Layer], channels: int, in_freq: int):
        self.name = name
        self.branch = Pipeline(inner, name=f"{name}.branch")
        self.channels = channels
        self.in_freq = in_freq

    @property
    def lag(self):
        return self.branch.lag

    @property
    def past_frames(self):
        return self.branch.past_frames

    def forward(self, x):
        return x + self.branch.forward(x)

    def init_state(self):
        fifo = np.zeros((1, self.channels, self.in_freq, 0), dtype=np.float32)
        return _BlockState(branch=self.branch.init_state(), fifo=fifo)

    def _pair(self, state, x_new, f):
        fifo = np.concatenate([state.fifo, x_new], axis=-1)
        n = f.shape[-1]
        y = fifo[..., :n] + f
        state.fifo = np.ascontiguousarray(fifo[..., n:])
        return y

    def push(self, state, x):
        f = self.branch.push(state.branch, x)
        return self._pair(state, x, f)

    def flush(self, state):
        f = self.branch.flush(state.branch)
        if f is None:
            return None
        empty = np.zeros((1, self.channels, self.in_freq, 0), dtype=np.float32)
        return self._pair(state, empty, f)

    def cost_entries(self):
        return self.branch.cost_entries()


# ---------------------------------------------------------------------------
# Front ends
# ---------------------------------------------------------------------------


class VocosFrontEnd(Layer):
    """Stack mel and F0 into the 101-channel 1-D trunk input."""

    name = "frontend"

    def __init__(self, mel_bins: int):
        self.mel_bins = mel_bins

    def forward(self, x):
        mel, f0 = x
        joined = np.concatenate([mel, f0[None, :]], axis=0)
        return np.ascontiguousarray(joined, dtype=np.float32)[None, :, None, :]

    def flush(self, state):
        return None


class MelProjection(Layer):
    """Per-frame linear map of mel bins onto (channel, frequency) planes."""

    def __init__(self, name, weight, bias, channels: int, freq: int):
        self.name = name
        self.weight = np.asarray(weight, np.float32)  # [channels*freq, mel_bins]
        self.bias = np.asarray(bias, np.float32)
        self.channels = channels
        self.freq = freq

    def forward(self, mel):
        c = mel.shape[1]
        y = gemm(self.weight, mel) + self.bias[:, None]
        return np.ascontiguousarray(y.reshape(1, self.channels, self.freq, c))

    def cost_entries(self):
        return [
            CostEntry(self.name, self.weight.size, self.bias.size, self.weight.size, "conv")
        ]


def _stft_chunk(seq: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Windowed matrix-DFT of ``[S, n]`` already-padded sample rows.

    Returns ``[S, 2, bins, frames]`` with one frame per hop of new samples.
    """
    s, n = seq.shape
    t = 1 + (n - cfg.frame_length) // cfg.hop if n >= cfg.frame_length else 0
    bins = cfg.dft_bins
    if t <= 0:
        return np.zeros((s, 2, bins, 0), dtype=np.float32)
    window = hann_window(cfg.frame_length)
    frames = np.lib.stride_tricks.sliding_window_view(seq, cfg.frame_length, axis=-1)
    frames = np.ascontiguousarray(frames[:, :: cfg.hop][:, :t]) * window
    fwd, _ = dft_matrices(cfg.frame_length)
    spec = (frames.reshape(s * t, cfg.frame_length) @ fwd).reshape(s, t, 2 * bins)
    out = np.stack([spec[..., :bins], spec[..., bins:]], axis=1)  # [S, 2, T, bins]
    return np.ascontiguousarray(out.transpose(0, 1, 3, 2), dtype=np.float32)


def _analysis_chunk(seq: np.ndarray, weights: np.ndarray, streams: int) -> np.ndarray:
    """Strided analysis filtering of a history-prefixed sample row."""
    taps = weights.shape[1]
    geom = ConvGeometry(
        batch=1,
        in_channels=1,
        out_channels=streams,
        filter_h=1,
        filter_w=taps,
        stride=(1, streams),
        padding="none",
    )
    w = np.ascontiguousarray(weights[:, ::-1]).reshape(streams, 1, 1, taps)
    return conv(seq[None, None, None, :], w, None, geom)[0, :, 0, :]


@dataclass
class _WavehaxFrontState:
    prior: HarmonicPrior
    bank_ring: RingBuffer | None
    stft_ring: RingBuffer


class WavehaxFrontEnd(Layer):
    """Harmonic-prior spectrogram channels concatenated with projected mel.

    Full band: prior -> STFT -> 2 channels. Multi-stream: prior -> analysis
    filtering into ``K`` subscale rows -> per-stream STFT -> ``2K`` channels.
    STFT frames are aligned to end on feature-frame boundaries (the window's
    past context is cached), so the front end adds no lookahead.
    """

    name = "frontend"

    def __init__(
        self,
        mel_proj: MelProjection,
        prior_cfg: PriorConfig,
        stft_cfg: StftConfig,
        noise_seed: int,
        analysis_weights: np.ndarray | None = None,
    ):
        self.mel_proj = mel_proj
        self.prior_cfg = prior_cfg
        self.stft_cfg = stft_cfg
        self.noise_seed = noise_seed
        self.analysis = (
            None if analysis_weights is None else np.asarray(analysis_weights, np.float32)
        )
        self.streams = 1 if self.analysis is None else self.analysis.shape[0]
        self.sub_hop = prior_cfg.hop // self.streams
        if self.sub_hop * self.streams != prior_cfg.hop:
            raise ConfigError("stream count must divide the frame hop")
        self.past_frames = 1

    def _bands(self, prior: np.ndarray, bank_ring: RingBuffer | None) -> np.ndarray:
        if self.analysis is None:
            return prior[None, :]
        taps = self.analysis.shape[1]
        history = (
            np.zeros(taps - self.streams, dtype=np.float32)
            if bank_ring is None
            else bank_ring.read_all()
        )
        if bank_ring is not None:
            bank_ring.write(prior)
        seq = np.concatenate([history, prior])
        return _analysis_chunk(seq, self.analysis, self.streams)

    def _spec(self, bands: np.ndarray, stft_ring: RingBuffer | None) -> np.ndarray:
        margin = self.stft_cfg.frame_length - self.stft_cfg.hop
        history = (
            np.zeros((bands.shape[0], margin), dtype=np.float32)
            if stft_ring is None
            else stft_ring.read_all()
        )
        if stft_ring is not None:
            stft_ring.write(bands)
        seq = np.concatenate([history, bands], axis=-1)
        return _stft_chunk(seq, self.stft_cfg)

    def _combine(self, spec: np.ndarray, mel: np.ndarray) -> np.ndarray:
        s, _, bins, t = spec.shape
        prior_ch = spec.reshape(1, s * 2, bins, t)
        mel_ch = self.mel_proj.forward(mel)
        return np.concatenate([prior_ch, mel_ch], axis=1)

    def forward(self, x):
        mel, f0 = x
        prior = HarmonicPrior(self.prior_cfg, self.noise_seed).process(f0)
        bands = self._bands(prior, None)
        spec = self._spec(bands, None)
        return self._combine(spec, mel)

    def init_state(self):
        taps = 0 if self.analysis is None else self.analysis.shape[1]
        bank_ring = (
            None
            if self.analysis is None
            else RingBuffer((), taps - self.streams)
        )
        margin = self.stft_cfg.frame_length - self.stft_cfg.hop
        return _WavehaxFrontState(
            prior=HarmonicPrior(self.prior_cfg, self.noise_seed),
            bank_ring=bank_ring,
            stft_ring=RingBuffer((self.streams,), margin),
        )

    def push(self, state, x):
        mel, f0 = x
        if f0.size == 0:
            spec = np.zeros((self.streams, 2, self.stft_cfg.dft_bins, 0), dtype=np.float32)
            return self._combine(spec, mel)
        prior = state.prior.process(f0)
        bands = self._bands(prior, state.bank_ring)
        spec = self._spec(bands, state.stft_ring)
        return self._combine(spec, mel)

    def cost_entries(self):
        cfg = self.stft_cfg
        entries = list(self.mel_proj.cost_entries())
        entries.append(
            CostEntry(
                "frontend.stft",
                cfg.frame_length * 2 * cfg.dft_bins + cfg.frame_length,
                0,
                self.streams * cfg.frame_length * 2 * cfg.dft_bins,
                "transform",
            )
        )
        if self.analysis is not None:
            entries.insert(
                0,
                CostEntry(
                    "frontend.analysis",
                    self.analysis.size,
                    0,
                    self.prior_cfg.hop * self.analysis.shape[1],
                    "filterbank",
                ),
            )
        return entries


# ---------------------------------------------------------------------------
# Heads and waveform reconstruction
# ---------------------------------------------------------------------------


def head_to_complex(log_mag, phase, clamp_max: float = 6.0):
    """(real, imag) spectrogram from log-magnitude and phase channels."""
    mag = np.exp(np.minimum(np.asarray(log_mag, np.float32), np.float32(clamp_max)))
    phase = np.asarray(phase, np.float32)
    return mag * np.cos(phase), mag * np.sin(phase)


class MagPhaseHead(Layer):
    """Split stacked per-stream (log-magnitude, phase) channels to complex."""

    def __init__(self, name, streams: int, bins: int, clamp_max: float = 6.0):
        self.name = name
        self.streams = streams
        self.bins = bins
        self.clamp_max = clamp_max

    def forward(self, x):
        c = x.shape[-1]
        v = x[0, :, 0, :].reshape(self.streams, 2, self.bins, c)
        real, imag = head_to_complex(v[:, 0], v[:, 1], self.clamp_max)
        return np.ascontiguousarray(np.stack([real, imag], axis=1))


class ComplexPairHead(Layer):
    """Reinterpret ``2*S`` channels as ``S`` (real, imag) spectrograms."""

    def __init__(self, name, streams: int):
        self.name = name
        self.streams = streams

    def forward(self, x):
        _, ch, freq, t = x.shape
        return np.ascontiguousarray(x[0].reshape(self.streams, 2, freq, t))


class IstftStage(Layer):
    """Per-stream inverse transform; emits ``hop`` samples per frame."""

    def __init__(self, name, cfg: StftConfig, streams: int, squeeze: bool):
        self.name = name
        self.cfg = cfg
        self.streams = streams
        self.squeeze = squeeze
        self.past_frames = cfg.frame_length // cfg.hop - 1

    def _finish(self, y):
        return y[0] if self.squeeze else y

    def forward(self, spec):
        return self._finish(OverlapAdd(self.cfg, self.streams).push(spec))

    def init_state(self):
        return OverlapAdd(self.cfg, self.streams)

    def push(self, state, spec):
        return self._finish(state.push(spec))

    def cost_entries(self):
        cfg = self.cfg
        return [
            CostEntry(
                self.name,
                2 * cfg.dft_bins * cfg.frame_length + cfg.frame_length,
                0,
                self.streams * 2 * cfg.dft_bins * cfg.frame_length,
                "transform",
            )
        ]


@dataclass
class _SynthState:
    tail: np.ndarray


class SynthesisBankStage(Layer):
    """Merge subscale streams through the trainable synthesis filters."""

    def __init__(self, name, weights: np.ndarray, frame_hop: int):
        self.name = name
        self.weights = np.asarray(weights, np.float32)  # [K, taps]
        self.streams, self.taps = self.weights.shape
        self.frame_hop = frame_hop

    def _contrib(self, bands: np.ndarray) -> np.ndarray:
        k, m = bands.shape
        up = np.zeros((k, m * k), dtype=np.float32)
        up[:, k - 1 :: k] = bands
        out = np.zeros(m * k + self.taps - 1, dtype=np.float32)
        for s in range(k):
            out += np.convolve(up[s], self.weights[s])
        return out

    def forward(self, bands):
        m = bands.shape[-1]
        if m == 0:
            return np.zeros(0, dtype=np.float32)
        return self._contrib(bands)[: m * self.streams]

    def init_state(self):
        return _SynthState(tail=np.zeros(self.taps - 1, dtype=np.float32))

    def push(self, state, bands):
        m = bands.shape[-1]
        if m == 0:
            return np.zeros(0, dtype=np.float32)
        total = self._contrib(bands)
        total[: self.taps - 1] += state.tail
        emit = total[: m * self.streams].copy()
        np.copyto(state.tail, total[m * self.streams :])
        return emit

    def cost_entries(self):
        return [
            CostEntry(
                self.name, self.weights.size, 0, self.frame_hop * self.taps, "filterbank"
            )
        ]
