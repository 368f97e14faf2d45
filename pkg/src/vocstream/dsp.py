"""Signal-processing primitives: STFT/iSTFT, harmonic prior, PQMF banks.

The DFT is evaluated through precomputed real-DFT matrices so the transform
runs as one matrix multiplication per chunk of frames, the same form the
cost counters account for. iSTFT uses per-sample squared-window overlap-add
normalization, accumulated frame by frame in a fixed order so chunked and
whole-sequence execution agree.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DataError, DesignError, NumericError
from .tensor import ConvGeometry, conv, transposed_conv_strided

DEN_FLOOR = 1e-8  # overlap-add normalization guard


@dataclass(frozen=True)
class StftConfig:
    """Frame/hop geometry for the matrix-DFT short-time transform."""

    frame_length: int
    hop: int
    sample_rate: int = 24000

    def __post_init__(self):
        if self.frame_length < 2 or self.frame_length % 2:
            raise ConfigError("frame_length must be even and >= 2")
        if self.hop < 1 or self.frame_length % self.hop:
            raise ConfigError("hop must divide frame_length")

    @property
    def dft_bins(self) -> int:
        return self.frame_length // 2 + 1


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window."""
    k = np.arange(n, dtype=np.float64)
    return (0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)).astype(np.float32)


@lru_cache(maxsize=16)
def dft_matrices(frame_length: int) -> tuple[np.ndarray, np.ndarray]:
    """(forward [L, 2*bins], inverse [2*bins, L]) real-DFT matrices.

    Forward maps a time frame to (real, imag) halves with the usual
    ``imag = -sum(x*sin)`` sign convention; inverse applies hermitian
    weights so ``frame @ fwd @ inv == frame`` up to float rounding.
    """
    L = frame_length
    bins = L // 2 + 1
    n = np.arange(L, dtype=np.float64)
    b = np.arange(bins, dtype=np.float64)
    ang = 2.0 * np.pi * np.outer(n, b) / L  # [L, bins]
    fwd = np.concatenate([np.cos(ang), -np.sin(ang)], axis=1)
    w = np.full(bins, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    inv_r = (w[:, None] / L) * np.cos(ang.T)
    inv_i = -(w[:, None] / L) * np.sin(ang.T)
    inv = np.concatenate([inv_r, inv_i], axis=0)
    return fwd.astype(np.float32), inv.astype(np.float32)


def frame_count(n_samples: int, cfg: StftConfig) -> int:
    return 1 + (n_samples - cfg.frame_length) // cfg.hop


def stft(wave: np.ndarray, cfg: StftConfig, center: str = "none") -> np.ndarray:
    """Short-time transform; returns ``[2, dft_bins, frames]`` (real, imag).

    ``center="reflect"`` pads frame_length/2 on each side, which needs the
    full signal up front; streaming paths use ``center="none"``.
    """
    wave = np.asarray(wave, dtype=np.float32).reshape(-1)
    if wave.size == 0:
        raise DataError("stft input is empty")
    if center == "reflect":
        half = cfg.frame_length // 2
        wave = np.pad(wave, (half, half), mode="reflect")
    elif center != "none":
        raise ConfigError(f"unknown centering mode {center!r}")
    if wave.size < cfg.frame_length:
        raise DataError(
            f"wave length {wave.size} shorter than frame_length {cfg.frame_length}"
        )
    t = frame_count(wave.size, cfg)
    window = hann_window(cfg.frame_length)
    frames = np.lib.stride_tricks.sliding_window_view(wave, cfg.frame_length)
    frames = np.ascontiguousarray(frames[:: cfg.hop][:t]) * window
    fwd, _ = dft_matrices(cfg.frame_length)
    spec = frames @ fwd  # [T, 2*bins]
    bins = cfg.dft_bins
    out = np.stack([spec[:, :bins].T, spec[:, bins:].T])
    return np.ascontiguousarray(out, dtype=np.float32)


def ola_denominator(cfg: StftConfig) -> np.ndarray:
    """Steady-state squared-window overlap-add profile over one hop.

    ``den[p] = sum_j window[p + j*hop]**2`` -- the normalization every
    retained sample receives. Raises :class:`NumericError` if any phase of
    the profile falls below ``DEN_FLOOR`` (a degenerate window/hop pairing).
    """
    w = hann_window(cfg.frame_length).astype(np.float64)
    den = (w * w).reshape(-1, cfg.hop).sum(axis=0).astype(np.float32)
    if float(den.min()) < DEN_FLOOR:
        raise NumericError(
            "squared-window overlap-add denominator below threshold "
            f"for frame_length={cfg.frame_length}, hop={cfg.hop}"
        )
    return den


class OverlapAdd:
    """Frame-by-frame iSTFT accumulator shared by batch and streaming paths.

    Holds the next ``frame_length`` output samples' partial sums; each
    pushed spectral frame finalizes ``hop`` samples, normalized by the
    steady-state squared-window profile. Missing leading overlaps therefore
    fade in with the window instead of being renormalized, which keeps the
    division safe and chunk-size independent.
    """

    def __init__(self, cfg: StftConfig, streams: int = 1):
        self.cfg = cfg
        self.streams = streams
        self.window = hann_window(cfg.frame_length)
        self.den = ola_denominator(cfg)
        _, self.inv = dft_matrices(cfg.frame_length)
        self.num = np.zeros((streams, cfg.frame_length), dtype=np.float32)

    def push(self, spec_chunk: np.ndarray) -> np.ndarray:
        """``spec_chunk``: [streams, 2, bins, frames] -> [streams, frames*hop]."""
        s, two, bins, t = spec_chunk.shape
        if s != self.streams or two != 2 or bins != self.cfg.dft_bins:
            raise DataError(f"spectrogram chunk shape {spec_chunk.shape} invalid")
        hop = self.cfg.hop
        L = self.cfg.frame_length
        if t == 0:
            return np.zeros((self.streams, 0), dtype=np.float32)
        flat = np.concatenate(
            [spec_chunk[:, 0].transpose(0, 2, 1), spec_chunk[:, 1].transpose(0, 2, 1)],
            axis=2,
        ).reshape(s * t, 2 * bins)
        frames_time = (flat @ self.inv).reshape(s, t, L) * self.window
        out = np.empty((s, t * hop), dtype=np.float32)
        margin = L - hop
        for i in range(t):
            self.num += frames_time[:, i]
            out[:, i * hop : (i + 1) * hop] = self.num[:, :hop] / self.den
            self.num[:, :margin] = self.num[:, hop:]
            self.num[:, margin:] = 0
        return out


def istft(spec: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Inverse transform of ``[2, bins, T]``; returns exactly ``T*hop`` samples.

    Output sample ``n`` is finalized by spectral frame ``n // hop``, so the
    transform adds no lookahead; the trailing ``frame_length - hop`` tail of
    the raw overlap-add is dropped.
    """
    spec = np.asarray(spec, dtype=np.float32)
    if spec.ndim != 3 or spec.shape[0] != 2 or spec.shape[1] != cfg.dft_bins:
        raise DataError(f"spectrogram shape {spec.shape} does not match config")
    ola = OverlapAdd(cfg, streams=1)
    return ola.push(spec[None])[0]


# ---------------------------------------------------------------------------
# Harmonic prior
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorConfig:
    """Harmonic-prior synthesis settings (sample-level)."""

    sample_rate: int = 24000
    hop: int = 240
    voiced_amplitude: float = 0.1
    unvoiced_noise_std: float = 0.003

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2.0


_TWO_PI = 2.0 * np.pi


class HarmonicPrior:
    """Stateful prior-waveform generator; one frame of F0 per step.

    Sample-level F0 ramps linearly from the previous frame's value to the
    current one (it holds constant around unvoiced neighbours), each
    harmonic ``k`` carries phase ``k * phi1`` from one shared accumulator,
    and unvoiced frames draw Gaussian noise keyed by (seed, absolute frame)
    so chunked and whole-sequence generation are bit-identical.
    """

    def __init__(self, cfg: PriorConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = int(seed)
        self.phase = 0.0  # phi1 carry, f64
        self.prev_f0 = 0.0
        self.frame_index = 0

    def process(self, f0_frames: np.ndarray) -> np.ndarray:
        f0_frames = np.asarray(f0_frames, dtype=np.float32).reshape(-1)
        if f0_frames.size and float(f0_frames.min()) < 0:
            raise DataError("negative F0")
        hop = self.cfg.hop
        rate = float(self.cfg.sample_rate)
        out = np.zeros(f0_frames.size * hop, dtype=np.float32)
        ramp = np.arange(1, hop + 1, dtype=np.float64) / hop
        for i, f0 in enumerate(f0_frames.astype(np.float64)):
            lo = i * hop
            if f0 > 0.0:
                start = self.prev_f0 if self.prev_f0 > 0.0 else f0
                f0_s = start + (f0 - start) * ramp
                inc = _TWO_PI * f0_s / rate
                phi1 = np.cumsum(np.concatenate(([self.phase], inc)))[1:]
                kcount = np.floor(self.cfg.nyquist / f0_s).astype(np.int64)
                kmax = int(kcount.max())
                if kmax >= 1:
                    k = np.arange(1, kmax + 1, dtype=np.float64)
                    sins = np.sin(k[:, None] * phi1[None, :])
                    mask = k[:, None] <= kcount[None, :]
                    sig = (sins * mask).sum(axis=0)
                    sig *= self.cfg.voiced_amplitude / np.sqrt(kcount)
                    out[lo : lo + hop] = sig.astype(np.float32)
                self.phase = float(phi1[-1] % _TWO_PI)
            elif self.cfg.unvoiced_noise_std > 0.0:
                rng = np.random.default_rng([self.seed, self.frame_index])
                out[lo : lo + hop] = (
                    rng.standard_normal(hop) * self.cfg.unvoiced_noise_std
                ).astype(np.float32)
            self.prev_f0 = float(f0)
            self.frame_index += 1
        return out


def harmonic_prior(f0_frames: np.ndarray, cfg: PriorConfig, seed: int = 0) -> np.ndarray:
    """Whole-sequence prior waveform; ``frames * hop`` samples."""
    return HarmonicPrior(cfg, seed).process(f0_frames)


# ---------------------------------------------------------------------------
# PQMF filter banks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilterBank:
    """Cosine-modulated analysis/synthesis bank (coefficients, not state)."""

    streams: int
    taps: int
    analysis: np.ndarray  # [K, taps]
    synthesis: np.ndarray  # [K, taps]

    @property
    def group_delay(self) -> int:
        return self.taps - 1


def _kaiser_prototype(taps: int, cutoff: float, beta: float) -> np.ndarray:
    mid = (taps - 1) / 2.0
    n = np.arange(taps, dtype=np.float64) - mid
    with np.errstate(invalid="ignore", divide="ignore"):
        h = np.sin(np.pi * cutoff * n) / (np.pi * n)
    if taps % 2:
        h[int(mid)] = cutoff
    return h * np.kaiser(taps, beta)


def _modulated_bank(prototype: np.ndarray, streams: int) -> tuple[np.ndarray, np.ndarray]:
    taps = prototype.size
    n = np.arange(taps, dtype=np.float64) - (taps - 1) / 2.0
    analysis = np.zeros((streams, taps))
    synthesis = np.zeros((streams, taps))
    for k in range(streams):
        ang = (2 * k + 1) * (np.pi / (2 * streams)) * n
        sign = (-1.0) ** k * np.pi / 4.0
        analysis[k] = 2.0 * prototype * np.cos(ang + sign)
        # time-reversed conjugate modulation, scaled by the stream count to
        # compensate the energy dropped by zero-insertion upsampling
        synthesis[k] = 2.0 * streams * prototype * np.cos(ang - sign)
    return analysis.astype(np.float32), synthesis.astype(np.float32)


def analysis_apply(wave: np.ndarray, bank: FilterBank) -> np.ndarray:
    """Strided analysis filtering: ``[n] -> [K, ceil(n/K)]``.

    Subscale sample ``m`` of every band depends only on input samples up to
    ``K*m + K - 1`` (fully causal); the filter history is zero-initialized.
    """
    wave = np.asarray(wave, dtype=np.float32).reshape(-1)
    k = bank.streams
    n = wave.size
    if n % k:
        wave = np.pad(wave, (0, k - n % k))
    if wave.size == 0:
        return np.zeros((k, 0), dtype=np.float32)
    left = bank.taps - k
    x = np.pad(wave, (left, 0))[None, None, None, :]
    geom = ConvGeometry(
        batch=1,
        in_channels=1,
        out_channels=k,
        filter_h=1,
        filter_w=bank.taps,
        stride=(1, k),
        padding="none",
    )
    weights = bank.analysis[:, ::-1].reshape(k, 1, 1, bank.taps)
    return conv(x, weights, None, geom)[0, :, 0, :]


def synthesis_apply(bands: np.ndarray, bank: FilterBank) -> np.ndarray:
    """Merge ``[K, m]`` subscale streams into ``m*K`` output samples.

    Upsampled samples sit at phase ``K-1`` so the analysis+synthesis cascade
    has a flat ``taps-1`` sample delay; the tail past ``m*K`` is dropped.
    """
    bands = np.asarray(bands, dtype=np.float32)
    if bands.ndim != 2 or bands.shape[0] != bank.streams:
        raise DataError(f"expected [K={bank.streams}, m] subscale input, got {bands.shape}")
    k = bank.streams
    per_stream = transposed_conv_strided(bands, bank.synthesis, stride=k, phase=k - 1)
    return per_stream.sum(axis=0)


def _cascade_delta_error(bank: FilterBank) -> tuple[float, float]:
    """(error_power, signal_power) of the delayed-delta reconstruction."""
    n = max(8 * bank.taps, 8 * bank.streams)
    n += (-n) % bank.streams
    x = np.zeros(n, dtype=np.float32)
    x[0] = 1.0
    y = synthesis_apply(analysis_apply(x, bank), bank)
    target = np.zeros_like(y)
    target[bank.group_delay] = 1.0
    err = float(np.sum((y - target) ** 2))
    return err, 1.0


def design_pqmf(streams: int = 4, taps: int = 63, beta: float = 9.0) -> FilterBank:
    """Design a near-perfect-reconstruction bank.

    The Kaiser-window lowpass prototype's cutoff is found by golden-section
    search over ``0.5/K * (1 +/- 0.2)``, minimizing the squared error of a
    delta passed through analysis then synthesis against a delta delayed by
    ``taps - 1`` samples.
    """
    if streams < 1 or taps < 1:
        raise ConfigError("streams and taps must be >= 1")
    if streams == 1:
        one = np.ones((1, 1), dtype=np.float32)
        return FilterBank(streams=1, taps=1, analysis=one, synthesis=one.copy())

    def objective(cutoff: float) -> float:
        proto = _kaiser_prototype(taps, cutoff, beta)
        ana, syn = _modulated_bank(proto, streams)
        err, _ = _cascade_delta_error(FilterBank(streams, taps, ana, syn))
        return err

    base = 0.5 / streams
    lo, hi = 0.8 * base, 1.2 * base
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = objective(c), objective(d)
    for _ in range(48):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = objective(d)
    cutoff = (a + b) / 2.0
    proto = _kaiser_prototype(taps, cutoff, beta)
    ana, syn = _modulated_bank(proto, streams)
    bank = FilterBank(streams=streams, taps=taps, analysis=ana, synthesis=syn)
    err, sig = _cascade_delta_error(bank)
    snr_db = 10.0 * np.log10(sig / max(err, 1e-300))
    if snr_db < 40.0:
        raise DesignError(
            f"PQMF design reached only {snr_db:.1f} dB reconstruction SNR "
            f"(streams={streams}, taps={taps}, beta={beta}, cutoff={cutoff:.5f})"
        )
    return bank
