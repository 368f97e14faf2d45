"""Bit-exact file formats, seeded weight generation, feature extraction.

All integers are little-endian and all payloads are little-endian float32,
so files written on any machine parse identically everywhere.
"""
from __future__ import annotations

import struct

import numpy as np

from .dsp import design_pqmf, dft_matrices, hann_window
from .errors import DataError, FormatError
from .models import FILTER_TAPS, ModelConfig, weight_spec
from .tensor import check_finite

WEIGHT_MAGIC = b"MSWT"
FEATURE_MAGIC = b"MSWF"
FORMAT_VERSION = 1


class _Reader:
    """Byte cursor that reports the offset of any truncation."""

    def __init__(self, blob: bytes, label: str):
        self.blob = blob
        self.pos = 0
        self.label = label

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.label}: truncated file", offset=self.pos)
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


# ---------------------------------------------------------------------------
# Weight files
# ---------------------------------------------------------------------------


def write_weights(path, tensors: dict[str, np.ndarray]) -> None:
    parts = [WEIGHT_MAGIC, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    for name, t in tensors.items():
        t = np.ascontiguousarray(t, dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", 0, t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(t.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), str(path))
    if r.take(4) != WEIGHT_MAGIC:
        raise FormatError(f"{r.label}: bad magic, not a weight file", offset=0)
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"{r.label}: unsupported version {version}", offset=4)
    count = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u16()).decode("utf-8")
        if name in tensors:
            raise FormatError(f"{r.label}: duplicate tensor {name!r}", offset=r.pos)
        dtype = r.u8()
        if dtype != 0:
            raise FormatError(f"{r.label}: unknown dtype {dtype}", offset=r.pos - 1)
        ndim = r.u8()
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        n = int(np.prod(dims)) if ndim else 1
        payload = r.take(4 * n)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    return tensors


# ---------------------------------------------------------------------------
# Feature files
# ---------------------------------------------------------------------------


def write_features(path, mel: np.ndarray, f0: np.ndarray) -> None:
    mel = np.asarray(mel, dtype="<f4")
    f0 = np.asarray(f0, dtype="<f4").reshape(-1)
    if mel.ndim != 2 or mel.shape[0] != 100:
        raise DataError(f"mel must be [100, T], got {mel.shape}")
    t = mel.shape[1]
    if f0.shape != (t,):
        raise DataError(f"f0 length {f0.shape} does not match {t} frames")
    check_finite(mel, "mel")
    if t and float(f0.min()) < 0:
        raise DataError("negative F0")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, t, 100))
        fh.write(np.ascontiguousarray(mel.T).tobytes())  # frame-major rows
        fh.write(f0.tobytes())


def read_features(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), str(path))
    if r.take(4) != FEATURE_MAGIC:
        raise FormatError(f"{r.label}: bad magic, not a feature file", offset=0)
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"{r.label}: unsupported version {version}", offset=4)
    t = r.u32()
    bins = r.u32()
    if bins != 100:
        raise FormatError(f"{r.label}: expected 100 mel bins, got {bins}", offset=12)
    mel = np.frombuffer(r.take(4 * t * bins), dtype="<f4").reshape(t, bins).T
    f0 = np.frombuffer(r.take(4 * t), dtype="<f4").copy()
    if r.pos != len(r.blob):
        raise FormatError(f"{r.label}: trailing bytes", offset=r.pos)
    mel = np.ascontiguousarray(mel, dtype=np.float32)
    check_finite(mel, "mel")
    if t and float(f0.min()) < 0:
        raise DataError("negative F0 in feature file")
    return mel, f0


# ---------------------------------------------------------------------------
# WAV files
# ---------------------------------------------------------------------------


def write_wav(path, wave: np.ndarray, sample_rate: int = 24000) -> None:
    """Mono 16-bit PCM; samples are clamped to [-1, 1] before quantization."""
    wave = np.asarray(wave, dtype=np.float32).reshape(-1)
    q = np.clip(np.rint(np.clip(wave, -1.0, 1.0) * 32768.0), -32768, 32767)
    payload = q.astype("<i2").tobytes()
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 36 + len(payload)))
        fh.write(b"WAVE")
        fh.write(b"fmt ")
        fh.write(struct.pack("<IHHIIHH", 16, 1, 1, sample_rate, sample_rate * 2, 2, 16))
        fh.write(b"data")
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)


def read_wav(path, expect_rate: int | None = None) -> tuple[np.ndarray, int]:
    """Read mono PCM16 or float32 WAV; returns (float32 samples, rate)."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), str(path))
    if r.take(4) != b"RIFF":
        raise FormatError(f"{r.label}: not a RIFF file", offset=0)
    r.take(4)
    if r.take(4) != b"WAVE":
        raise FormatError(f"{r.label}: not a WAVE file", offset=8)
    fmt = None
    data = None
    while r.pos + 8 <= len(r.blob):
        cid = r.take(4)
        size = r.u32()
        body = r.take(size + (size % 2))[:size]
        if cid == b"fmt ":
            if size < 16:
                raise FormatError(f"{r.label}: fmt chunk too small", offset=r.pos - size)
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            data = body
    if fmt is None or data is None:
        raise FormatError(f"{r.label}: missing fmt or data chunk", offset=r.pos)
    audio_format, channels, rate, _, _, bits = fmt
    if channels != 1:
        raise DataError(f"{r.label}: expected mono audio, got {channels} channels")
    if audio_format == 1 and bits == 16:
        wave = np.frombuffer(data, dtype="<i2").astype(np.float32) / 32768.0
    elif audio_format == 3 and bits == 32:
        wave = np.frombuffer(data, dtype="<f4").astype(np.float32)
    else:
        raise FormatError(f"{r.label}: unsupported format {audio_format}/{bits}-bit")
    if expect_rate is not None and rate != expect_rate:
        raise DataError(f"{r.label}: sample rate {rate} != required {expect_rate}")
    return wave, rate


# ---------------------------------------------------------------------------
# Weight generation
# ---------------------------------------------------------------------------


def generate_random_weights(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Seeded He-uniform initialization passing build() validation.

    Conv/linear weights are He-uniform over their fan-in, biases zero,
    normalization statistics identity, and the filter banks start from the
    PQMF design. Each residual branch's output projection is scaled by
    ``1/num_blocks`` (and the head halved) so activations stay O(1) through
    the residual stack; unscaled He-uniform inflates them by two orders of
    magnitude over eight blocks, which drowns waveform comparisons in
    float32 rounding noise.
    """
    rng = np.random.default_rng(seed)
    bank = design_pqmf(config.streams, FILTER_TAPS) if config.streams > 1 else None
    out: dict[str, np.ndarray] = {}
    for name, shape in weight_spec(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if name == "analysis.weight":
            out[name] = bank.analysis.copy()
        elif name == "synthesis.weight":
            out[name] = bank.synthesis.copy()
        elif leaf in ("bias", "beta", "mean"):
            out[name] = np.zeros(shape, dtype=np.float32)
        elif leaf in ("gamma", "var"):
            out[name] = np.ones(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            if ".pw2." in name:
                bound /= config.num_blocks
            elif name.startswith("head."):
                bound *= 0.05 / config.streams
            out[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return out


# ---------------------------------------------------------------------------
# Feature extraction
# ---------------------------------------------------------------------------

_MEL_FFT = 1024
_MEL_FMAX = 8000.0
_F0_MIN = 60.0
_F0_MAX = 500.0
_VOICING_THRESHOLD = 0.3
_LOG_MEL_FLOOR = 1e-5


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _mel_filterbank(n_mels: int, n_fft: int, rate: int, fmax: float) -> np.ndarray:
    bins = n_fft // 2 + 1
    pts = _mel_to_hz(np.linspace(_hz_to_mel(0.0), _hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(bins) * rate / n_fft
    fb = np.zeros((n_mels, bins))
    for i in range(n_mels):
        lo, mid, hi = pts[i], pts[i + 1], pts[i + 2]
        up = (freqs - lo) / max(mid - lo, 1e-9)
        down = (hi - freqs) / max(hi - mid, 1e-9)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb.astype(np.float32)


def _frame_signal(wave: np.ndarray, hop: int, frame: int) -> np.ndarray:
    t = wave.size // hop
    half = frame // 2
    padded = np.pad(wave, (half, frame), mode="reflect")
    centers = np.arange(t) * hop + hop // 2
    idx = centers[:, None] + np.arange(frame)[None, :]
    return padded[idx]


def _autocorr_f0(frames: np.ndarray, rate: int) -> np.ndarray:
    t, n = frames.shape
    lag_lo = int(np.floor(rate / _F0_MAX))
    lag_hi = int(np.ceil(rate / _F0_MIN))
    x = frames - frames.mean(axis=1, keepdims=True)
    f0 = np.zeros(t, dtype=np.float32)
    for i in range(t):
        xi = x[i]
        e0 = float(xi @ xi)
        if e0 < 1e-8:
            continue
        lags = np.arange(lag_lo, lag_hi + 1)
        corr = np.empty(lags.size)
        for j, tau in enumerate(lags):
            a = xi[: n - tau]
            b = xi[tau:]
            denom = np.sqrt(float(a @ a) * float(b @ b)) + 1e-12
            corr[j] = float(a @ b) / denom
        best = float(corr.max())
        if best < _VOICING_THRESHOLD:
            continue
        # prefer the shortest lag close to the peak to dodge octave errors
        candidates = np.nonzero(corr >= 0.85 * best)[0]
        tau = int(lags[candidates[0]])
        f0[i] = rate / tau
    return f0


def extract_features(wave: np.ndarray, sample_rate: int) -> tuple[np.ndarray, np.ndarray]:
    """100-bin log-mel (0-8 kHz, 1024-point DFT) plus autocorrelation F0.

    One frame per 240-sample hop; returns (mel [100, T], f0 [T]).
    """
    if sample_rate != 24000:
        raise DataError(f"synthesis features require 24 kHz input, got {sample_rate}")
    wave = np.asarray(wave, dtype=np.float32).reshape(-1)
    hop = 240
    t = wave.size // hop
    if t == 0:
        return np.zeros((100, 0), np.float32), np.zeros(0, np.float32)
    frames = _frame_signal(wave, hop, _MEL_FFT)
    windowed = frames * hann_window(_MEL_FFT)
    fwd, _ = dft_matrices(_MEL_FFT)
    spec = windowed.astype(np.float32) @ fwd
    bins = _MEL_FFT // 2 + 1
    mag = np.hypot(spec[:, :bins], spec[:, bins:])
    fb = _mel_filterbank(100, _MEL_FFT, sample_rate, _MEL_FMAX)
    mel = np.log(np.maximum(mag @ fb.T, _LOG_MEL_FLOOR)).T
    f0 = _autocorr_f0(frames, sample_rate)
    return np.ascontiguousarray(mel, np.float32), f0
