"""Chunked streaming execution: ring buffers, sessions, latency accounting.

A :class:`StreamSession` drives a built model's layer pipeline chunk by
chunk. Every stateful layer keeps fixed-size caches (allocated once when the
session opens), so memory use is independent of utterance length and each
step touches only the new frames plus cached context.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, StateError
from .tensor import check_finite


class RingBuffer:
    """Fixed-capacity cache of the most recent samples along the last axis.

    Zero-filled at creation (standing in for leading zero padding) and never
    reallocated afterwards: reads return the last ``capacity`` values in
    chronological order.
    """

    def __init__(self, prefix_shape: tuple[int, ...], capacity: int, dtype=np.float32):
        if capacity < 0:
            raise ConfigError("ring capacity must be >= 0")
        self.capacity = capacity
        self._data = np.zeros(prefix_shape + (max(capacity, 1),), dtype=dtype)
        self._pos = 0  # next write slot

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def nbytes(self) -> int:
        return self._data.nbytes

    def write(self, x: np.ndarray) -> None:
        """Append along the last axis, keeping only the newest ``capacity``."""
        if self.capacity == 0:
            return
        m = x.shape[-1]
        if m >= self.capacity:
            self._data[...] = x[..., m - self.capacity :]
            self._pos = 0
            return
        first = min(m, self.capacity - self._pos)
        self._data[..., self._pos : self._pos + first] = x[..., :first]
        rest = m - first
        if rest:
            self._data[..., :rest] = x[..., first:]
        self._pos = (self._pos + m) % self.capacity

    def read_all(self) -> np.ndarray:
        """Chronologically ordered copy of the cached window."""
        if self.capacity == 0:
            return self._data[..., :0]
        return np.concatenate(
            [self._data[..., self._pos :], self._data[..., : self._pos]], axis=-1
        )


def iter_state_arrays(state):
    """Yield every numpy buffer reachable from a (nested) layer state."""
    if state is None:
        return
    if isinstance(state, np.ndarray):
        yield state
        return
    if isinstance(state, RingBuffer):
        yield state.data
        return
    if isinstance(state, (list, tuple)):
        for item in state:
            yield from iter_state_arrays(item)
        return
    attrs = getattr(state, "__dict__", None)
    if attrs:
        for value in attrs.values():
            if isinstance(value, (np.ndarray, RingBuffer, list, tuple)) or hasattr(
                value, "__dict__"
            ):
                if not callable(value):
                    yield from iter_state_arrays(value)


@dataclass
class LatencyReport:
    """Per-configuration latency budget in milliseconds."""

    chunk_buffering_ms: float
    algorithmic_lookahead_ms: float
    synthesis_compute_ms: float | None = None

    @property
    def total_ms(self) -> float:
        return (
            self.chunk_buffering_ms
            + self.algorithmic_lookahead_ms
            + (self.synthesis_compute_ms or 0.0)
        )


def latency_report(model, chunk_t: int, compute_ms: float | None = None) -> LatencyReport:
    """Latency budget for streaming ``model`` at chunk size ``chunk_t``."""
    if chunk_t < 1:
        raise ConfigError("chunk_t must be >= 1")
    frame_ms = 1000.0 * model.config.hop / model.config.sample_rate
    return LatencyReport(
        chunk_buffering_ms=(chunk_t - 1) * frame_ms,
        algorithmic_lookahead_ms=model.future_frames * frame_ms,
        synthesis_compute_ms=compute_ms,
    )


class StreamSession:
    """Single-owner incremental synthesis over one feature stream.

    ``process_chunk`` accepts up to ``chunk_t`` frames (the final call may
    carry fewer) and returns the newly finalized waveform samples;
    ``finish`` flushes lookahead/tail state and closes the session.
    """

    def __init__(self, model, chunk_t: int):
        if chunk_t < 1:
            raise ConfigError("chunk_t must be >= 1")
        self.model = model
        self.chunk_t = chunk_t
        self._state = model.pipeline.init_state()
        self._la_drop = model.config.lookahead * model.config.hop
        self.frames_consumed = 0
        self.samples_emitted = 0
        self.finished = False

    def _emit(self, wave: np.ndarray) -> np.ndarray:
        if self._la_drop and wave.size:
            d = min(self._la_drop, wave.size)
            wave = wave[d:]
            self._la_drop -= d
        out = np.array(wave, dtype=np.float32, copy=True)
        self.samples_emitted += out.size
        return out

    def process_chunk(self, mel: np.ndarray, f0: np.ndarray) -> np.ndarray:
        if self.finished:
            raise StateError("process_chunk after finish")
        mel = np.asarray(mel, dtype=np.float32)
        f0 = np.asarray(f0, dtype=np.float32)
        bins = self.model.config.mel_bins
        if mel.ndim != 2 or mel.shape[0] != bins:
            raise DataError(f"mel chunk must be [{bins}, frames], got {mel.shape}")
        c = mel.shape[1]
        if f0.shape != (c,):
            raise DataError(f"f0 chunk shape {f0.shape} != ({c},)")
        if not 1 <= c <= self.chunk_t:
            raise DataError(f"chunk carries {c} frames, expected 1..{self.chunk_t}")
        check_finite(mel, "mel chunk")
        check_finite(f0, "f0 chunk")
        if float(f0.min()) < 0:
            raise DataError("negative F0")
        wave = self.model.pipeline.push(self._state, (mel, f0))
        self.frames_consumed += c
        return self._emit(wave)

    def finish(self) -> np.ndarray:
        if self.finished:
            raise StateError("session already finished")
        parts = []
        la = self.model.config.lookahead
        if la:
            pad = (
                np.zeros((self.model.config.mel_bins, la), dtype=np.float32),
                np.zeros(la, dtype=np.float32),
            )
            parts.append(self._emit(self.model.pipeline.push(self._state, pad)))
        tail = self.model.pipeline.flush(self._state)
        if tail is not None and tail.size:
            parts.append(self._emit(tail))
        self.finished = True
        if not parts:
            return np.zeros(0, dtype=np.float32)
        return np.concatenate(parts)

    def cache_nbytes(self) -> int:
        """Total bytes held by the session's persistent caches."""
        return sum(a.nbytes for a in iter_state_arrays(self._state))

    def ring_buffer_ids(self) -> list[int]:
        """Identity of every cached buffer; stable ids mean no reallocation."""
        return [id(a) for a in iter_state_arrays(self._state)]


def open_session(model, chunk_t: int) -> StreamSession:
    """Open an independent streaming session with zeroed caches."""
    return StreamSession(model, chunk_t)
