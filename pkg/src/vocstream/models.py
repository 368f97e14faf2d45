"""Forward-pass graphs for the four vocoder variants.

Each variant is assembled from the streaming-capable layers in
:mod:`vocstream.layers`; the same built model serves batch synthesis
(:func:`forward_batch`) and chunked streaming (via
:class:`vocstream.streaming.StreamSession`). Causal variants replace all
time-axis symmetric padding with causal padding; lookahead is realized as an
input-side delay around a strictly causal graph.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import PriorConfig, StftConfig
from .errors import ConfigError, DataError
from .layers import (
    BatchNormStage,
    ComplexPairHead,
    ConvStage,
    GeluStage,
    IstftStage,
    Layer,
    MagPhaseHead,
    MelProjection,
    Pipeline,
    ResidualBlock,
    SynthesisBankStage,
    VocosFrontEnd,
    WavehaxFrontEnd,
    head_to_complex,
)
from .tensor import check_finite

__all__ = [
    "VARIANTS",
    "ModelConfig",
    "Model",
    "WeightError",
    "weight_spec",
    "build",
    "forward_batch",
    "receptive_field",
    "head_to_complex",
]

VARIANTS = ("vocos", "ms_vocos", "wavehax", "ms_wavehax")

_HIDDEN = {"vocos": 512, "ms_vocos": 512, "wavehax": 32, "ms_wavehax": 64}
_EXPANSION = {"vocos": 3, "ms_vocos": 3, "wavehax": 2, "ms_wavehax": 2}
FILTER_TAPS = 63
LOG_MAG_CLAMP = 6.0


class WeightError(DataError):
    """A required weight tensor is missing or ill-shaped."""


@dataclass(frozen=True)
class ModelConfig:
    """Variant description; defaults follow the 24 kHz / 10 ms regime."""

    variant: str
    causal: bool = False
    lookahead: int = 0
    num_blocks: int = 8
    sample_rate: int = 24000
    hop: int = 240
    mel_bins: int = 100
    prior_noise_seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.lookahead not in (0, 1):
            raise ConfigError("lookahead must be 0 or 1")
        if self.lookahead and not self.causal:
            raise ConfigError("lookahead requires a causal model")
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if self.hop * 100 != self.sample_rate:
            raise ConfigError("frame shift must be exactly 10 ms")
        if self.mel_bins < 1:
            raise ConfigError("mel_bins must be >= 1")

    @property
    def streams(self) -> int:
        return 4 if self.variant.startswith("ms_") else 1

    @property
    def hidden_channels(self) -> int:
        return _HIDDEN[self.variant]

    @property
    def expansion(self) -> int:
        return _EXPANSION[self.variant]

    @property
    def is_wavehax(self) -> bool:
        return self.variant.endswith("wavehax")

    @property
    def istft_config(self) -> StftConfig:
        frame = 4 * self.hop if not self.is_wavehax else 2 * self.hop
        frame //= self.streams
        return StftConfig(frame, self.hop // self.streams, self.sample_rate // self.streams)

    @property
    def spectro_bins(self) -> int:
        return self.istft_config.dft_bins

    @property
    def head_channels(self) -> int:
        if self.is_wavehax:
            return 2 * self.streams
        return self.streams * 2 * self.spectro_bins

    @property
    def proj_channels(self) -> int:
        if not self.is_wavehax:
            return 0
        return 2 if self.streams == 1 else self.streams

    @property
    def trunk_in_channels(self) -> int:
        if self.is_wavehax:
            return 2 * self.streams + self.proj_channels
        return self.mel_bins + 1

    @property
    def prior_config(self) -> PriorConfig:
        return PriorConfig(sample_rate=self.sample_rate, hop=self.hop)

    @property
    def name(self) -> str:
        if self.causal:
            return f"{self.variant}-causal-la{self.lookahead}"
        return f"{self.variant}-noncausal"


def _norm_names(prefix: str, c: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.gamma": (c,),
        f"{prefix}.beta": (c,),
        f"{prefix}.mean": (c,),
        f"{prefix}.var": (c,),
    }


def weight_spec(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Required tensor names and shapes, in canonical file order."""
    h = config.hidden_channels
    e = h * config.expansion
    spec: dict[str, tuple[int, ...]] = {}
    if config.is_wavehax:
        f = config.spectro_bins
        spec["mel_proj.weight"] = (config.proj_channels * f, config.mel_bins)
        spec["mel_proj.bias"] = (config.proj_channels * f,)
        if config.streams > 1:
            spec["analysis.weight"] = (config.streams, FILTER_TAPS)
        spec["embed.weight"] = (h, config.trunk_in_channels, 7, 7)
        spec["embed.bias"] = (h,)
        kdw = (h, 1, 7, 7)
    else:
        spec["embed.weight"] = (h, config.trunk_in_channels, 1, 7)
        spec["embed.bias"] = (h,)
        kdw = (h, 1, 1, 7)
    spec.update(_norm_names("embed_norm", h))
    for i in range(config.num_blocks):
        spec[f"blocks.{i}.dw.weight"] = kdw
        spec[f"blocks.{i}.dw.bias"] = (h,)
        spec.update(_norm_names(f"blocks.{i}.norm", h))
        spec[f"blocks.{i}.pw1.weight"] = (e, h, 1, 1)
        spec[f"blocks.{i}.pw1.bias"] = (e,)
        spec[f"blocks.{i}.pw2.weight"] = (h, e, 1, 1)
        spec[f"blocks.{i}.pw2.bias"] = (h,)
    spec.update(_norm_names("final_norm", h))
    spec["head.weight"] = (config.head_channels, h, 1, 1)
    spec["head.bias"] = (config.head_channels,)
    if config.streams > 1:
        spec["synthesis.weight"] = (config.streams, FILTER_TAPS)
    return spec


def _validate_weights(config: ModelConfig, weights: dict[str, np.ndarray]) -> dict:
    out = {}
    for name, shape in weight_spec(config).items():
        if name not in weights:
            raise WeightError(f"missing weight tensor {name!r}")
        t = np.asarray(weights[name], dtype=np.float32)
        if t.shape != shape:
            raise WeightError(f"weight {name!r} has shape {t.shape}, expected {shape}")
        check_finite(t, f"weight {name!r}")
        out[name] = t
    return out


class Model:
    """Immutable built model: config plus an executable layer pipeline."""

    def __init__(self, config: ModelConfig, pipeline: Pipeline):
        self.config = config
        self.pipeline = pipeline

    @property
    def future_frames(self) -> int:
        return self.pipeline.lag + self.config.lookahead

    @property
    def past_frames(self) -> int:
        return self.pipeline.past_frames

    @property
    def name(self) -> str:
        return self.config.name


def _norm_stage(name: str, w: dict) -> BatchNormStage:
    return BatchNormStage(
        name, w[f"{name}.gamma"], w[f"{name}.beta"], w[f"{name}.mean"], w[f"{name}.var"]
    )


def _trunk(config: ModelConfig, w: dict, in_freq: int) -> list[Layer]:
    causal = config.causal
    h = config.hidden_channels
    layers: list[Layer] = [
        ConvStage("embed", w["embed.weight"], w["embed.bias"], causal, in_freq),
        _norm_stage("embed_norm", w),
    ]
    for i in range(config.num_blocks):
        p = f"blocks.{i}"
        inner = [
            ConvStage(f"{p}.dw", w[f"{p}.dw.weight"], w[f"{p}.dw.bias"], causal, in_freq, depthwise=True),
            _norm_stage(f"{p}.norm", w),
            ConvStage(f"{p}.pw1", w[f"{p}.pw1.weight"], w[f"{p}.pw1.bias"], causal, in_freq),
            GeluStage(),
            ConvStage(f"{p}.pw2", w[f"{p}.pw2.weight"], w[f"{p}.pw2.bias"], causal, in_freq),
        ]
        layers.append(ResidualBlock(p, inner, h, in_freq))
    layers.append(_norm_stage("final_norm", w))
    layers.append(ConvStage("head", w["head.weight"], w["head.bias"], causal, in_freq))
    return layers


def build(config: ModelConfig, weights: dict[str, np.ndarray]) -> Model:
    """Validate the weight set and assemble the executable graph."""
    w = _validate_weights(config, weights)
    istft_cfg = config.istft_config
    bins = config.spectro_bins
    s = config.streams
    if config.is_wavehax:
        proj = MelProjection(
            "mel_proj", w["mel_proj.weight"], w["mel_proj.bias"], config.proj_channels, bins
        )
        front = WavehaxFrontEnd(
            proj,
            config.prior_config,
            istft_cfg,
            config.prior_noise_seed,
            analysis_weights=w.get("analysis.weight"),
        )
        layers: list[Layer] = [front]
        layers.extend(_trunk(config, w, in_freq=bins))
        layers.append(ComplexPairHead("complex", s))
    else:
        layers = [VocosFrontEnd(config.mel_bins)]
        layers.extend(_trunk(config, w, in_freq=1))
        layers.append(MagPhaseHead("complex", s, bins, LOG_MAG_CLAMP))
    layers.append(IstftStage("istft", istft_cfg, s, squeeze=(s == 1)))
    if s > 1:
        layers.append(
            SynthesisBankStage("synthesis", w["synthesis.weight"], config.hop // s)
        )
    model = Model(config, Pipeline(layers, name=config.variant))
    _assert_structure(model)
    return model


def _assert_structure(model: Model) -> None:
    """Build-time checks of the variant-defining constants."""
    cfg = model.config
    checks = {
        "vocos": lambda: cfg.head_channels == 962 and cfg.istft_config.frame_length == 960,
        "ms_vocos": lambda: (
            cfg.head_channels == 968
            and cfg.head_channels == cfg.streams * 2 * cfg.spectro_bins
            and cfg.istft_config.frame_length == 240
            and cfg.istft_config.hop == 60
        ),
        "wavehax": lambda: cfg.hidden_channels == 32 and cfg.spectro_bins == 241,
        "ms_wavehax": lambda: (
            cfg.trunk_in_channels == 12
            and cfg.head_channels == 8
            and cfg.hidden_channels == 64
        ),
    }
    if not checks[cfg.variant]():
        raise ConfigError(f"structural constants violated for {cfg.variant}")
    if cfg.streams > 1 and FILTER_TAPS != 63:
        raise ConfigError("filter banks must carry 63 taps")


def forward_batch(model: Model, mel: np.ndarray, f0: np.ndarray) -> np.ndarray:
    """Whole-sequence synthesis; returns exactly ``T * hop`` samples."""
    cfg = model.config
    mel = np.asarray(mel, dtype=np.float32)
    f0 = np.asarray(f0, dtype=np.float32).reshape(-1)
    if mel.ndim != 2 or mel.shape[0] != cfg.mel_bins:
        raise DataError(f"mel must be [{cfg.mel_bins}, T], got {mel.shape}")
    t = mel.shape[1]
    if f0.shape != (t,):
        raise DataError(f"f0 shape {f0.shape} does not match {t} frames")
    if t == 0:
        return np.zeros(0, dtype=np.float32)
    check_finite(mel, "mel")
    check_finite(f0, "f0")
    if float(f0.min()) < 0:
        raise DataError("negative F0")
    la = cfg.lookahead
    if la:
        mel = np.concatenate([mel, np.zeros((cfg.mel_bins, la), np.float32)], axis=1)
        f0 = np.concatenate([f0, np.zeros(la, np.float32)])
    wave = model.pipeline.forward((mel, f0))
    return np.ascontiguousarray(wave[la * cfg.hop :], dtype=np.float32)


def receptive_field(model: Model) -> tuple[int, int]:
    """(past_frames, future_frames) consumed around each output frame."""
    return model.past_frames, model.future_frames
