"""Streaming ConvNeXt-vocoder inference engine and cost/latency laboratory.

Four frame-level vocoder variants (full-band and multi-stream, 1-D and 2-D
convolutional) run in batch or chunked-streaming mode over one shared layer
graph, alongside closed-form im2col/GeMM cost accounting and a
real-time-factor benchmark harness.
"""

from .dsp import (
    FilterBank,
    PriorConfig,
    StftConfig,
    analysis_apply,
    design_pqmf,
    harmonic_prior,
    istft,
    stft,
    synthesis_apply,
)
from .errors import (
    ConfigError,
    DataError,
    DesignError,
    FormatError,
    NumericError,
    StateError,
    VocstreamError,
)
from .models import (
    VARIANTS,
    Model,
    ModelConfig,
    WeightError,
    build,
    forward_batch,
    head_to_complex,
    receptive_field,
    weight_spec,
)
from .storage import (
    extract_features,
    generate_random_weights,
    read_features,
    read_wav,
    read_weights,
    write_features,
    write_wav,
    write_weights,
)
from .streaming import LatencyReport, StreamSession, latency_report, open_session

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DesignError",
    "FilterBank",
    "FormatError",
    "LatencyReport",
    "Model",
    "ModelConfig",
    "NumericError",
    "PriorConfig",
    "StateError",
    "StftConfig",
    "StreamSession",
    "VARIANTS",
    "VocstreamError",
    "WeightError",
    "analysis_apply",
    "build",
    "design_pqmf",
    "extract_features",
    "forward_batch",
    "generate_random_weights",
    "harmonic_prior",
    "head_to_complex",
    "istft",
    "latency_report",
    "open_session",
    "read_features",
    "read_wav",
    "read_weights",
    "receptive_field",
    "stft",
    "synthesis_apply",
    "weight_spec",
    "write_features",
    "write_wav",
    "write_weights",
    "__version__",
]
