import numpy as np
import pytest

from vocstream import ModelConfig, build, generate_random_weights
from vocstream.bench import synthetic_features


@pytest.fixture(scope="session")
def model_cache():
    """Build-once cache keyed by (variant, causal, lookahead, blocks, seed)."""
    cache = {}

    def get(variant, causal=False, lookahead=0, blocks=8, seed=11):
        key = (variant, causal, lookahead, blocks, seed)
        if key not in cache:
            cfg = ModelConfig(variant, causal=causal, lookahead=lookahead, num_blocks=blocks)
            cache[key] = build(cfg, generate_random_weights(cfg, seed))
        return cache[key]

    return get


@pytest.fixture()
def features():
    def make(frames, seed=3):
        return synthetic_features(frames, seed)

    return make


def stream_waveform(model, mel, f0, chunk):
    """Concatenated streaming emissions over a whole feature sequence."""
    from vocstream import open_session

    session = open_session(model, chunk)
    t = mel.shape[1]
    parts = []
    i = 0
    while i < t:
        c = min(chunk, t - i)
        parts.append(session.process_chunk(mel[:, i : i + c], f0[i : i + c]))
        i += c
    parts.append(session.finish())
    return np.concatenate(parts), session
