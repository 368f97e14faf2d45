"""Acceptance checks: one callable per release criterion.

Shared by ``tests/test_acceptance.py`` and the ``verify`` CLI subcommand.
Each check returns (passed, detail); the runner prints one line per
criterion. Tolerances are fixed here, not configurable.
"""
from __future__ import annotations

import tracemalloc
from dataclasses import dataclass

import numpy as np

from . import costmodel as cm
from .bench import BenchPlan, smoke_plan, summarize, synthetic_features, run_plan
from .dsp import StftConfig, design_pqmf, analysis_apply, synthesis_apply, istft, stft
from .models import ModelConfig, build, forward_batch, receptive_field
from .storage import generate_random_weights
from .streaming import latency_report, open_session
from .tensor import MacCounter, conv_direct, im2col

SEED = 2024

# Published residual-block cost cells: (X slope, Y, MACs slope).
TABLE_CELLS = {
    "DW 1D": (3584, 3584, 3584),
    "PW-1st 1D": (512, 786432, 786432),
    "PW-2nd 1D": (1536, 786432, 786432),
    "DW 2D": (377888, 1568, 377888),
    "PW-1st 2D": (7712, 2048, 493568),
    "PW-2nd 2D": (15424, 2048, 493568),
}

ALL_VARIANTS = ("vocos", "ms_vocos", "wavehax", "ms_wavehax")
CAUSALITY = ((False, 0), (True, 0), (True, 1))
STREAM_TOL = 1e-4


@dataclass
class AcceptanceResult:
    cid: str
    name: str
    passed: bool
    detail: str


def _model(variant: str, causal: bool = False, lookahead: int = 0):
    cfg = ModelConfig(variant, causal=causal, lookahead=lookahead)
    return build(cfg, generate_random_weights(cfg, SEED))


def _stream_waveform(model, mel, f0, chunk: int) -> np.ndarray:
    session = open_session(model, chunk)
    t = mel.shape[1]
    parts = []
    i = 0
    while i < t:
        c = min(chunk, t - i)
        parts.append(session.process_chunk(mel[:, i : i + c], f0[i : i + c]))
        i += c
    parts.append(session.finish())
    return np.concatenate(parts)


def check_cost_table() -> tuple[bool, str]:
    """C1: the six-row im2col cost table reproduces every published cell."""
    rows = {r.name: r.cost for r in cm.block_cost_table()}
    for name, (x, y, macs) in TABLE_CELLS.items():
        c = rows[name]
        got = (c.column.at(1), c.filter.at(1), c.macs.at(1))
        if got != (x, y, macs) or c.column.intercept or c.macs.intercept or c.filter.slope:
            return False, f"{name}: got {got}, expected {(x, y, macs)}"
    return True, "18/18 cells exact"


def check_aggregate_curves() -> tuple[bool, str]:
    """C2: aggregate X+Y lines, ordering, and crossover location."""
    a = cm.aggregate_profile("vocos_1d").aggregate
    b = cm.aggregate_profile("wavehax_2d").aggregate
    if (a.slope, a.intercept) != (5632, 1576448):
        return False, f"1D aggregate {a}"
    if (b.slope, b.intercept) != (401024, 5664):
        return False, f"2D aggregate {b}"
    if not (a.intercept > b.intercept and b.slope > a.slope):
        return False, "intercept/slope ordering violated"
    t = cm.crossover_chunk(cm.aggregate_profile("vocos_1d"), cm.aggregate_profile("wavehax_2d"))
    if t is None or not (3.9 <= t <= 4.0):
        return False, f"crossover {t}"
    return True, f"aggregates exact, crossover T*={t:.4f}"


def check_measured_equals_predicted() -> tuple[bool, str]:
    """C3: instrumented column sizes and direct-loop MACs match closed forms."""
    rng = np.random.default_rng(SEED)
    for row in cm.block_cost_table():
        g = row.geom
        w = rng.normal(0, 0.1, (g.out_channels, g.in_channels // g.groups, g.filter_h, g.filter_w)).astype(np.float32)
        for t in range(1, 17):
            x = rng.normal(0, 1, (1, g.in_channels, row.in_freq, t)).astype(np.float32)
            cols = im2col(x, g, chunk_t=t)
            if cols.size != row.cost.column.at(t):
                return False, f"{row.name} T={t}: column {cols.size} != {row.cost.column.at(t)}"
            tally = MacCounter()
            conv_direct(x, w, None, g, tally=tally)
            if tally.macs != row.cost.macs.at(t):
                return False, f"{row.name} T={t}: macs {tally.macs} != {row.cost.macs.at(t)}"
    return True, "6 geometries x T=1..16 exact"


def check_streaming_equals_batch(seconds: float = 10.0, log=None) -> tuple[bool, str]:
    """C4: streaming output matches batch within 1e-4 for every combination."""
    frames = int(seconds * 100)
    mel, f0 = synthetic_features(frames, SEED)
    worst = 0.0
    for variant in ALL_VARIANTS:
        for causal, la in CAUSALITY:
            model = _model(variant, causal, la)
            ref = forward_batch(model, mel, f0)
            for chunk in (1, 2, 4, 8, 16):
                got = _stream_waveform(model, mel, f0, chunk)
                if got.shape != ref.shape:
                    return False, f"{model.name} chunk {chunk}: length {got.size} != {ref.size}"
                diff = float(np.max(np.abs(got - ref)))
                worst = max(worst, diff)
                if log:
                    log(f"    {model.name} chunk {chunk}: max|diff| {diff:.2e}")
                if diff > STREAM_TOL:
                    return False, f"{model.name} chunk {chunk}: max|diff| {diff:.2e} > {STREAM_TOL}"
    return True, f"12 models x 5 chunk sizes, worst max|diff| {worst:.2e}"


def check_causality() -> tuple[bool, str]:
    """C5: perturbing future frames leaves earlier output samples bit-exact."""
    frames = 60
    mel, f0 = synthetic_features(frames, SEED)
    rng = np.random.default_rng(SEED + 1)
    for variant in ALL_VARIANTS:
        for la in (0, 1):
            model = _model(variant, causal=True, lookahead=la)
            ref = forward_batch(model, mel, f0)
            for p in (5, 50):
                mel2 = mel.copy()
                f02 = f0.copy()
                mel2[:, p:] += rng.normal(0, 1, mel2[:, p:].shape).astype(np.float32)
                f02[p:] = np.maximum(f02[p:] + 40.0, 90.0)
                got = forward_batch(model, mel2, f02)
                n = (p - la) * model.config.hop
                if not np.array_equal(ref[:n], got[:n]):
                    first = int(np.nonzero(ref[:n] != got[:n])[0][0])
                    return False, f"{model.name} p={p}: sample {first} changed (< {n})"
                if np.array_equal(ref[n:], got[n:]):
                    return False, f"{model.name} p={p}: perturbation had no effect"
    return True, "4 variants x LA {0,1} x p {5,50} bit-exact"


def check_dsp_round_trips() -> tuple[bool, str]:
    """C6: iSTFT round trips at both configs and the PQMF cascade SNR."""
    rng = np.random.default_rng(SEED)
    n = 10 * 24000
    t = np.arange(n) / 24000.0
    signals = {
        "sine": np.sin(2 * np.pi * 440.0 * t).astype(np.float32),
        "noise": rng.standard_normal(n).astype(np.float32),
    }
    for frame, hop in ((480, 240), (120, 60)):
        cfg = StftConfig(frame, hop)
        for name, x in signals.items():
            rt = istft(stft(x, cfg), cfg)
            keep = rt.size
            interior = slice(frame, keep - frame)
            err = float(np.max(np.abs(rt[interior] - x[:keep][interior])))
            if err > 1e-5:
                return False, f"{name} {frame}/{hop}: interior error {err:.2e}"
    bank = design_pqmf(4, 63)
    x = rng.standard_normal(24000).astype(np.float32)
    rec = synthesis_apply(analysis_apply(x, bank), bank)[bank.group_delay :]
    ref = x[: rec.size]
    snr = 10 * np.log10(float(np.sum(ref**2)) / float(np.sum((rec - ref) ** 2)))
    if snr < 40.0:
        return False, f"cascade SNR {snr:.1f} dB < 40"
    return True, f"round trips <= 1e-5; cascade SNR {snr:.1f} dB (delay {bank.group_delay})"


def check_structure() -> tuple[bool, str]:
    """C7: variant-defining channel counts and transform geometry."""
    ms_v = ModelConfig("ms_vocos")
    ms_w = ModelConfig("ms_wavehax")
    w = ModelConfig("wavehax")
    checks = [
        (ms_v.head_channels == 968, "ms_vocos head 968"),
        (ms_w.trunk_in_channels == 12, "ms_wavehax trunk input 12"),
        (ms_w.head_channels == 8, "ms_wavehax head 8"),
        (ms_w.hidden_channels == 64, "ms_wavehax hidden 64"),
        (w.hidden_channels == 32, "wavehax hidden 32"),
        (w.spectro_bins == 241, "wavehax 241 bins"),
        (ms_v.istft_config.frame_length == 240, "ms_vocos frame 240"),
        (ms_v.istft_config.hop == 60, "ms_vocos hop 60"),
    ]
    for ok, label in checks:
        if not ok:
            return False, f"violated: {label}"
    for variant in ("ms_vocos", "ms_wavehax"):
        model = _model(variant, causal=True)  # build-time assertions must hold
        bank_w = [e for e in model.pipeline.cost_entries() if e.kind == "filterbank"]
        if any(e.weights != 4 * 63 for e in bank_w):
            return False, f"{variant}: filter taps != 63"
    return True, "all structural constants hold at build time"


def check_latency_accounting() -> tuple[bool, str]:
    """C8: chunk buffering and lookahead terms."""
    model_la0 = _model("ms_wavehax", causal=True, lookahead=0)
    model_la1 = _model("ms_wavehax", causal=True, lookahead=1)
    r1 = latency_report(model_la0, 1)
    r8 = latency_report(model_la0, 8)
    if r8.chunk_buffering_ms - r1.chunk_buffering_ms != 70.0:
        return False, f"buffering delta {r8.chunk_buffering_ms - r1.chunk_buffering_ms}"
    if r1.chunk_buffering_ms != 0.0:
        return False, "chunk 1 buffering not zero"
    la = latency_report(model_la1, 1).algorithmic_lookahead_ms
    if la != 10.0:
        return False, f"LA=1 lookahead {la} ms"
    if latency_report(model_la0, 1).algorithmic_lookahead_ms != 0.0:
        return False, "LA=0 lookahead not zero"
    return True, "chunk8-chunk1 = 70 ms; LA=1 adds exactly 10 ms"


def check_cost_trends() -> tuple[bool, str]:
    """C9: deploy-format parameter/MAC ordering and the exact block MACs."""
    wavehax = _model("wavehax")
    ms_wavehax = _model("ms_wavehax")
    vocos = _model("vocos")
    p_w = cm.count_params(wavehax).total("as_matrix")
    p_ms = cm.count_params(ms_wavehax).total("as_matrix")
    if not p_ms < p_w:
        return False, f"params {p_ms:,} !< {p_w:,}"
    m_w = cm.count_macs(wavehax, 1.0, "as_matrix").total
    m_ms = cm.count_macs(ms_wavehax, 1.0, "as_matrix").total
    if not m_ms < m_w:
        return False, f"MACs/s {m_ms:,} !< {m_w:,}"
    blocks = cm.count_macs(vocos, 1.0).prefix_total("blocks.")
    if blocks != 8 * 100 * 1576448:
        return False, f"vocos block MACs {blocks:,}"
    return True, (
        f"params {p_ms:,} < {p_w:,}; MACs/s {m_ms:,} < {m_w:,}; "
        f"vocos block MACs = {blocks:,} exactly"
    )


def check_rtf_trend(plan: BenchPlan | None = None, log=None) -> tuple[bool, str]:
    """C10: streaming gets faster from chunk 1 to chunk 16 for every variant."""
    plan = plan or smoke_plan()
    plan = BenchPlan(
        models=plan.models,
        modes=("stream",),
        chunk_sizes=(1, 16),
        runs=plan.runs,
        warmup=plan.warmup,
        audio_seconds=plan.audio_seconds,
        threads=plan.threads,
    )
    records, _ = run_plan(plan, seed=SEED)
    cells = {(s.model, s.chunk): s.mean_rtf for s in summarize(records)}
    details = []
    ok = True
    for cfg in plan.models:
        r1 = cells[(cfg.name, 1)]
        r16 = cells[(cfg.name, 16)]
        details.append(f"{cfg.name}: {r1:.3f} -> {r16:.3f}")
        if log:
            log(f"    {cfg.name}: chunk1 {r1:.3f}, chunk16 {r16:.3f}")
        if not r16 < r1:
            ok = False
    return ok, "; ".join(details)


def check_memory_constancy() -> tuple[bool, str]:
    """C11: caches never grow between steps; footprint independent of length."""
    model = _model("ms_vocos", causal=True)

    def run(seconds: float, probe_steps: bool):
        mel, f0 = synthetic_features(int(seconds * 100), SEED)
        session = open_session(model, 8)
        sizes, ids = [], []
        i = 0
        step = 0
        while i < mel.shape[1]:
            c = min(8, mel.shape[1] - i)
            session.process_chunk(mel[:, i : i + c], f0[i : i + c])
            i += c
            step += 1
            if probe_steps and step in (3, 10) or i >= mel.shape[1]:
                sizes.append(session.cache_nbytes())
                ids.append(tuple(session.ring_buffer_ids()))
        session.finish()
        return sizes, ids

    tracemalloc.start()
    s_short, ids_short = run(1.0, probe_steps=True)
    base = tracemalloc.get_traced_memory()[0]
    s_long, ids_long = run(60.0, probe_steps=True)
    grown = tracemalloc.get_traced_memory()[0] - base
    tracemalloc.stop()
    if len(set(s_short)) != 1 or len(set(s_long)) != 1:
        return False, f"cache size varied between steps: {s_short} / {s_long}"
    if s_short[0] != s_long[0]:
        return False, f"1 s vs 60 s cache bytes differ: {s_short[0]} vs {s_long[0]}"
    if len(set(ids_long)) != 1:
        return False, "cache buffers were reallocated between steps"
    if grown > 1 << 20:
        return False, f"traced memory grew {grown} bytes between 1 s and 60 s runs"
    return True, f"cache {s_short[0]:,} bytes for 1 s and 60 s; buffers never reallocated"


CRITERIA = (
    ("C1", "cost-table cells exact", check_cost_table, "cost"),
    ("C2", "aggregate matrix-size curves and crossover", check_aggregate_curves, "cost"),
    ("C3", "measured im2col equals predicted", check_measured_equals_predicted, "cost"),
    ("C4", "streaming equals batch", check_streaming_equals_batch, "stream"),
    ("C5", "causality contract", check_causality, "stream"),
    ("C6", "DSP round trips", check_dsp_round_trips, "dsp"),
    ("C7", "structural constants", check_structure, "stream"),
    ("C8", "latency accounting", check_latency_accounting, "stream"),
    ("C9", "parameter/MAC trends", check_cost_trends, "cost"),
    ("C10", "RTF chunk-size trend (smoke)", check_rtf_trend, "stream"),
    ("C11", "streaming memory constancy", check_memory_constancy, "stream"),
)

SUITES = ("all", "stream", "dsp", "cost")


def run_suite(suite: str = "all", emit=print) -> list[AcceptanceResult]:
    """Run one suite; prints one PASS/FAIL line per criterion."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")
    results = []
    for cid, name, fn, group in CRITERIA:
        if suite != "all" and group != suite:
            continue
        try:
            passed, detail = fn()
        except Exception as exc:  # noqa: BLE001 - report, don't abort the suite
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append(AcceptanceResult(cid, name, passed, detail))
        emit(f"{'PASS' if passed else 'FAIL'} {cid} {name}: {detail}")
    return results
