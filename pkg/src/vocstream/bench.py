"""Real-time-factor measurement harness.

Protocol per cell (model x mode x chunk size): build the model once,
pre-generate the feature stream, run unrecorded warm-up iterations, then
time the recorded runs with one monotonic-clock timestamp pair per run.
Feature generation and I/O stay outside the timed region. Records are
emitted as CSV with ``#``-prefixed hardware/metadata comment lines.
"""
from __future__ import annotations

import os
import platform
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .costmodel import FRAMES_PER_SECOND, BlockCostProfile
from .errors import ConfigError, DataError
from .models import Model, ModelConfig, build, forward_batch
from .storage import generate_random_weights
from .streaming import open_session

CSV_COLUMNS = ("model", "mode", "chunk", "run", "threads", "synth_seconds", "audio_seconds", "rtf")
MODES = ("batch", "stream")


@dataclass(frozen=True)
class BenchPlan:
    models: tuple[ModelConfig, ...]
    modes: tuple[str, ...] = MODES
    chunk_sizes: tuple[int, ...] = (1, 2, 4, 8, 16)
    runs: int = 30
    warmup: int = 5
    audio_seconds: float = 10.0
    threads: int = 1

    def __post_init__(self):
        if not self.models:
            raise ConfigError("plan needs at least one model")
        if self.runs < 1 or self.warmup < 0:
            raise ConfigError("runs must be >= 1 and warmup >= 0")
        frames = self.audio_seconds * FRAMES_PER_SECOND
        if abs(frames - round(frames)) > 1e-9 or frames < 1:
            raise ConfigError("audio_seconds must map to a whole number of frames")
        for mode in self.modes:
            if mode not in MODES:
                raise ConfigError(f"unknown mode {mode!r}")
        if any(c < 1 for c in self.chunk_sizes):
            raise ConfigError("chunk sizes must be >= 1")

    @property
    def frames(self) -> int:
        return int(round(self.audio_seconds * FRAMES_PER_SECOND))


@dataclass(frozen=True)
class BenchRecord:
    model: str
    mode: str
    chunk: int
    run: int
    threads: int
    synth_seconds: float
    audio_seconds: float

    @property
    def rtf(self) -> float:
        return self.synth_seconds / self.audio_seconds


def default_plan(causal: bool = True) -> BenchPlan:
    return BenchPlan(
        models=tuple(ModelConfig(v, causal=causal) for v in ("vocos", "ms_vocos", "wavehax", "ms_wavehax"))
    )


def smoke_plan(causal: bool = True) -> BenchPlan:
    """Reduced protocol for quick trend checks: 3 runs x 2 s, 2 warm-ups."""
    return replace(default_plan(causal), runs=3, warmup=2, audio_seconds=2.0, chunk_sizes=(1, 16))


def synthetic_features(frames: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic speech-like feature stream: mel noise + voiced/unvoiced F0."""
    rng = np.random.default_rng(seed)
    mel = rng.normal(0.0, 0.3, size=(100, frames)).astype(np.float32)
    f0 = np.zeros(frames, dtype=np.float32)
    pos, voiced = 0, True
    while pos < frames:
        seg = int(rng.integers(25, 70)) if voiced else int(rng.integers(10, 30))
        end = min(pos + seg, frames)
        if voiced:
            t = np.arange(pos, end)
            f0[pos:end] = 170.0 + 60.0 * np.sin(t / 19.0) + 15.0 * np.sin(t / 3.1)
        voiced = not voiced
        pos = end
    return mel, np.maximum(f0, 0.0)


def _pin_single_cpu() -> str:
    try:
        os.sched_setaffinity(0, {sorted(os.sched_getaffinity(0))[0]})
        return "pinned to one CPU"
    except (AttributeError, OSError):
        return "affinity pinning unavailable"


def hardware_metadata(threads: int) -> list[str]:
    lines = [
        f"machine: {platform.machine()} {platform.system()} {platform.release()}",
        f"processor: {platform.processor() or 'unknown'}",
        f"python: {platform.python_version()}, numpy: {np.__version__}",
        f"threads requested: {threads}",
    ]
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.lower().startswith("model name"):
                    lines.insert(1, f"cpu: {line.split(':', 1)[1].strip()}")
                    break
    except OSError:
        pass
    res = time.get_clock_info("perf_counter").resolution
    lines.append(f"timer resolution: {res:g} s")
    if res > 1e-3:
        lines.append("warning: timer resolution coarser than 1 ms")
    return lines


def _stream_once(model: Model, chunks: list[tuple[np.ndarray, np.ndarray]], chunk_t: int) -> None:
    session = open_session(model, chunk_t)
    for mel_c, f0_c in chunks:
        session.process_chunk(mel_c, f0_c)
    session.finish()


def run_plan(
    plan: BenchPlan,
    seed: int = 0,
    weights: dict[str, np.ndarray] | None = None,
    on_progress=None,
) -> tuple[list[BenchRecord], list[str]]:
    """Execute the plan; returns (records, metadata/error note lines).

    The same seeded feature stream feeds every cell. A model that fails to
    build contributes an error note and the plan continues.
    """
    notes = hardware_metadata(plan.threads)
    if plan.threads == 1:
        notes.append(f"single-thread: {_pin_single_cpu()}")
    mel, f0 = synthetic_features(plan.frames, seed)
    records: list[BenchRecord] = []
    for cfg in plan.models:
        try:
            w = weights if weights is not None else generate_random_weights(cfg, seed)
            model = build(cfg, w)
        except Exception as exc:  # noqa: BLE001 - per-model error record, plan continues
            notes.append(f"error: model {cfg.name} failed to build: {exc}")
            continue
        for mode in plan.modes:
            chunk_list = plan.chunk_sizes if mode == "stream" else (0,)
            for chunk in chunk_list:
                if mode == "stream":
                    chunks = [
                        (mel[:, i : i + chunk], f0[i : i + chunk])
                        for i in range(0, plan.frames, chunk)
                    ]
                for run in range(-plan.warmup, plan.runs):
                    t0 = time.perf_counter()
                    if mode == "batch":
                        forward_batch(model, mel, f0)
                    else:
                        _stream_once(model, chunks, chunk)
                    elapsed = time.perf_counter() - t0
                    if run >= 0:
                        records.append(
                            BenchRecord(
                                model=model.name,
                                mode=mode,
                                chunk=chunk,
                                run=run,
                                threads=plan.threads,
                                synth_seconds=elapsed,
                                audio_seconds=plan.audio_seconds,
                            )
                        )
                if on_progress:
                    on_progress(model.name, mode, chunk)
    return records, notes


@dataclass(frozen=True)
class CellSummary:
    model: str
    mode: str
    chunk: int
    runs: int
    mean_rtf: float
    std_rtf: float
    min_rtf: float


def summarize(records: list[BenchRecord]) -> list[CellSummary]:
    """Per-cell mean/stddev/min of RTF over recorded runs."""
    if not records:
        raise DataError("no records to summarize")
    cells: dict[tuple, list[float]] = {}
    for r in records:
        cells.setdefault((r.model, r.mode, r.chunk), []).append(r.rtf)
    out = []
    for (model, mode, chunk), vals in sorted(cells.items()):
        arr = np.asarray(vals)
        out.append(
            CellSummary(
                model=model,
                mode=mode,
                chunk=chunk,
                runs=arr.size,
                mean_rtf=float(arr.mean()),
                std_rtf=float(arr.std(ddof=0)),
                min_rtf=float(arr.min()),
            )
        )
    return out


def emit_csv(records: list[BenchRecord], dest, metadata: list[str] | None = None) -> None:
    if not records:
        raise DataError("no records to emit")
    lines = [f"# {m}" for m in (metadata or [])]
    lines.append(",".join(CSV_COLUMNS))
    for r in records:
        lines.append(
            f"{r.model},{r.mode},{r.chunk},{r.run},{r.threads},"
            f"{r.synth_seconds:.9g},{r.audio_seconds:.9g},{r.rtf:.9g}"
        )
    with open(dest, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> tuple[list[BenchRecord], list[str]]:
    records = []
    metadata = []
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    body = []
    for ln in lines:
        if ln.startswith("#"):
            metadata.append(ln[1:].strip())
        elif ln:
            body.append(ln)
    if not body or body[0] != ",".join(CSV_COLUMNS):
        raise DataError(f"{path}: missing or wrong CSV header")
    for ln in body[1:]:
        f = ln.split(",")
        records.append(
            BenchRecord(
                model=f[0],
                mode=f[1],
                chunk=int(f[2]),
                run=int(f[3]),
                threads=int(f[4]),
                synth_seconds=float(f[5]),
                audio_seconds=float(f[6]),
            )
        )
    return records, metadata


# ---------------------------------------------------------------------------
# Matrix-size plot
# ---------------------------------------------------------------------------

_SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def emit_matrix_size_plot(
    profiles: list[BlockCostProfile], t_range: list[int], dest
) -> None:
    """Self-contained SVG line plot of aggregate X+Y (and per-layer series) vs T."""
    if not profiles:
        raise DataError("need at least one profile")
    ts = list(t_range)
    if not ts:
        raise DataError("empty chunk-size range")
    series: list[tuple[str, list[int], str, float]] = []
    for pi, prof in enumerate(profiles):
        color = _SVG_COLORS[pi % len(_SVG_COLORS)]
        series.append(
            (f"{prof.name} aggregate", [prof.aggregate.at(t) for t in ts], color, 2.5)
        )
        for lname, cost in prof.layers.items():
            vals = [cost.column.at(t) + cost.filter.at(t) for t in ts]
            series.append((f"{prof.name} {lname}", vals, color, 0.8))
    width, height = 720, 480
    ml, mr, mt, mb = 70, 20, 20, 45
    vmax = max(max(vals) for _, vals, _, _ in series)
    vmin = 0
    tmin, tmax = min(ts), max(ts)

    def px(t):
        span = max(tmax - tmin, 1)
        return ml + (t - tmin) / span * (width - ml - mr)

    def py(v):
        span = max(vmax - vmin, 1)
        return height - mb - (v - vmin) / span * (height - mt - mb)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{height-mb}" x2="{width-mr}" y2="{height-mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height-mb}" stroke="black"/>',
        f'<text x="{(ml+width-mr)//2}" y="{height-10}" font-size="13" text-anchor="middle">chunk size T</text>',
        f'<text x="14" y="{(mt+height-mb)//2}" font-size="13" transform="rotate(-90 14 {(mt+height-mb)//2})" text-anchor="middle">matrix size X + Y (elements)</text>',
    ]
    for t in ts:
        parts.append(
            f'<text x="{px(t):.1f}" y="{height-mb+16}" font-size="10" text-anchor="middle">{t}</text>'
        )
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = vmin + frac * (vmax - vmin)
        parts.append(
            f'<text x="{ml-6}" y="{py(v):.1f}" font-size="10" text-anchor="end">{v:,.0f}</text>'
        )
    for li, (label, vals, color, sw) in enumerate(series):
        pts = " ".join(f"{px(t):.1f},{py(v):.1f}" for t, v in zip(ts, vals))
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="{sw}" points="{pts}"/>'
        )
        parts.append(
            f'<text x="{width-mr-6}" y="{mt+14*(li+1)}" font-size="10" fill="{color}" text-anchor="end">{label}</text>'
        )
    parts.append("</svg>")
    with open(dest, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
