"""Command-line entry point.

Exit codes: 0 success, 1 numeric/runtime failure, 2 input/format/usage
error. Heavy imports happen inside ``main`` so thread-count environment
hints can be set before the numeric backend loads.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

_VARIANT_FLAGS = ("vocos", "ms-vocos", "wavehax", "ms-wavehax")


def _thread_env(argv: list[str]) -> None:
    n = None
    for i, a in enumerate(argv):
        if a == "--threads" and i + 1 < len(argv):
            n = argv[i + 1]
        elif a.startswith("--threads="):
            n = a.split("=", 1)[1]
    if n and n.isdigit():
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=_VARIANT_FLAGS, default="ms-wavehax")
    p.add_argument("--causal", action="store_true")
    p.add_argument("--lookahead", type=int, choices=(0, 1), default=None)
    p.add_argument("--blocks", type=int, default=8, metavar="N")
    p.add_argument("--weights", metavar="PATH")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vocstream",
        description="Streaming vocoder synthesis, cost reports, and RTF benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="whole-sequence synthesis to WAV")
    _add_model_flags(p)
    p.add_argument("--features", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="WAV")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stream", help="chunked streaming synthesis to WAV")
    _add_model_flags(p)
    p.add_argument("--features", required=True, metavar="PATH")
    p.add_argument("--chunk", type=int, required=True, metavar="T")
    p.add_argument("--out", required=True, metavar="WAV")
    p.add_argument("--verify", action="store_true", help="also run batch and compare")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("bench", help="real-time-factor benchmark")
    _add_model_flags(p)
    p.add_argument("--plan", default="default", metavar="default|smoke|PATH")
    p.add_argument("--out", metavar="CSV")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("cost", help="analytic cost reports")
    _add_model_flags(p)
    p.add_argument("--report", choices=("table2", "aggregate", "model"), required=True)
    p.add_argument("--out", metavar="CSV|SVG")
    p.add_argument("--seconds", type=float, default=1.0)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("gen-weights", help="write a seeded random weight file")
    _add_model_flags(p)
    p.add_argument("--out", required=True, metavar="PATH")
    p.set_defaults(func=cmd_gen_weights)

    p = sub.add_parser("features", help="extract synthesis features from a WAV")
    p.add_argument("--wav", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="PATH")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("verify", help="run the acceptance suites")
    p.add_argument("--suite", choices=("all", "stream", "dsp", "cost"), default="all")
    p.set_defaults(func=cmd_verify)
    return parser


def _config(args, parser: argparse.ArgumentParser | None = None):
    from .models import ModelConfig

    if args.lookahead is not None and not args.causal:
        raise UsageError("--lookahead requires --causal")
    return ModelConfig(
        variant=args.model.replace("-", "_"),
        causal=args.causal,
        lookahead=args.lookahead or 0,
        num_blocks=args.blocks,
    )


class UsageError(Exception):
    pass


def _load_model(args):
    from .models import build
    from .storage import generate_random_weights, read_weights
    from .errors import FormatError

    config = _config(args)
    if args.weights:
        try:
            weights = read_weights(args.weights)
        except OSError as exc:
            raise FormatError(f"cannot read weights file {args.weights}: {exc}") from exc
    else:
        weights = generate_random_weights(config, args.seed)
    return build(config, weights)


def _read_feature_file(path):
    from .storage import read_features
    from .errors import FormatError

    try:
        return read_features(path)
    except OSError as exc:
        raise FormatError(f"cannot read features file {path}: {exc}") from exc


def cmd_synth(args) -> int:
    from .models import forward_batch
    from .storage import write_wav

    model = _load_model(args)
    mel, f0 = _read_feature_file(args.features)
    wave = forward_batch(model, mel, f0)
    write_wav(args.out, wave, model.config.sample_rate)
    print(f"wrote {wave.size} samples ({wave.size / model.config.sample_rate:.2f} s) to {args.out}")
    return 0


def cmd_stream(args) -> int:
    import numpy as np

    from .models import forward_batch
    from .storage import write_wav
    from .streaming import latency_report, open_session

    if args.chunk < 1:
        raise UsageError("--chunk must be >= 1")
    model = _load_model(args)
    mel, f0 = _read_feature_file(args.features)
    report = latency_report(model, args.chunk)
    print(f"buffering latency: {report.chunk_buffering_ms:.0f} ms")
    print(f"algorithmic lookahead: {report.algorithmic_lookahead_ms:.0f} ms")
    session = open_session(model, args.chunk)
    parts = []
    t = mel.shape[1]
    i = 0
    while i < t:
        c = min(args.chunk, t - i)
        parts.append(session.process_chunk(mel[:, i : i + c], f0[i : i + c]))
        i += c
    parts.append(session.finish())
    wave = np.concatenate(parts) if parts else np.zeros(0, np.float32)
    write_wav(args.out, wave, model.config.sample_rate)
    print(f"wrote {wave.size} samples to {args.out}")
    if args.verify:
        ref = forward_batch(model, mel, f0)
        diff = float(np.max(np.abs(wave - ref))) if wave.size else 0.0
        print(f"streaming vs batch max abs difference: {diff:.3e}")
        if diff > 1e-4:
            print("verification FAILED (difference exceeds 1e-4)", file=sys.stderr)
            return 1
        print("verification passed")
    return 0


def _plan_from_args(args):
    from .bench import BenchPlan, default_plan, smoke_plan
    from .models import ModelConfig

    if args.plan == "default":
        plan = default_plan(causal=args.causal or True)
    elif args.plan == "smoke":
        plan = smoke_plan(causal=args.causal or True)
    else:
        with open(args.plan, encoding="utf-8") as fh:
            raw = json.load(fh)
        plan = BenchPlan(
            models=tuple(
                ModelConfig(
                    variant=m["variant"],
                    causal=m.get("causal", True),
                    lookahead=m.get("lookahead", 0),
                    num_blocks=m.get("blocks", 8),
                )
                for m in raw["models"]
            ),
            modes=tuple(raw.get("modes", ("batch", "stream"))),
            chunk_sizes=tuple(raw.get("chunk_sizes", (1, 2, 4, 8, 16))),
            runs=raw.get("runs", 30),
            warmup=raw.get("warmup", 5),
            audio_seconds=raw.get("audio_seconds", 10.0),
            threads=args.threads,
        )
    if args.threads != plan.threads:
        plan = type(plan)(**{**plan.__dict__, "threads": args.threads})
    return plan


def cmd_bench(args) -> int:
    from .bench import emit_csv, run_plan, summarize

    plan = _plan_from_args(args)
    print(
        f"benchmarking {len(plan.models)} models, modes {plan.modes}, "
        f"chunks {plan.chunk_sizes}, {plan.runs} runs x {plan.audio_seconds:g} s"
    )
    records, notes = run_plan(
        plan,
        seed=args.seed,
        on_progress=lambda m, mo, ch: print(f"  done: {m} {mo} chunk={ch}"),
    )
    for note in notes:
        if note.startswith(("warning", "error")):
            print(note, file=sys.stderr)
    for cell in summarize(records):
        print(
            f"  {cell.model:28s} {cell.mode:6s} chunk={cell.chunk:<3d} "
            f"rtf mean {cell.mean_rtf:.4f} std {cell.std_rtf:.4f} min {cell.min_rtf:.4f}"
        )
    if args.out:
        emit_csv(records, args.out, metadata=notes)
        print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_cost(args) -> int:
    from . import costmodel as cm

    if args.report == "table2":
        lines = ["layer,column_size,filter_size,macs,X_at_T1,Y_at_T1,MACs_at_T1"]
        for row in cm.block_cost_table():
            c = row.cost
            lines.append(
                f"{row.name},{c.column},{c.filter},{c.macs},"
                f"{c.column.at(1)},{c.filter.at(1)},{c.macs.at(1)}"
            )
        text = "\n".join(lines)
    elif args.report == "aggregate":
        a = cm.aggregate_profile("vocos_1d")
        b = cm.aggregate_profile("wavehax_2d")
        t_star = cm.crossover_chunk(a, b)
        if args.out and args.out.endswith(".svg"):
            from .bench import emit_matrix_size_plot

            emit_matrix_size_plot([a, b], list(range(1, 17)), args.out)
            print(f"wrote {args.out}")
            print(f"crossover T* = {t_star:.4f}")
            return 0
        lines = ["profile,slope,intercept"]
        for prof in (a, b):
            lines.append(f"{prof.name},{prof.aggregate.slope},{prof.aggregate.intercept}")
        lines.append(f"crossover_T,{t_star:.4f},")
        text = "\n".join(lines)
    else:
        model = _load_model(args)
        params = cm.count_params(model)
        macs = cm.count_macs(model, args.seconds, "as_matrix")
        mac_map = dict(macs.entries)
        lines = ["layer,kind,weight_params,bias_params,macs"]
        for e in params.entries:
            lines.append(f"{e.name},{e.kind},{e.weights},{e.biases},{mac_map.get(e.name, 0)}")
        lines.append(f"total_trainable_params,,{params.trainable},,")
        lines.append(f"total_params_as_matrix,,{params.total('as_matrix')},,")
        lines.append(
            f"total_macs_as_matrix,,,,{macs.total}"
        )
        lines.append(
            f"total_macs_transform_excluded,,,,{cm.count_macs(model, args.seconds, 'excluded').total}"
        )
        text = "\n".join(lines)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def cmd_gen_weights(args) -> int:
    from .storage import generate_random_weights, write_weights

    config = _config(args)
    weights = generate_random_weights(config, args.seed)
    write_weights(args.out, weights)
    n = sum(int(t.size) for t in weights.values())
    print(f"wrote {len(weights)} tensors ({n:,} parameters) to {args.out}")
    return 0


def cmd_features(args) -> int:
    from .storage import extract_features, read_wav, write_features
    from .errors import FormatError

    try:
        wave, rate = read_wav(args.wav, expect_rate=24000)
    except OSError as exc:
        raise FormatError(f"cannot read {args.wav}: {exc}") from exc
    mel, f0 = extract_features(wave, rate)
    write_features(args.out, mel, f0)
    voiced = int((f0 > 0).sum())
    print(f"wrote {mel.shape[1]} frames ({voiced} voiced) to {args.out}")
    return 0


def cmd_verify(args) -> int:
    from .acceptance import run_suite

    results = run_suite(args.suite)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return 1 if failed else 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _thread_env(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    from .errors import (
        ConfigError,
        DataError,
        FormatError,
        NumericError,
        VocstreamError,
    )

    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, DataError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, VocstreamError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
