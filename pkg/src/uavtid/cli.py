"""Command-line entry point orchestrating the detection pipeline.

Subcommands: simulate, mrft, identify, transform, gen-data, train, eval,
detect, and repro (end-to-end cross-platform reproduction).  Exit codes:
0 success, 1 bad arguments (usage on stderr), 2 runtime failure (diagnostic
names the failing module).  All randomness flows from one ``--seed`` per
command, fanned out deterministically; no subcommand mutates its inputs.
Set ``UAVTID_LOG`` (debug/info/warning/error) to control log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .datagen import (
    CHANNEL_SCALES,
    FEATURE_CHANNELS,
    TID_RATE,
    HandModel,
    Scenario,
    ScenarioKind,
    generate_dataset,
    load_dataset,
    make_plan,
    full_scale_plan,
    save_dataset,
    simulate_scenario,
    trace_features,
)
from .detector import DetectorConfig, LabeledTrace, StreamingDetector, evaluate
from .identify import (
    PARAM_NAMES,
    build_grid,
    identify as identify_record,
    load_grid,
    save_grid,
)
from .lstm import TrainConfig, _batch_forward, init_model, load_model, save_model, train
from .platforms import LoopKind, StateTrace, load_platform
from .simulate import OscillationRecord, run_mrft
from .transform import TransformSet, resample

log = logging.getLogger("uavtid")

__all__ = ["main"]


class _UsageError(Exception):
    def __init__(self, parser: argparse.ArgumentParser, message: str):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    """Argparse variant that reports bad usage via exit code 1."""

    def error(self, message):
        raise _UsageError(self, message)


# ---------------------------------------------------------------------------
# Shared loaders / parsers
# ---------------------------------------------------------------------------


def _load_scenario(path, seed_override=None) -> Scenario:
    with open(path) as f:
        raw = yaml.safe_load(f) or {}
    if "kind" not in raw:
        raise ValueError(f"scenario file {path} is missing 'kind'")
    kind = ScenarioKind(str(raw.pop("kind")).lower())
    hand = raw.pop("hand", None)
    if hand is not None:
        hand = HandModel(**hand)
    if seed_override is not None:
        raw["seed"] = seed_override
    raw.setdefault("seed", 0)
    return Scenario(kind=kind, hand=hand, **raw)


def _parse_counts(text: str) -> dict[ScenarioKind, int]:
    counts = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        if not value:
            raise ValueError(f"counts entry {part!r} must look like kind=N")
        counts[ScenarioKind(name.strip().lower())] = int(value)
    return counts


def _parse_bounds(text: str) -> np.ndarray:
    pairs = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        lo, _, hi = value.partition(":")
        if not hi:
            raise ValueError(f"bounds entry {part!r} must look like name=lo:hi")
        pairs[name.strip()] = (float(lo), float(hi))
    missing = [n for n in PARAM_NAMES if n not in pairs]
    if missing:
        raise ValueError(f"bounds missing parameters: {', '.join(missing)}")
    return np.array([pairs[n] for n in PARAM_NAMES])


def _parse_hidden(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _fan_seeds(seed: int, n: int) -> list[int]:
    """Derive n independent child seeds from one top-level seed."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def _model_features(model, trace: StateTrace) -> np.ndarray:
    if not model.channel_names:
        raise ValueError("model carries no channel metadata; retrain with gen-data output")
    scales = model.channel_scales or None
    return trace_features(trace, model.channel_names, scales)


def _stream_for_model(model, trace: StateTrace, source=None, base=None) -> np.ndarray:
    if source is not None and base is not None:
        trace = TransformSet.build(source, base).apply_to_trace(trace)
    if abs(1.0 / trace.dt - TID_RATE) > 1e-9:
        trace = resample(trace, TID_RATE)
    return _model_features(model, trace)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    platform = load_platform(args.platform)
    scenario = _load_scenario(args.scenario, args.seed)
    trace = simulate_scenario(platform, scenario)
    trace.save(args.out)
    print(
        f"simulated {scenario.kind.value} for {scenario.duration:g} s "
        f"at {platform.sample_rate:g} Hz -> {args.out}"
    )
    return 0


def _cmd_mrft(args) -> int:
    platform = load_platform(args.platform)
    kind = LoopKind(args.loop)
    record = run_mrft(platform, kind, beta=args.beta, h=args.h, duration=args.duration)
    payload = {
        "amplitude": record.amplitude,
        "period": record.period,
        "periods": list(record.periods),
        "waveform": [float(v) for v in record.waveform],
        "beta": args.beta,
        "h": args.h,
        "loop": args.loop,
    }
    with open(args.out, "w") as f:
        json.dump(payload, f)
    print(
        f"steady oscillation: amplitude {record.amplitude:.6g} m, "
        f"period {record.period:.6g} s -> {args.out}"
    )
    return 0


def _cmd_identify(args) -> int:
    if args.build:
        if not args.bounds:
            raise ValueError("--build requires --bounds")
        grid = build_grid(
            _parse_bounds(args.bounds),
            j_star=args.j_star,
            sim_budget=args.budget,
            n_jobs=args.jobs,
        )
        save_grid(grid, args.grid)
        print(f"grid built: {len(grid.cells)} cells -> {args.grid}")
        return 0
    if not args.record:
        raise ValueError("provide --record to match, or --build to construct a grid")
    grid = load_grid(args.grid)
    with open(args.record) as f:
        raw = json.load(f)
    record = OscillationRecord(
        amplitude=raw["amplitude"],
        period=raw["period"],
        waveform=np.asarray(raw["waveform"], float),
        periods=list(raw.get("periods", [])),
    )
    result = identify_record(record, grid, threshold=args.threshold)
    lines = [f"{name} {value:.6g}" for name, value in zip(PARAM_NAMES, result.d_hat)]
    lines.append(f"match_score {result.match_score:.4f}")
    lines.append(f"runner_up_score {result.runner_up_score:.4f}")
    text = "\n".join(lines)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def _cmd_transform(args) -> int:
    source = load_platform(args.source)
    base = load_platform(args.base)
    trace = StateTrace.load(args.trace)
    out = TransformSet.build(source, base).apply_to_trace(trace)
    if args.target_rate:
        out = resample(out, args.target_rate)
    out.save(args.out)
    print(f"transformed {len(out)} samples -> {args.out}")
    return 0


def _cmd_gen_data(args) -> int:
    platform = load_platform(args.platform)
    base = load_platform(args.base) if args.base else None
    plan_seed, data_seed = _fan_seeds(args.seed, 2)
    if args.full_scale:
        plan = full_scale_plan(seed=plan_seed)
    else:
        if not args.counts:
            raise ValueError("provide --counts kind=N,... or --full-scale")
        plan = make_plan(_parse_counts(args.counts), seed=plan_seed)
    split = generate_dataset(
        platform,
        plan,
        ScenarioKind(args.isp),
        augment=not args.no_augment,
        base=base,
        stride=args.stride,
        seed=data_seed,
    )
    save_dataset(split, args.out)
    train_n, val_n, test_n = split.counts()
    print(f"dataset: train {train_n}, validation {val_n}, test {test_n} -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    data = load_dataset(args.data)
    if not data.train:
        raise ValueError("training split is empty")
    first = data.train[0]
    init_seed, train_seed = _fan_seeds(args.seed, 2)
    model = init_model(
        input_width=first.data.shape[1],
        hidden_sizes=_parse_hidden(args.hidden),
        dense_units=args.dense,
        dropout_rate=args.dropout,
        seed=init_seed,
        channel_names=first.channel_names,
        channel_scales=tuple(CHANNEL_SCALES[n] for n in first.channel_names),
    )
    cfg = TrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        epochs=args.epochs,
        patience=args.patience,
        seed=train_seed,
    )
    trained, history = train(model, data, cfg)
    save_model(trained, args.out)
    if history["val_accuracy"]:
        best = history["best_epoch"]
        print(
            f"trained {len(history['val_loss'])} epochs; best epoch {best}: "
            f"val loss {history['val_loss'][best]:.4f}, "
            f"val accuracy {history['val_accuracy'][best]:.3f} -> {args.out}"
        )
    else:
        print(f"trained 0 epochs -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = load_model(args.model)
    data = load_dataset(args.data)
    split = {"train": data.train, "validation": data.validation, "test": data.test}[
        args.split
    ]
    if not split:
        raise ValueError(f"{args.split} split is empty")
    params = {k: v.astype(np.float32) for k, v in model.params.items()}
    tp = fp = tn = fn = 0
    for lo in range(0, len(split), args.batch_size):
        chunk = split[lo : lo + args.batch_size]
        x = np.stack([np.asarray(s.data, np.float32) for s in chunk], axis=1)
        probs, _ = _batch_forward(params, model, x, None)
        for seq, prob in zip(chunk, probs):
            positive = prob > args.threshold
            if seq.label:
                tp += positive
                fn += not positive
            else:
                fp += positive
                tn += not positive
    total = tp + fp + tn + fn
    print(f"TP {tp}\nFP {fp}\nTN {tn}\nFN {fn}")
    print(f"accuracy {(tp + tn) / total:.4f}")
    return 0


def _cmd_detect(args) -> int:
    model = load_model(args.model)
    trace = StateTrace.load(args.trace)
    source = load_platform(args.platform) if args.platform else None
    base = load_platform(args.base) if args.base else None
    stream = _stream_for_model(model, trace, source, base)
    detector = StreamingDetector(
        model, DetectorConfig(threshold=args.threshold, sustain=args.sustain)
    )
    events = detector.run(stream)
    for event in events:
        print(
            f"event onset={event.onset:.3f} confirm={event.confirm:.3f} "
            f"peak={event.peak:.3f}"
        )
    print(f"events {len(events)}")
    return 0


# ---------------------------------------------------------------------------
# End-to-end reproduction
# ---------------------------------------------------------------------------


def _scenario_traces(platform, plan, isp, transform_set):
    traces = []
    for scenario in plan:
        trace = simulate_scenario(platform, scenario)
        if transform_set is not None:
            trace = transform_set.apply_to_trace(trace)
        trace = resample(trace, TID_RATE)
        intervals = trace.event_intervals(isp.value)
        traces.append((trace, intervals))
    return traces


def _labeled(model, traces):
    return [
        LabeledTrace(data=_model_features(model, trace), intervals=intervals)
        for trace, intervals in traces
    ]


def _cmd_repro(args) -> int:
    from .platforms import base_platform, test_platform

    seeds = _fan_seeds(args.seed, 6)
    base = base_platform()
    other = test_platform()
    isp = ScenarioKind.CDDP
    log.info("repro: generating base-platform training data")
    plan = make_plan(
        {
            ScenarioKind.CDDP: args.scenarios,
            ScenarioKind.SDP: args.scenarios,
            ScenarioKind.RANDOM_PUSH: args.scenarios // 2,
            ScenarioKind.IDLE: args.scenarios // 2,
        },
        seed=seeds[0],
        duration=6.0,
    )
    data = generate_dataset(
        base, plan, isp, augment=True, stride=args.stride, seed=seeds[1]
    )
    names = FEATURE_CHANNELS[isp]
    model = init_model(
        input_width=len(names),
        hidden_sizes=_parse_hidden(args.hidden),
        dense_units=args.dense,
        dropout_rate=0.1,
        seed=seeds[2],
        channel_names=names,
        channel_scales=tuple(CHANNEL_SCALES[n] for n in names),
    )
    cfg = TrainConfig(epochs=args.epochs, batch_size=16, patience=args.epochs, seed=seeds[3])
    log.info("repro: training on %d windows", len(data.train))
    model, history = train(model, data, cfg)

    log.info("repro: simulating held-out test-platform scenarios")
    eval_plan = make_plan(
        {
            ScenarioKind.CDDP: args.scenarios,
            ScenarioKind.SDP: args.scenarios // 2,
            ScenarioKind.IDLE: args.scenarios // 2,
        },
        seed=seeds[4],
        duration=6.0,
    )
    tset = TransformSet.build(other, base)
    transformed = _scenario_traces(other, eval_plan, isp, tset)
    untransformed = _scenario_traces(other, eval_plan, isp, None)
    detector = StreamingDetector(model, DetectorConfig())
    report_t = evaluate(detector, _labeled(model, transformed))
    report_u = evaluate(detector, _labeled(model, untransformed))

    positives = sum(1 for s in eval_plan if s.kind is isp)
    lines = [
        "cross-platform reproduction report",
        f"seed {args.seed}",
        f"interaction profile {isp.value}",
        f"training windows {data.counts()[0]} (validation {data.counts()[1]})",
        f"epochs run {len(history['val_loss'])}, best epoch {history['best_epoch']}",
        f"evaluation scenarios {len(eval_plan)} ({positives} positive)",
        "",
        "transformed test-platform signals:",
        f"  TP {report_t.true_positives}  FP {report_t.false_positives}"
        f"  TN {report_t.true_negatives}  FN {report_t.false_negatives}",
        f"  true-positive rate {report_t.true_positives / positives:.2f}",
        f"  accuracy {report_t.accuracy:.2f}",
        "",
        "untransformed test-platform signals:",
        f"  TP {report_u.true_positives}  FP {report_u.false_positives}"
        f"  TN {report_u.true_negatives}  FN {report_u.false_negatives}",
        f"  true-positive rate {report_u.true_positives / positives:.2f}",
        f"  accuracy {report_u.accuracy:.2f}",
        "",
    ]
    text = "\n".join(lines)
    Path(args.out).write_text(text)
    print(text, end="")
    print(f"report -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="uavtid", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"uavtid {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("simulate", help="run one scenario on a platform")
    p.add_argument("--platform", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("mrft", help="relay-feedback oscillation test")
    p.add_argument("--platform", required=True)
    p.add_argument("--loop", choices=[k.value for k in LoopKind], default="altitude")
    p.add_argument("--beta", type=float, default=-0.73)
    p.add_argument("--h", type=float, default=0.1)
    p.add_argument("--duration", type=float, default=30.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_mrft)

    p = sub.add_parser("identify", help="build a grid or match an oscillation record")
    p.add_argument("--grid", required=True, help="grid directory")
    p.add_argument("--build", action="store_true")
    p.add_argument("--bounds", help="k_eq=lo:hi,t_drag=lo:hi,t_prop=lo:hi,delay=lo:hi")
    p.add_argument("--j-star", type=float, default=10.0)
    p.add_argument("--budget", type=int, default=3_000_000)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--record", help="oscillation record JSON to match")
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_identify)

    p = sub.add_parser("transform", help="map a trace into the base domain")
    p.add_argument("--source", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target-rate", type=float, default=None)
    p.set_defaults(func=_cmd_transform)

    p = sub.add_parser("gen-data", help="generate a windowed labeled dataset")
    p.add_argument("--platform", required=True)
    p.add_argument("--base", help="base platform config for cross-platform mapping")
    p.add_argument("--isp", choices=["sdp", "cddp", "syt"], required=True)
    p.add_argument("--counts", help="sdp=4,wind=4,idle=4")
    p.add_argument("--full-scale", action="store_true")
    p.add_argument("--stride", type=int, default=100)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train the sequence classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hidden", default="200,100")
    p.add_argument("--dense", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="confusion matrix on a dataset split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "validation", "test"], default="test")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("detect", help="stream a trace through the detector")
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--platform", help="source platform config (with --base)")
    p.add_argument("--base", help="base platform config enabling the transform")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--sustain", type=float, default=0.05)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("repro", help="end-to-end cross-platform reproduction")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenarios", type=int, default=6, help="positives per side")
    p.add_argument("--stride", type=int, default=400)
    p.add_argument("--hidden", default="16,12")
    p.add_argument("--dense", type=int, default=8)
    p.add_argument("--epochs", type=int, default=8)
    p.set_defaults(func=_cmd_repro)

    return parser


def _failing_module(exc: Exception) -> str | None:
    """Name the pipeline module whose error class was raised, if any."""
    module = type(exc).__module__
    if module.startswith("uavtid."):
        return module.split(".", 1)[1]
    return None


def main(argv=None) -> int:
    logging.basicConfig(
        level=getattr(logging, os.environ.get("UAVTID_LOG", "warning").upper(), logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise _UsageError(parser, "a subcommand is required")
    except _UsageError as exc:
        exc.parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except Exception as exc:
        module = _failing_module(exc) or args.command
        print(f"error in {module}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
