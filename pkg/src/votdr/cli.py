"""Command line entry point: ``votdr simulate | analyze | report``.

Exit status is 0 on success, 1 for invalid input (configuration, event
file contents, arguments) and 2 when a file cannot be read or written.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .analysis import AnalysisReport, analyze, bin_events, dead_time_correction, stitch_traces
from .config import ConfigError, RunConfig, config_from_dict, load_config
from .eventfile import read_events, write_events
from .render import emit_trace_csv, render_svg
from .simulator import simulate_acquisition

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class _UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="votdr", description="Photon-counting OTDR simulation and analysis.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate an acquisition and write an event file")
    s.add_argument("--config", required=True, help="YAML run configuration")
    s.add_argument("--out", required=True, help="output event file")
    s.add_argument("--seed", type=int, help="override acquisition.seed")
    s.add_argument("--workers", type=int, help="override acquisition.workers")
    step = s.add_mutually_exclusive_group()
    step.add_argument("--step1", action="store_true", help="apply the step1 overrides")
    step.add_argument("--step2", action="store_true", help="apply the step2 overrides")

    a = sub.add_parser("analyze", help="bin, correct and analyze event files")
    a.add_argument("--events", required=True, help="event file (near-end step when stitching)")
    a.add_argument("--events2", help="far-end event file to stitch onto --events")
    a.add_argument("--config", help="configuration to use instead of the file's snapshot")
    a.add_argument("--bin", type=float, dest="bin_ns", help="bin width in ns")
    a.add_argument("--report", required=True, help="output JSON report")
    a.add_argument("--trace", help="output CSV trace")
    a.add_argument("--svg", help="output SVG plot")

    r = sub.add_parser("report", help="print a summary of a JSON report")
    r.add_argument("--report", required=True, help="JSON report from analyze")
    return p


def _simulate(args) -> int:
    cfg = load_config(args.config)
    if args.step1:
        cfg = cfg.for_step(1)
    elif args.step2:
        cfg = cfg.for_step(2)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be >= 0")
        cfg = replace(cfg, seed=args.seed)
    workers = cfg.workers
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        # execution setting only; the snapshot keeps the configured value
        workers = args.workers
    stream = simulate_acquisition(
        cfg.plan,
        cfg.laser,
        cfg.detector,
        cfg.gate,
        cfg.n_pulses,
        cfg.seed,
        workers=workers,
        metadata=cfg.to_dict(),
    )
    write_events(stream, args.out)
    print(f"{len(stream)} events from {stream.n_pulses} pulses written to {args.out}")
    return EXIT_OK


def _config_for(stream, override: RunConfig | None) -> RunConfig:
    if override is not None:
        return override
    if not stream.metadata:
        raise ConfigError("--config", "event file carries no configuration snapshot")
    return config_from_dict(stream.metadata)


def _corrected(stream, cfg: RunConfig, bin_width: float):
    return dead_time_correction(bin_events(stream, bin_width), cfg.window)


def _analyze(args) -> int:
    override = load_config(args.config) if args.config else None
    stream = read_events(args.events)
    cfg = _config_for(stream, override)
    bin_width = cfg.bin_width if args.bin_ns is None else args.bin_ns / 1e9
    if not bin_width > 0:
        raise ConfigError("--bin", "must be > 0")
    trace = _corrected(stream, cfg, bin_width)
    n_events = len(stream)
    if args.events2:
        stream2 = read_events(args.events2)
        cfg2 = _config_for(stream2, override)
        if cfg.overlap is None:
            raise ConfigError("analysis.overlap_m", "required to stitch two acquisitions")
        trace = stitch_traces(trace, _corrected(stream2, cfg2, bin_width), cfg.overlap, cfg.group_index)
        n_events += len(stream2)
    log_trace, report = analyze(
        trace,
        fiber_length=cfg.plan.length,
        pulse_width=cfg.laser.pulse_width,
        group_index=cfg.group_index,
        fit_region=cfg.fit_region,
        tail_region=cfg.tail_region,
        reflect_threshold=cfg.reflect_threshold,
        loss_threshold=cfg.loss_threshold,
    )
    report = replace(
        report,
        extra={
            "bin_width_ns": bin_width * 1e9,
            "n_events": n_events,
            "n_pulses": stream.n_pulses,
            "stitched": bool(args.events2),
        },
    )
    Path(args.report).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    if args.trace:
        emit_trace_csv(log_trace, args.trace)
    if args.svg:
        render_svg(log_trace, report, args.svg, title=Path(args.events).name)
    print(f"slope {report.slope:.4f} dB/km, dynamic range {report.dynamic_range:.2f} dB")
    return EXIT_OK


def _report(args) -> int:
    text = Path(args.report).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{args.report}: not valid JSON ({exc})") from None
    try:
        report = AnalysisReport.from_dict(data)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{args.report}: malformed report ({exc!r})") from None
    print(f"attenuation slope: {report.slope:.4f} dB/km")
    print(f"intercept: {report.intercept:.2f} dB")
    print(f"rms noise: {report.rms_noise:.2f} dB")
    print(f"dynamic range: {report.dynamic_range:.2f} dB")
    print(f"events: {len(report.events)}")
    for e in report.events:
        print(f"  {e.position:12.2f} m  {e.kind:<10s} {e.magnitude:8.3f} dB")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        handler = {"simulate": _simulate, "analyze": _analyze, "report": _report}[args.command]
        return handler(args)
    except OSError as exc:
        print(f"votdr: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"votdr: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
