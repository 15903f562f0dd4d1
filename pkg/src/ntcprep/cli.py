"""Command-line entry point: ``ntcprep <subcommand> ...``.

Exit codes: 0 success, 1 usage error (bad flags, inapplicable strategy),
2 data error (unreadable or malformed input). Batch subcommands report
per-file failures on stderr and keep going.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .audit import audit_dataset, expand_inputs, render_report
from .dataset import (
    IoFailure,
    check_applicable,
    encode_record,
    export_bundle,
    filter_noise,
    label_by_sni,
    load_sessions,
    split_train_test,
    write_label_csv,
)
from .extraction import ExtractionSpec, IncompatibleSpec, PRESETS, extract, preset_spec
from .granularity import DEFAULT_BURST_GAP, GRANULARITIES, NonPositiveGap, units_for
from .occlusion import STRATEGY_IDS, OcclusionSeed, get_strategy, occlude_frame, occlude_samples
from .packet import parse_all, parse_packet
from .pcapio import CaptureError, read_capture, write_capture

log = logging.getLogger("ntcprep")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this tool reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {text}")
    return value


def _ratios(text: str) -> tuple[float, ...]:
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad split ratios {text!r}") from None
    if abs(sum(parts) - 1.0) > 1e-9 or any(p < 0 for p in parts):
        raise argparse.ArgumentTypeError(f"split ratios must be non-negative and sum to 1, got {text}")
    return parts


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=_seed, default=None, help="global 64-bit seed (default: $NTC_SEED or 0)")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def _extraction_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--granularity", choices=GRANULARITIES, default="session")
    p.add_argument("--extraction", choices=("T1", "T2", "T3"), default="T3", help="extraction type")
    p.add_argument("--selection", choices=("first", "any"), default="first")
    p.add_argument("--preset", choices=sorted(PRESETS), default="etbert")
    p.add_argument("--m", type=int, default=None, help="override bytes per sample/vector")
    p.add_argument("--n", type=int, default=None, help="override packet count")
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--drop-short", action="store_true", help="skip units with fewer than n packets")
    p.add_argument("--gap", type=float, default=DEFAULT_BURST_GAP, help="burst inter-arrival gap in seconds")
    p.add_argument("--payload-only-concat", action="store_true", help="T1/T2: later frames contribute payload only")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="ntcprep", description="Packet-capture preprocessing for traffic classification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("audit", parents=[common], help="encryption and cipher-suite audit")
    p.add_argument("--input", nargs="+", required=True, help="capture files or directories")
    p.add_argument("--csv", help="per-file CSV report")
    p.add_argument("--json", help="JSON report")

    p = sub.add_parser("split", parents=[common], help="write one capture per session/flow/burst/packet")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--granularity", choices=GRANULARITIES, default="session")
    p.add_argument("--gap", type=float, default=DEFAULT_BURST_GAP)
    p.add_argument("--global-bursts", action="store_true", help="cut bursts over the whole capture, not per session")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("extract", parents=[common], help="fixed-size samples as NTCS records")
    p.add_argument("--input", nargs="+", required=True)
    _extraction_flags(p)
    p.add_argument("--global-bursts", action="store_true", help="cut bursts over the whole capture, not per session")
    p.add_argument("--strategy", choices=STRATEGY_IDS, default="A1", help="occlusion strategy")
    p.add_argument("--out", required=True, help="record file; an .index.csv is written beside it")

    p = sub.add_parser("occlude", parents=[common], help="rewrite a capture frame by frame")
    p.add_argument("--input", required=True)
    p.add_argument("--strategy", choices=STRATEGY_IDS, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("label", parents=[common], help="SNI labels per session as CSV")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--collapse-subdomains", action="store_true")
    p.add_argument("--keep-noise", action="store_true", help="do not drop DNS/NTP/unencrypted sessions")

    p = sub.add_parser("dataset", parents=[common], help="labeled, split, occluded sample bundle")
    p.add_argument("--input", nargs="+", required=True)
    _extraction_flags(p)
    p.add_argument("--strategy", choices=STRATEGY_IDS, default="A1", help="occlusion strategy")
    p.add_argument("--split", type=_ratios, default=(0.8, 0.1, 0.1))
    p.add_argument("--collapse-subdomains", action="store_true")
    p.add_argument("--allow-small", action="store_true", help="keep classes with fewer sessions than splits")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a small synthetic demo corpus")
    p.add_argument("--out", required=True)
    return parser


def _spec(args) -> ExtractionSpec:
    overrides = dict(stride=args.stride, drop_short=args.drop_short, payload_only_concat=args.payload_only_concat)
    if args.granularity == "packet":
        if args.extraction != "T1" and args.extraction is not None:
            log.info("packet granularity: using T1")
        spec = preset_spec(args.preset, "packet", "T1", **overrides)
    else:
        spec = preset_spec(args.preset, args.granularity, args.extraction, args.selection, **overrides)
    if args.m is not None or args.n is not None:
        spec = ExtractionSpec(
            spec.strategy,
            args.m or spec.m,
            args.n or spec.n,
            spec.selection,
            spec.stride,
            spec.pad_byte,
            spec.drop_short,
            spec.payload_only_concat,
        )
    return spec


def _inputs(args) -> list[Path]:
    paths = expand_inputs(args.input)
    if not paths:
        raise UsageError(f"no capture files found in {' '.join(args.input)}")
    return paths


def cmd_audit(args) -> int:
    paths = _inputs(args)
    stats = audit_dataset(paths, workers=args.workers)
    report = render_report(stats, args.csv, args.json)
    for name, err in sorted(stats.errors.items()):
        print(f"warning: {name}: {err}", file=sys.stderr)
    if not args.csv and not args.json:
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    failed = [p for p in paths if str(p) in stats.errors and str(p) not in stats.per_file]
    return EXIT_DATA if len(failed) == len(paths) else EXIT_OK


def _read_or_warn(path: Path):
    try:
        meta, raw, err = read_capture(path)
    except (CaptureError, OSError) as exc:
        print(f"warning: {path}: {exc}", file=sys.stderr)
        return None
    if err is not None:
        print(f"warning: {path}: {err} (kept {len(raw)} packets)", file=sys.stderr)
    return meta, raw


def cmd_split(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = _inputs(args)
    ok = 0
    for path in paths:
        got = _read_or_warn(path)
        if got is None:
            continue
        meta, raw = got
        parsed = [parse_packet(r) for r in raw]
        units = units_for(parsed, args.granularity, args.gap, args.global_bursts)
        for unit in units:
            name = f"{path.stem}.{unit.unit_id}.pcap".replace("/", "_")
            write_capture(meta, [p.raw for p in unit.packets], out / name)
        log.info("%s: %d %s unit(s)", path, len(units), args.granularity)
        ok += 1
    return EXIT_OK if ok else EXIT_DATA


def cmd_extract(args) -> int:
    spec = _spec(args)
    check_applicable(args.strategy, args.granularity, spec)
    strategy = get_strategy(args.strategy)
    paths = _inputs(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    ok = 0
    with open(out, "wb") as fh:
        for path in paths:
            got = _read_or_warn(path)
            if got is None:
                continue
            ok += 1
            parsed = parse_all(got[1])
            for unit in units_for(parsed, args.granularity, args.gap, args.global_bursts):
                samples = extract(unit, spec)
                samples = occlude_samples(samples, unit.packets, strategy, args.seed, path.name, spec.pad_byte)
                for s in samples:
                    fh.write(encode_record(0, s.data))
                    rows.append([len(rows), path.name, s.unit_key, s.window_index, len(s.data)])
    with open(out.with_suffix(".index.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record", "file", "unit", "window", "length"])
        w.writerows(rows)
    log.info("wrote %d samples to %s", len(rows), out)
    return EXIT_OK if ok else EXIT_DATA


def cmd_occlude(args) -> int:
    meta, raw, err = read_capture(args.input)
    if err is not None:
        print(f"warning: {args.input}: {err} (kept {len(raw)} packets)", file=sys.stderr)
    strategy = get_strategy(args.strategy)
    source = Path(args.input).name
    out = [occlude_frame(pp, strategy, OcclusionSeed(args.seed, source, "frame", pp.index)) for pp in parse_all(raw)]
    write_capture(meta, out, args.out)
    log.info("wrote %d frames to %s", len(out), args.out)
    return EXIT_OK


def cmd_label(args) -> int:
    sessions = load_sessions(_inputs(args))
    if not args.keep_noise:
        sessions = filter_noise(sessions)
    labeled, unlabeled = label_by_sni(sessions, args.collapse_subdomains)
    write_label_csv(labeled, args.csv)
    log.info("%d labeled, %d unlabeled session(s)", len(labeled), len(unlabeled))
    return EXIT_OK


def cmd_dataset(args) -> int:
    spec = _spec(args)
    # reject inapplicable combinations before touching any input
    check_applicable(args.strategy, args.granularity, spec)
    sessions = filter_noise(load_sessions(_inputs(args)))
    labeled, unlabeled = label_by_sni(sessions, args.collapse_subdomains)
    assignment = split_train_test(labeled, args.split, args.seed, allow_small=args.allow_small)
    for label, count in sorted(assignment.dropped.items()):
        print(f"warning: class {label!r} dropped ({count} session(s) < {len(args.split)} splits)", file=sys.stderr)
    bundle = export_bundle(
        labeled, assignment, spec, args.strategy, args.granularity, args.seed, args.out, args.gap, args.workers
    )
    log.info(
        "bundle %s: %d classes, counts %s, %d unlabeled session(s) skipped",
        args.out,
        len(bundle.manifest["class_map"]),
        bundle.manifest["counts"],
        len(unlabeled),
    )
    return EXIT_OK


def cmd_synth(args) -> int:
    from .forge import write_demo_corpus

    paths = write_demo_corpus(args.out, seed=args.seed)
    log.info("wrote %d captures to %s", len(paths), args.out)
    return EXIT_OK


COMMANDS = {
    "audit": cmd_audit,
    "split": cmd_split,
    "extract": cmd_extract,
    "occlude": cmd_occlude,
    "label": cmd_label,
    "dataset": cmd_dataset,
    "synth": cmd_synth,
}


def _resolve(args) -> None:
    if args.seed is None:
        env = os.environ.get("NTC_SEED")
        try:
            args.seed = _seed(env) if env else 0
        except (ValueError, argparse.ArgumentTypeError):
            raise UsageError(f"NTC_SEED={env!r} is not a 64-bit unsigned integer") from None
    if args.workers is None:
        args.workers = os.cpu_count() or 1
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        _resolve(args)
        config = {k: v for k, v in sorted(vars(args).items())}
        log.info("config %s", json.dumps(config, sort_keys=True, default=str))
        return COMMANDS[args.command](args)
    except (UsageError, IncompatibleSpec, NonPositiveGap) as exc:
        print(f"ntcprep {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CaptureError, IoFailure, OSError, ValueError) as exc:
        print(f"ntcprep {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
