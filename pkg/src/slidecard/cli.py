"""``slidecard`` command-line entry point.

Exit codes: 0 ok, 2 config, 3 parse, 4 resource, 5 incompatible sketches.
Settings come from built-in defaults, then ``--params FILE``, then flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from functools import reduce
from pathlib import Path

from . import __version__
from .analytics import prob_weight_eq, prob_weight_ge
from .config import DEFAULT_TUPLE_CAP, SketchParams, load_param_file, sampling_threshold
from .distributed import POLICIES, NodeSet
from .errors import ConfigError, IncompatibleSketchError, ParseError, ResourceError, SlidecardError
from .ingest_io import (
    AnetSpec,
    TraceStats,
    atomic_output,
    classify_arrays,
    iter_trace_chunks,
    load_sketch,
    read_report_csv,
    read_trace,
    save_sketch,
    write_report_rows,
    REPORT_HEADER,
    TRUTH_HEADER,
    write_truth,
)
from .oracle_metrics import GenSpec, exact_detect, gen_trace, score_windows, truth_rows, write_accuracy
from .sketch_arrays import Rsra, Slea, check_compatible, merge_structures
from .window_engine import DISCRETE, SLIDING, DetectionReport, WindowConfig, WindowEngine, detect

log = logging.getLogger("slidecard")

_PARAM_FLAGS = {
    "theta": int, "eta": int, "q": int, "r": int, "delta": int, "q_prime": int,
    "r_prime": int, "delta_prime": int, "eta_prime": int, "seed": int,
}


def _add_param_flags(p: argparse.ArgumentParser, window: bool = True) -> None:
    g = p.add_argument_group("sketch parameters (defaults: theta=1024, eta=8, q=q'=17, "
                             "r=r'=5, delta=5, delta'=16, eta'=16384)")
    g.add_argument("--params", metavar="FILE", help="key = value parameter file")
    for name, typ in _PARAM_FLAGS.items():
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    if window:
        w = p.add_argument_group("windowing")
        w.add_argument("--anet", help="comma-separated IPv4 prefixes of the monitored network")
        w.add_argument("--slice", dest="slice_duration", type=float, default=None,
                       help="slice duration in seconds (default 1)")
        w.add_argument("--k", type=int, default=None, help="slices per window (default 300)")
        w.add_argument("--t0", type=int, default=None,
                       help="stream start in microseconds (default: first timestamp, slice aligned)")
        w.add_argument("--mode", choices=(SLIDING, DISCRETE), default=None)
        w.add_argument("--reinit", action="store_true",
                       help="reinitialise sketches after every window (same as --mode discrete)")
        w.add_argument("--tuple-cap", type=int, default=None)
        w.add_argument("--reorder-tolerance-us", type=int, default=None)
        w.add_argument("--workers", type=int, default=None)
        w.add_argument("--on-error", choices=("abort", "skip"), default="abort",
                       help="malformed trace lines: abort (default) or skip and count")


def _settings(args) -> dict:
    values: dict = {}
    if getattr(args, "params", None):
        values.update(load_param_file(args.params))
    for key, value in vars(args).items():
        if value is not None and key != "params":
            values[key] = value
    return values


def _sketch_params(values: dict) -> SketchParams:
    return SketchParams.from_mapping({k: values[k] for k in _PARAM_FLAGS if k in values})


def _window_config(values: dict, verbose: bool = False) -> WindowConfig:
    try:
        mode = values.get("mode", SLIDING)
        if values.get("reinit") in (True, "1", "true", "yes"):
            mode = DISCRETE
        return WindowConfig(
            slice_duration=float(values.get("slice_duration", 1.0)),
            k=int(values.get("k", 300)),
            t0=int(values["t0"]) if values.get("t0") is not None else None,
            mode=mode,
            reorder_tolerance_us=int(values.get("reorder_tolerance_us", 1000)),
            tuple_cap=int(values.get("tuple_cap", DEFAULT_TUPLE_CAP)),
            workers=int(values.get("workers", 1)),
            verbose=verbose,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def _anet(values: dict) -> AnetSpec:
    if not values.get("anet"):
        raise ConfigError("--anet is required (monitored network prefixes)")
    try:
        return AnetSpec.parse(values["anet"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _require_file(path: str) -> None:
    if not Path(path).is_file():
        raise ParseError(f"trace file not found: {path}")


def _summary(report: DetectionReport, out) -> None:
    out.write(
        f"window={report.window_end_slice} candidates={report.candidates} "
        f"reported={len(report.entries)} hot={'/'.join(map(str, report.hot_counts))} "
        f"sf_product={report.sf_product:.6g} overflow={int(report.overflow)} "
        f"saturated={int(report.saturated or any(e.saturated for e in report.entries))} "
        f"partial={int(report.partial)}\n")


def _stream_into(engine: WindowEngine, path: str, anet: AnetSpec, on_error: str) -> TraceStats:
    stats = TraceStats()
    for ts, src, dst in iter_trace_chunks(path, on_error=on_error, stats=stats):
        t, a, b, dropped = classify_arrays(ts, src, dst, anet)
        stats.outside += dropped
        engine.feed(t, a, b)
    return stats


# -- subcommands ----------------------------------------------------------

def cmd_detect(args) -> int:
    values = _settings(args)
    params = _sketch_params(values)
    cfg = _window_config(values, verbose=args.all_candidates)
    if args.from_sketch:
        return _detect_from_sketch(args, params, cfg)
    anet = _anet(values)
    if args.trace is None:
        raise ConfigError("a trace file is required unless --from-sketch is given")
    _require_file(args.trace)
    if args.nodes and args.nodes > 1:
        engine = NodeSet(params, cfg, args.nodes, args.partition)
    else:
        engine = WindowEngine(params, cfg)
    stats = _stream_into(engine, args.trace, anet, args.on_error)
    reports = engine.finish()
    with atomic_output(args.out) as fh:
        fh.write(REPORT_HEADER + "\n")
        for report in reports:
            write_report_rows(report, fh, args.all_candidates)
    for report in reports:
        _summary(report, sys.stdout)
    sys.stdout.write(f"records={engine.records} packets={stats.packets} outside={stats.outside} "
                     f"skipped={stats.skipped} clamped={engine.clamped} reports={len(reports)}\n")
    if isinstance(engine, NodeSet) and engine.merge_bytes:
        sys.stdout.write(f"nodes={engine.n} merge_bytes_per_slice={engine.merge_bytes[0]}\n")
    return 0


def _detect_from_sketch(args, params: SketchParams, cfg: WindowConfig) -> int:
    rsra, slea = (load_sketch(p) for p in args.from_sketch)
    if not isinstance(rsra, Rsra) or not isinstance(slea, Slea):
        raise IncompatibleSketchError("--from-sketch expects an RSRA file then a SLEA file")
    if rsra.slices != slea.slices:
        raise IncompatibleSketchError(f"slice counter differs: RSRA {rsra.slices} vs SLEA {slea.slices}")
    expected_tau = sampling_threshold(params.theta, rsra.eta)
    if rsra.tau != expected_tau:
        raise IncompatibleSketchError(
            f"parameter tau differs: sketch {rsra.tau} vs {expected_tau} implied by theta={params.theta}")
    report = detect(rsra, slea, cfg.k, params.theta, rsra.slices, cfg.tuple_cap,
                    args.all_candidates, cfg.workers)
    with atomic_output(args.out) as fh:
        fh.write(REPORT_HEADER + "\n")
        write_report_rows(report, fh, args.all_candidates)
    _summary(report, sys.stdout)
    return 0


def cmd_node(args) -> int:
    values = _settings(args)
    params = _sketch_params(values)
    cfg = _window_config(values)
    anet = _anet(values)
    _require_file(args.trace)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    engine: WindowEngine

    def snapshot(s: int) -> None:
        save_sketch(engine.rsra, out_dir / f"rsra_{s:06d}.bin")
        save_sketch(engine.slea, out_dir / f"slea_{s:06d}.bin")

    engine = WindowEngine(params, cfg, run_detection=False,
                          on_slice_end=snapshot if args.per_slice else None)
    stats = _stream_into(engine, args.trace, anet, args.on_error)
    if args.end_slice is not None:
        if engine.current is not None and args.end_slice < engine.current:
            raise ConfigError(f"--end-slice {args.end_slice} precedes the last trace slice {engine.current}")
        engine.advance_to_slice(args.end_slice)
    save_sketch(engine.rsra, out_dir / "rsra.bin")
    save_sketch(engine.slea, out_dir / "slea.bin")
    sys.stdout.write(f"records={engine.records} packets={stats.packets} slices={engine.rsra.slices} "
                     f"bytes={engine.rsra.nbytes + engine.slea.nbytes}\n")
    return 0


def cmd_merge(args) -> int:
    sketches = [load_sketch(p) for p in args.inputs]
    for path, other in zip(args.inputs[1:], sketches[1:]):
        try:
            check_compatible(sketches[0], other)
        except IncompatibleSketchError as exc:
            raise IncompatibleSketchError(f"{args.inputs[0]} vs {path}: {exc}") from None
    merged = reduce(merge_structures, sketches)
    save_sketch(merged, args.out)
    sys.stdout.write(f"merged={len(sketches)} slices={merged.slices} bytes={merged.nbytes}\n")
    return 0


def cmd_oracle(args) -> int:
    values = _settings(args)
    params = _sketch_params(values)
    cfg = _window_config(values)
    anet = _anet(values)
    _require_file(args.trace)
    records = read_trace(args.trace, anet, on_error=args.on_error)
    truth = exact_detect(records, cfg, params.theta)
    with atomic_output(args.out) as fh:
        write_truth(truth_rows(truth), fh)
    sys.stdout.write(f"windows={len(truth)} supers={sum(len(v) for v in truth.values())}\n")
    return 0


def cmd_compare(args) -> int:
    values = _settings(args)
    params = _sketch_params(values)
    detected = {w: set(v) for w, v in read_report_csv(args.report).items()}
    windows = None
    if args.truth:
        with open(args.truth) as fh:
            is_truth = fh.readline().strip() == TRUTH_HEADER
        truth_raw = read_report_csv(args.truth)
        truth = {w: {a for a, c in v.items() if not is_truth or c >= params.theta}
                 for w, v in truth_raw.items()}
    elif args.trace:
        cfg = _window_config(values)
        anet = _anet(values)
        _require_file(args.trace)
        exact = exact_detect(read_trace(args.trace, anet, on_error=args.on_error), cfg, params.theta)
        truth = {w: set(v) for w, v in exact.items()}
        windows = sorted(exact)
    else:
        raise ConfigError("compare needs --truth CSV or --trace")
    results = score_windows(detected, truth, windows)
    with atomic_output(args.out) as fh:
        write_accuracy(results, fh)
    return 0


def cmd_analyze(args) -> int:
    if args.card < 0 or args.eta < 1 or args.tau < 0:
        raise ConfigError("need card >= 0, eta >= 1, tau >= 0")
    if args.n is not None and not 0 <= args.n <= args.eta:
        raise ConfigError("need 0 <= n <= eta")
    out = sys.stdout
    out.write("kind,eta1,probability\n")
    for eta1 in range(args.eta + 1):
        out.write(f"eq,{eta1},{prob_weight_eq(args.card, args.eta, args.tau, eta1)!r}\n")
    if args.n is not None:
        out.write(f"ge,{args.n},{prob_weight_ge(args.card, args.eta, args.tau, args.n)!r}\n")
    return 0


def cmd_gen_trace(args) -> int:
    fields: dict = {}
    if args.spec:
        try:
            fields.update(json.loads(Path(args.spec).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read trace spec {args.spec}: {exc}") from None
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            fields[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            fields[key.strip()] = raw
    spec = GenSpec.from_json(json.dumps(fields))
    result = gen_trace(spec, args.seed, args.out, args.sidecar)
    sys.stdout.write(f"packets={result.ts.size} planted={len(result.planted)} "
                     f"sidecar_rows={len(result.sidecar)}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slidecard", description="Sliding-window super point detection and cardinality estimation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="detect sliding super points in a trace")
    p.add_argument("trace", nargs="?")
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--from-sketch", nargs=2, metavar=("RSRA", "SLEA"),
                   help="detect on saved (e.g. merged) sketches instead of a trace")
    p.add_argument("--all-candidates", action="store_true",
                   help="also write candidates below theta, flagged below_theta")
    p.add_argument("--nodes", type=int, default=1, help="simulate N distributed nodes")
    p.add_argument("--partition", choices=POLICIES, default="hash-of-pair")
    _add_param_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("node", help="build and save per-node sketches from a trace shard")
    p.add_argument("trace")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--per-slice", action="store_true", help="also save a snapshot at every slice end")
    p.add_argument("--end-slice", type=int, default=None, help="advance (slide) up to this slice")
    _add_param_flags(p)
    p.set_defaults(func=cmd_node)

    p = sub.add_parser("merge", help="min-merge compatible sketch files")
    p.add_argument("out")
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("oracle", help="exact per-window super points of a trace")
    p.add_argument("trace")
    p.add_argument("--out", required=True)
    _add_param_flags(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("compare", help="FPR/FNR/TFR of a report against ground truth")
    p.add_argument("--report", required=True)
    p.add_argument("--truth", help="truth CSV (oracle output, gen-trace sidecar, or a report)")
    p.add_argument("--trace", help="compute the truth from this trace instead")
    p.add_argument("--out", required=True)
    _add_param_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("analyze", help="rough-estimator weight distribution")
    p.add_argument("--card", type=int, required=True)
    p.add_argument("--eta", type=int, default=8)
    p.add_argument("--tau", type=int, required=True)
    p.add_argument("--n", type=int, default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gen-trace", help="write a synthetic trace and its ground-truth sidecar")
    p.add_argument("--spec", help="JSON trace spec")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a spec field")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--sidecar", required=True)
    p.set_defaults(func=cmd_gen_trace)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SlidecardError as exc:
        print(f"slidecard: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except MemoryError:
        print("slidecard: error: out of memory", file=sys.stderr)
        return ResourceError.exit_code
    except OSError as exc:
        print(f"slidecard: error: {exc}", file=sys.stderr)
        return ResourceError.exit_code


if __name__ == "__main__":
    sys.exit(main())
