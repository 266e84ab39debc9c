"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time

import numpy as np

from . import bench_descriptor as bd
from . import focal
from .planner import NoFeasiblePlan, SystemSpec, enumerate_plans, render_plans
from .profile_stats import ProfileDiff, ProfileSummary, compare, fragmentation, spans_from_log, summarize
from .projection import CostModel, IncompleteDims, NoCoverage, ProjectionReport, project, synthetic_run
from .report import EmptyChart, ReportConfig, render_diff, render_projection, render_summary
from .verbose_log import MalformedRecord, read_log

GRANULARITY_CHOICES = ("kind", "kind-dir", "kind-dir-dtype")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--strict", dest="strict", action="store_true", default=True, help="abort on malformed verbose lines (default)")
    mode.add_argument("--lenient", dest="strict", action="store_false", help="skip malformed verbose lines")
    p.add_argument("--granularity", choices=GRANULARITY_CHOICES, default="kind")
    p.add_argument("--format", dest="fmt", choices=("text", "csv", "json", "svg"), default=None)
    p.add_argument("--out", default="-", help="output path (default: stdout)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="dnnprof", description="oneDNN verbose-log profiling, projection and focal-loss kernel checks")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("parse", parents=[common], help="verbose log to CSV")
    p.add_argument("log")

    p = sub.add_parser("stats", parents=[common], help="kernel-time breakdown")
    p.add_argument("log")
    p.add_argument("--top-n", type=int, default=8)
    p.add_argument("--color-seed", type=int, default=0)
    p.add_argument("--include-create", action="store_true")

    p = sub.add_parser("compare", parents=[common], help="ratio breakdown of two logs")
    p.add_argument("reference")
    p.add_argument("target")
    p.add_argument("--log-scale", action="store_true")
    p.add_argument("--color-seed", type=int, default=0)

    p = sub.add_parser("bench-gen", parents=[common], help="benchmark batch file from a log")
    p.add_argument("log")

    p = sub.add_parser("bench-ingest", parents=[common], help="read benchmark results CSV")
    p.add_argument("results")

    p = sub.add_parser("project", parents=[common], help="efficiency projection")
    p.add_argument("log")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--results", help="results CSV from the benchmark runner")
    src.add_argument("--synthetic", choices=("echo", "constant", "flops"))
    p.add_argument("--cost", action="append", default=[], metavar="DRIVER=MS", help="constant cost per driver ('*' for any)")
    p.add_argument("--seconds-per-flop", type=float, default=1e-11)
    p.add_argument("--basis", choices=("min", "avg"), default="min")
    p.add_argument("--threshold", type=float, default=None, help="flag entries with efficiency below this")

    p = sub.add_parser("focal", parents=[common], help="evaluate and check the focal-loss kernels")
    p.add_argument("--input", help="CSV of logits, one 'value' per line")
    p.add_argument("--target", help="CSV of targets, one 'value' per line")
    p.add_argument("--random", type=int, default=None, metavar="N")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--xlo", type=float, default=-5.0)
    p.add_argument("--xhi", type=float, default=5.0)
    p.add_argument("--alpha", type=float, default=0.25)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--reduction", choices=focal.REDUCTIONS, default="mean")
    p.add_argument("--precision", choices=focal.PRECISIONS, default="f64")
    p.add_argument("--h", type=float, default=1e-5)

    p = sub.add_parser("plan", parents=[common], help="rank/thread placement")
    p.add_argument("--sockets", type=int, required=True)
    p.add_argument("--cores", type=int, required=True)
    p.add_argument("--mem-total", type=float, required=True)
    p.add_argument("--mem-per-rank", type=float, required=True)
    p.add_argument("--local-batch", type=int, required=True)
    p.add_argument("--max-global-batch", type=int, default=None)

    p = sub.add_parser("report", parents=[common], help="render JSON from stats/compare/project")
    p.add_argument("json_file")
    p.add_argument("--top-n", type=int, default=8)
    p.add_argument("--color-seed", type=int, default=0)
    p.add_argument("--log-scale", action="store_true")
    p.add_argument("--threshold", type=float, default=None)
    return parser


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return fh.read()
    except OSError as exc:
        raise DataError(str(exc)) from None


def _load_log(path: str, strict: bool):
    try:
        return read_log(path, strict=strict)
    except OSError as exc:
        raise DataError(str(exc)) from None


def _cfg(args, default: str = "text") -> ReportConfig:
    return ReportConfig(
        output_format=args.fmt or default,
        top_n=getattr(args, "top_n", 8),
        color_seed=getattr(args, "color_seed", 0),
        log_scale=getattr(args, "log_scale", False),
    )


def _read_values(path: str) -> np.ndarray:
    rows = list(csv.reader(_read_text(path).splitlines()))
    if rows and rows[0] and rows[0][0].strip() == "value":
        rows = rows[1:]
    try:
        return np.array([float(r[0]) for r in rows if r and r[0].strip()], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def cmd_parse(args) -> str:
    log = _load_log(args.log, args.strict)
    if args.fmt == "json":
        return json.dumps(
            {
                "type": "log",
                "source": log.source_name,
                "lines_total": log.lines_total,
                "lines_skipped": log.lines_skipped,
                "header_info": log.header_info,
                "records": [r.to_line() for r in log.records],
            },
            indent=2,
        ) + "\n"
    return log.to_csv()


def cmd_stats(args) -> str:
    log = _load_log(args.log, args.strict)
    summary = summarize(log, args.granularity, include_create=args.include_create)
    out = render_summary(summary, _cfg(args))
    if (args.fmt or "text") == "text":
        out += f"fragmentation: {fragmentation(spans_from_log(log)):.4f}\n"
    return out


def cmd_compare(args) -> str:
    ref = summarize(_load_log(args.reference, args.strict), args.granularity)
    tgt = summarize(_load_log(args.target, args.strict), args.granularity)
    return render_diff(compare(ref, tgt), _cfg(args))


def cmd_bench_gen(args) -> str:
    log = _load_log(args.log, args.strict)
    return bd.emit_batch(bd.dedupe(log.records))


def cmd_bench_ingest(args) -> str:
    results = bd.ingest_results(_read_text(args.results))
    if args.fmt == "json":
        return json.dumps(
            {k: {"avg_ms": r.avg_ms, "min_ms": r.min_ms, "runs": r.runs} for k, r in sorted(results.items())},
            indent=2,
        ) + "\n"
    return bd.export_results(results)


def _cost_model(args) -> CostModel:
    if args.synthetic == "echo":
        return CostModel("echo")
    if args.synthetic == "flops":
        return CostModel("flops_linear", seconds_per_flop=args.seconds_per_flop)
    costs = {}
    for item in args.cost:
        driver, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--cost expects DRIVER=MS, got {item!r}")
        try:
            costs[driver] = float(value)
        except ValueError:
            raise UsageError(f"--cost expects a number, got {value!r}") from None
    if not costs:
        raise UsageError("--synthetic constant needs at least one --cost")
    return CostModel("constant_per_driver", per_driver=costs)


def cmd_project(args) -> str:
    log = _load_log(args.log, args.strict)
    descriptors = bd.dedupe(log.records)
    if args.results:
        results = bd.ingest_results(_read_text(args.results))
    else:
        try:
            results = synthetic_run(descriptors, _cost_model(args))
        except KeyError as exc:
            raise DataError(str(exc)) from None
    report = project(descriptors, results, basis=args.basis)
    return render_projection(report, _cfg(args), args.threshold)


def cmd_focal(args) -> str:
    if args.random is not None:
        rng = np.random.default_rng(args.seed)
        x = rng.uniform(args.xlo, args.xhi, args.random)
        y = rng.integers(0, 2, args.random).astype(np.float64)
    elif args.input and args.target:
        x, y = _read_values(args.input), _read_values(args.target)
    else:
        raise UsageError("focal needs --random N or both --input and --target")
    params = focal.FocalParams(args.alpha, args.gamma, args.reduction)
    xb = focal.ElementBuffer(x, args.precision)
    yb = focal.ElementBuffer(y, args.precision)

    results, timings, passes = {}, {}, {}
    for name, fn in (
        ("reference", focal.focal_forward_reference),
        ("general", focal.focal_forward_general),
        ("simplified", focal.focal_forward_simplified),
    ):
        stats = focal.KernelStats()
        t0 = time.perf_counter()
        out = fn(xb, yb, params, stats=stats)
        timings[name] = time.perf_counter() - t0
        results[name] = float(out) if not isinstance(out, focal.ElementBuffer) else float(np.sum(out.values, dtype=np.float64))
        passes[name] = stats.passes

    ones = 1.0 if params.reduction != "none" else np.ones_like(x)
    t0 = time.perf_counter()
    grad = focal.focal_backward(ones, xb, yb, params).values.astype(np.float64)
    t_bwd = time.perf_counter() - t0
    num = focal.focal_backward_numeric(x, y, params, args.h).values
    mask = np.abs(num) > 1e-10
    rel = np.abs(grad - num)[mask] / np.abs(num)[mask]
    max_rel = float(rel.max()) if rel.size else 0.0
    dev = focal.bf16_deviation(x, y, params)

    data = {
        "type": "focal",
        "n": int(x.size),
        "precision": args.precision,
        "alpha": params.alpha,
        "gamma": params.gamma,
        "reduction": params.reduction,
        "loss": results,
        "passes": passes,
        "timing_s": timings | {"backward": t_bwd},
        "grad_check": {"h": args.h, "checked": int(mask.sum()), "max_rel_error": max_rel},
        "bf16_deviation": {"f64": dev.loss_f64, "bf16": dev.loss_bf16, "abs": dev.abs_error, "rel": dev.rel_error},
    }
    if args.fmt == "json":
        return json.dumps(data, indent=2) + "\n"
    lines = [f"n={data['n']} precision={args.precision} alpha={params.alpha} gamma={params.gamma} reduction={params.reduction}"]
    for name in results:
        lines.append(f"{name:<11} loss={results[name]:.10g} passes={passes[name]} time={timings[name] * 1e3:.3f} ms")
    lines.append(f"backward    time={t_bwd * 1e3:.3f} ms")
    lines.append(f"grad check  h={args.h} points={int(mask.sum())} max_rel_error={max_rel:.3e}")
    lines.append(
        f"bf16 cast   f64={dev.loss_f64:.10g} bf16={dev.loss_bf16:.10g} "
        f"abs_err={dev.abs_error:.3e} rel_err={dev.rel_error:.3e}"
    )
    return "\n".join(lines) + "\n"


def cmd_plan(args) -> str:
    spec = SystemSpec(args.sockets, args.cores, args.mem_total, args.mem_per_rank)
    plans = enumerate_plans(spec, args.local_batch)
    return render_plans(plans, "json" if args.fmt == "json" else "text", args.max_global_batch)


def cmd_report(args) -> str:
    try:
        data = json.loads(_read_text(args.json_file))
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.json_file}: {exc}") from None
    kind = data.get("type") if isinstance(data, dict) else None
    cfg = _cfg(args)
    if kind == "summary":
        return render_summary(ProfileSummary.from_dict(data), cfg)
    if kind == "diff":
        return render_diff(ProfileDiff.from_dict(data), cfg)
    if kind == "projection":
        return render_projection(ProjectionReport.from_dict(data), cfg, args.threshold)
    raise DataError(f"{args.json_file}: unknown report type {kind!r}")


COMMANDS = {
    "parse": cmd_parse,
    "stats": cmd_stats,
    "compare": cmd_compare,
    "bench-gen": cmd_bench_gen,
    "bench-ingest": cmd_bench_ingest,
    "project": cmd_project,
    "focal": cmd_focal,
    "plan": cmd_plan,
    "report": cmd_report,
}

DATA_ERRORS = (
    DataError,
    MalformedRecord,
    bd.FormatError,
    bd.EmptySet,
    bd.InvalidDescriptor,
    bd.UnsupportedDriver,
    NoCoverage,
    IncompleteDims,
    NoFeasiblePlan,
    EmptyChart,
    focal.ShapeError,
    focal.EmptyReduction,
    focal.BinaryTargetRequired,
    KeyError,
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        text = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"dnnprof: error: {exc}", file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"dnnprof: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"dnnprof: {exc}", file=sys.stderr)
        return 2
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
