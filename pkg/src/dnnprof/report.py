"""Text, CSV, JSON and SVG rendering of summaries, diffs and projections."""

from __future__ import annotations

import colorsys
import hashlib
import json
import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

from .profile_stats import GroupKey, KeyDiff, OpGroupStat, ProfileDiff, ProfileSummary
from .projection import ProjectionReport

FORMATS = ("text", "csv", "json", "svg")
WIDTH = 800
ROW_HEIGHT = 120


class EmptyChart(ValueError):
    pass


@dataclass(frozen=True)
class ReportConfig:
    output_format: str = "text"
    top_n: int = 8
    color_seed: int = 0
    log_scale: bool = False

    def __post_init__(self):
        if self.output_format not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}")
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")


def color_for(key: str, seed: int) -> str:
    digest = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    hue = int.from_bytes(digest[:2], "big") / 65536
    r, g, b = colorsys.hls_to_rgb(hue, 0.55, 0.6)
    return f"#{round(r * 255):02x}{round(g * 255):02x}{round(b * 255):02x}"


def fold_top_n(summary: ProfileSummary, top_n: int) -> list[OpGroupStat]:
    groups = list(summary.groups)
    if len(groups) <= top_n:
        return groups
    kept, rest = groups[:top_n], groups[top_n:]
    total = math.fsum(g.total_time_ms for g in rest)
    other = OpGroupStat(
        GroupKey("other"),
        sum(g.call_count for g in rest),
        total,
        math.fsum(g.share for g in rest),
    )
    return kept + [other]


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.4f}"


def _svg_open(height: int) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
        f'viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{height}" fill="#ffffff"/>',
    ]


def segment_widths(shares: list[float], width: int = WIDTH) -> list[int]:
    """Integer widths from cumulative rounding, so they add up to ``width``."""
    total = math.fsum(shares)
    edges, acc = [0], 0.0
    for s in shares:
        acc += s
        edges.append(round(acc / total * width) if total > 0 else 0)
    edges[-1] = width if total > 0 else 0
    return [b - a for a, b in zip(edges, edges[1:])]


def summary_svg(summary: ProfileSummary, cfg: ReportConfig) -> str:
    groups = fold_top_n(summary, cfg.top_n)
    if not groups or summary.total_time_ms <= 0:
        raise EmptyChart("nothing to plot")
    widths = segment_widths([g.share for g in groups])
    out = _svg_open(ROW_HEIGHT)
    x = 0
    for g, w in zip(groups, widths):
        key = str(g.key)
        label = f"{g.share * 100:.1f}%"
        out.append(
            f'<g class="segment" data-key="{escape(key)}">'
            f'<title>{escape(key)} {label}</title>'
            f'<rect x="{x}" y="20" width="{w}" height="50" fill="{color_for(key, cfg.color_seed)}"/>'
            f'<text x="{x + w / 2:.1f}" y="50" text-anchor="middle">{label}</text>'
            f'<text x="{x + w / 2:.1f}" y="90" text-anchor="middle">{escape(key)}</text></g>'
        )
        x += w
    out.append("</svg>")
    return "\n".join(out) + "\n"


def summary_text(summary: ProfileSummary, cfg: ReportConfig) -> str:
    lines = [f"{'key':<40} {'calls':>8} {'total_ms':>14} {'avg_ms':>12} {'share':>7}"]
    for g in fold_top_n(summary, cfg.top_n):
        lines.append(
            f"{str(g.key):<40} {g.call_count:>8} {g.total_time_ms:>14.4f} "
            f"{g.avg_time_ms:>12.4f} {g.share * 100:>6.1f}%"
        )
    lines.append(f"{'total':<40} {summary.total_calls:>8} {summary.total_time_ms:>14.4f}")
    return "\n".join(lines) + "\n"


def render_summary(summary: ProfileSummary, cfg: ReportConfig = ReportConfig()) -> str:
    if cfg.output_format == "json":
        return summary.to_json()
    if cfg.output_format == "csv":
        return summary.to_csv()
    if cfg.output_format == "svg":
        return summary_svg(summary, cfg)
    return summary_text(summary, cfg)


def _missing_lines(diff: ProfileDiff) -> list[str]:
    lines = []
    for label, keys in (("target", diff.missing_in_target), ("reference", diff.missing_in_reference)):
        for k in sorted(keys, key=GroupKey._sort_key):
            lines.append(f"missing in {label}: {k}")
    return lines


def diff_svg(diff: ProfileDiff, cfg: ReportConfig) -> str:
    items = [(str(k), d.ratio) for k, d in diff.per_key.items()]
    callouts = _missing_lines(diff)
    if not items and not callouts:
        raise EmptyChart("nothing to plot")
    label_w, bar_w = 200, WIDTH - 260
    finite = [r for _, r in items if math.isfinite(r) and r > 0]
    height = ROW_HEIGHT * max(len(items), 1) + 20 * len(callouts) + 20
    out = _svg_open(height)
    if cfg.log_scale:
        span = max((abs(math.log2(r)) for r in finite), default=1.0) or 1.0
    else:
        span = max(finite, default=1.0)
    for i, (key, ratio) in enumerate(items):
        y = i * ROW_HEIGHT + 35
        color = color_for(key, cfg.color_seed)
        if cfg.log_scale:
            mid = label_w + bar_w / 2
            if math.isinf(ratio):
                x0, w = mid, bar_w / 2
            elif ratio <= 0:
                x0, w = label_w, bar_w / 2
            else:
                w = abs(math.log2(ratio)) / span * bar_w / 2
                x0 = mid if ratio >= 1 else mid - w
        else:
            x0 = label_w
            w = bar_w if math.isinf(ratio) else ratio / span * bar_w
        out.append(
            f'<g class="bar" data-key="{escape(key)}">'
            f'<text x="{label_w - 8}" y="{y + 30}" text-anchor="end">{escape(key)}</text>'
            f'<rect x="{x0:.2f}" y="{y}" width="{w:.2f}" height="50" fill="{color}"/>'
            f'<text x="{label_w + bar_w + 8}" y="{y + 30}">{_fmt(ratio)}</text></g>'
        )
    y = ROW_HEIGHT * max(len(items), 1)
    for line in callouts:
        y += 20
        out.append(f'<text class="callout" x="10" y="{y}">{escape(line)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def diff_text(diff: ProfileDiff) -> str:
    lines = [f"{'key':<40} {'ref_ms':>12} {'target_ms':>12} {'ratio':>10} {'dcalls':>7}"]
    for k, d in diff.per_key.items():
        lines.append(f"{str(k):<40} {d.ref_time:>12.4f} {d.target_time:>12.4f} {_fmt(d.ratio):>10} {d.call_delta:>+7d}")
    lines.append(f"{'overall':<40} {diff.ref_total:>12.4f} {diff.target_total:>12.4f} {_fmt(diff.overall_ratio):>10}")
    lines.extend(_missing_lines(diff))
    return "\n".join(lines) + "\n"


def render_diff(diff: ProfileDiff, cfg: ReportConfig = ReportConfig()) -> str:
    if cfg.output_format == "json":
        return diff.to_json()
    if cfg.output_format == "csv":
        return diff.to_csv()
    if cfg.output_format == "svg":
        return diff_svg(diff, cfg)
    return diff_text(diff)


def render_projection(report: ProjectionReport, cfg: ReportConfig = ReportConfig(), threshold: float | None = None) -> str:
    flagged = set(report.candidates(threshold)) if threshold is not None else set()
    if cfg.output_format == "json":
        if threshold is None:
            return report.to_json()
        data = report.to_dict()
        data["threshold"] = threshold
        data["candidates"] = sorted(flagged)
        return json.dumps(data, indent=2) + "\n"
    if cfg.output_format == "csv":
        lines = ["descriptor_id,calls,observed_avg_ms,achievable_ms,efficiency,candidate"]
        for k, e in report.per_entry.items():
            lines.append(f"{k},{e.calls},{e.observed_avg_ms!r},{e.achievable_ms!r},{e.efficiency!r},{int(k in flagged)}")
        return "\n".join(lines) + "\n"
    if cfg.output_format == "svg":
        if not report.per_entry:
            raise EmptyChart("nothing to plot")
        fake = ProfileDiff(
            {GroupKey(k): KeyDiff(e.observed_total, e.achievable_total, e.calls, e.calls) for k, e in report.per_entry.items()},
            frozenset(), frozenset(), 1.0, report.overall_efficiency,
        )
        return diff_svg(fake, cfg)
    width = max([len(k) for k in report.per_entry] + [20])
    lines = [f"{'descriptor':<{width}} {'calls':>7} {'observed_ms':>12} {'achievable_ms':>14} {'eff':>7}"]
    for k, e in report.per_entry.items():
        mark = " *" if k in flagged else ""
        lines.append(
            f"{k:<{width}} {e.calls:>7} {e.observed_avg_ms:>12.4f} {e.achievable_ms:>14.4f} {e.efficiency:>7.3f}{mark}"
        )
    lines.append(f"overall efficiency: {report.overall_efficiency:.4f}")
    lines.append(f"coverage: {report.coverage * 100:.1f}% of observed time")
    for kind, eff in sorted(report.per_kind_efficiency.items()):
        lines.append(f"  {kind}: {eff:.4f}")
    if flagged:
        lines.append(f"{len(flagged)} optimization candidate(s) below {threshold} marked with *")
    return "\n".join(lines) + "\n"

