"""Kernel-time breakdowns, profile diffs and trace fragmentation."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

from .verbose_log import PrimitiveRecord, ProfileLog

GRANULARITIES = ("kind", "kind-dir", "kind-dir-dtype")


@dataclass(frozen=True)
class GroupKey:
    primitive_kind: str
    direction: Optional[str] = None
    data_type: Optional[str] = None

    @classmethod
    def of(cls, record: PrimitiveRecord, granularity: str) -> "GroupKey":
        if granularity == "kind":
            return cls(record.primitive_kind)
        if granularity == "kind-dir":
            return cls(record.primitive_kind, record.direction)
        if granularity == "kind-dir-dtype":
            return cls(record.primitive_kind, record.direction, record.config_dtype)
        raise ValueError(f"unknown granularity {granularity!r}")

    @classmethod
    def parse(cls, text: str) -> "GroupKey":
        return cls(*text.split("/"))

    def __str__(self) -> str:
        return "/".join(p for p in (self.primitive_kind, self.direction, self.data_type) if p is not None)

    def _sort_key(self):
        return tuple(p or "" for p in (self.primitive_kind, self.direction, self.data_type))


@dataclass(frozen=True)
class OpGroupStat:
    key: GroupKey
    call_count: int
    total_time_ms: float
    share: float

    @property
    def avg_time_ms(self) -> float:
        return self.total_time_ms / self.call_count


@dataclass(frozen=True)
class ProfileSummary:
    groups: tuple[OpGroupStat, ...]
    total_time_ms: float
    total_calls: int
    granularity: str

    def group(self, key: Union[GroupKey, str]) -> Optional[OpGroupStat]:
        key = GroupKey.parse(key) if isinstance(key, str) else key
        for g in self.groups:
            if g.key == key:
                return g
        return None

    def shares(self) -> dict[str, float]:
        return {str(g.key): g.share for g in self.groups}

    def to_dict(self) -> dict:
        return {
            "type": "summary",
            "granularity": self.granularity,
            "total_time_ms": self.total_time_ms,
            "total_calls": self.total_calls,
            "groups": [
                {
                    "key": str(g.key),
                    "calls": g.call_count,
                    "total_ms": g.total_time_ms,
                    "avg_ms": g.avg_time_ms,
                    "share": g.share,
                }
                for g in self.groups
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProfileSummary":
        groups = tuple(
            OpGroupStat(GroupKey.parse(g["key"]), int(g["calls"]), float(g["total_ms"]), float(g["share"]))
            for g in data["groups"]
        )
        return cls(groups, float(data["total_time_ms"]), int(data["total_calls"]), data["granularity"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["key", "calls", "total_ms", "avg_ms", "share"])
        for g in self.groups:
            w.writerow([str(g.key), g.call_count, repr(g.total_time_ms), repr(g.avg_time_ms), repr(g.share)])
        return out.getvalue()


def summarize(
    log: Union[ProfileLog, Iterable[PrimitiveRecord]],
    granularity: str = "kind",
    include_create: bool = False,
) -> ProfileSummary:
    """Aggregate exec records into per-group call counts, times and shares."""
    if granularity not in GRANULARITIES:
        raise ValueError(f"unknown granularity {granularity!r}")
    records = log.records if isinstance(log, ProfileLog) else log
    calls: dict[GroupKey, int] = {}
    times: dict[GroupKey, list[float]] = {}
    for r in records:
        if r.event_kind != "exec" and not include_create:
            continue
        key = GroupKey.of(r, granularity)
        calls[key] = calls.get(key, 0) + 1
        times.setdefault(key, []).append(r.time_ms)

    # fsum keeps the totals independent of record order
    totals = {k: math.fsum(v) for k, v in times.items()}
    total = math.fsum(totals.values())
    groups = [
        OpGroupStat(k, calls[k], totals[k], totals[k] / total if total > 0 else 0.0)
        for k in calls
    ]
    groups.sort(key=lambda g: (-g.total_time_ms, g.key._sort_key()))
    return ProfileSummary(tuple(groups), total, sum(calls.values()), granularity)


@dataclass(frozen=True)
class KeyDiff:
    ref_time: float
    target_time: float
    ref_calls: int
    target_calls: int

    @property
    def ratio(self) -> float:
        return _ratio(self.target_time, self.ref_time)

    @property
    def call_delta(self) -> int:
        return self.target_calls - self.ref_calls


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return 1.0 if num == 0 else math.inf
    return num / den


@dataclass(frozen=True)
class ProfileDiff:
    per_key: dict[GroupKey, KeyDiff]
    missing_in_target: frozenset[GroupKey]
    missing_in_reference: frozenset[GroupKey]
    ref_total: float
    target_total: float
    granularity: str = "kind"
    # times of keys present on one side only, for reporting
    unmatched_time: dict[GroupKey, float] = field(default_factory=dict)

    @property
    def overall_ratio(self) -> float:
        return _ratio(self.target_total, self.ref_total)

    def ratios(self) -> dict[str, float]:
        return {str(k): d.ratio for k, d in self.per_key.items()}

    def discrepancies(self) -> list[GroupKey]:
        """Keys with an infinite ratio (zero reference time, nonzero target)."""
        return [k for k, d in self.per_key.items() if math.isinf(d.ratio)]

    def to_dict(self) -> dict:
        return {
            "type": "diff",
            "granularity": self.granularity,
            "ref_total_ms": self.ref_total,
            "target_total_ms": self.target_total,
            "overall_ratio": _json_float(self.overall_ratio),
            "per_key": [
                {
                    "key": str(k),
                    "ref_ms": d.ref_time,
                    "target_ms": d.target_time,
                    "ratio": _json_float(d.ratio),
                    "ref_calls": d.ref_calls,
                    "target_calls": d.target_calls,
                    "call_delta": d.call_delta,
                }
                for k, d in self.per_key.items()
            ],
            "missing_in_target": sorted(str(k) for k in self.missing_in_target),
            "missing_in_reference": sorted(str(k) for k in self.missing_in_reference),
            "unmatched_ms": {str(k): v for k, v in sorted(self.unmatched_time.items(), key=lambda kv: kv[0]._sort_key())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProfileDiff":
        per_key = {
            GroupKey.parse(e["key"]): KeyDiff(float(e["ref_ms"]), float(e["target_ms"]), int(e["ref_calls"]), int(e["target_calls"]))
            for e in data["per_key"]
        }
        return cls(
            per_key,
            frozenset(GroupKey.parse(k) for k in data["missing_in_target"]),
            frozenset(GroupKey.parse(k) for k in data["missing_in_reference"]),
            float(data["ref_total_ms"]),
            float(data["target_total_ms"]),
            data.get("granularity", "kind"),
            {GroupKey.parse(k): float(v) for k, v in data.get("unmatched_ms", {}).items()},
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["key", "ref_ms", "target_ms", "ratio", "call_delta", "status"])
        for k, d in self.per_key.items():
            w.writerow([str(k), repr(d.ref_time), repr(d.target_time), repr(d.ratio), d.call_delta, "both"])
        for status, keys in (("missing_in_target", self.missing_in_target), ("missing_in_reference", self.missing_in_reference)):
            for k in sorted(keys, key=GroupKey._sort_key):
                w.writerow([str(k), "", "", "", "", status])
        return out.getvalue()


def _json_float(v: float):
    return "inf" if math.isinf(v) else v


class GranularityMismatch(ValueError):
    pass


def compare(reference: ProfileSummary, target: ProfileSummary) -> ProfileDiff:
    """Per-group time ratios (target / reference) and missing-op sets."""
    if reference.granularity != target.granularity:
        raise GranularityMismatch(f"cannot compare {reference.granularity!r} with {target.granularity!r}")
    ref = {g.key: g for g in reference.groups}
    tgt = {g.key: g for g in target.groups}
    shared = sorted(ref.keys() & tgt.keys(), key=GroupKey._sort_key)
    per_key = {
        k: KeyDiff(ref[k].total_time_ms, tgt[k].total_time_ms, ref[k].call_count, tgt[k].call_count)
        for k in shared
    }
    only_ref = frozenset(ref.keys() - tgt.keys())
    only_tgt = frozenset(tgt.keys() - ref.keys())
    unmatched = {k: ref[k].total_time_ms for k in only_ref}
    unmatched.update({k: tgt[k].total_time_ms for k in only_tgt})
    return ProfileDiff(
        per_key, only_ref, only_tgt, reference.total_time_ms, target.total_time_ms, reference.granularity, unmatched
    )


@dataclass(frozen=True)
class TraceSpan:
    name: str
    start: float
    end: float
    parent: Optional[int] = None

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"span {self.name!r} ends before it starts")


def fragmentation(spans: Sequence[TraceSpan]) -> float:
    """Fraction of adjacent span pairs whose operation name changes."""
    if len(spans) <= 1:
        return 0.0
    switches = sum(a.name != b.name for a, b in zip(spans, spans[1:]))
    return switches / (len(spans) - 1)


def spans_from_log(log: Union[ProfileLog, Iterable[PrimitiveRecord]]) -> list[TraceSpan]:
    """Lay exec records end to end as a serial trace (one span per primitive)."""
    records = log.records if isinstance(log, ProfileLog) else log
    spans = []
    t = 0.0
    for r in records:
        if r.event_kind != "exec":
            continue
        spans.append(TraceSpan(r.primitive_kind, t, t + r.time_ms))
        t += r.time_ms
    return spans
