"""Weighted efficiency projection over a descriptor set.

The efficiency ratio is ``sum(calls * achievable_ms) / sum(calls * observed_avg_ms)``
over descriptors that have a benchmark result. 1.0 means the model already
runs its primitives as fast as the stand-alone kernel benchmarks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping

from .bench_descriptor import BenchResult, DescriptorSet, ProblemDescriptor


class IncompleteDims(ValueError):
    pass


class NoCoverage(ValueError):
    pass


def _need(d: ProblemDescriptor, *keys: str) -> list[int]:
    missing = [k for k in keys if k not in d.dims]
    if missing:
        raise IncompleteDims(f"{d.driver} descriptor lacks {', '.join(missing)}")
    return [d.dims[k] for k in keys]


def estimate_flops(d: ProblemDescriptor) -> int:
    """Flop count: 2 * MACs for conv/matmul/ip, dst element count otherwise."""
    dims = d.dims
    if d.driver == "conv":
        mb, oc, ic, oh, ow, kh, kw = _need(d, "mb", "oc", "ic", "oh", "ow", "kh", "kw")
        # ic/oc are totals across groups, so MACs per output scale with ic/g
        g = dims.get("g", 1) or 1
        spatial = oh * ow * kh * kw * dims.get("od", 1) * dims.get("kd", 1)
        return 2 * mb * oc * (ic // g) * spatial
    if d.driver == "matmul":
        m, n, k = _need(d, "m", "n", "k")
        return 2 * m * n * k * dims.get("mb", 1)
    if d.driver == "ip":
        mb, oc, ic = _need(d, "mb", "oc", "ic")
        k = ic
        for key in ("id", "ih", "iw"):
            k *= dims.get(key, 1)
        return 2 * mb * oc * k
    mb, = _need(d, "mb")
    count = mb * dims.get("oc", dims.get("ic", 1))
    for out_key, in_key in (("od", "id"), ("oh", "ih"), ("ow", "iw")):
        count *= dims.get(out_key, dims.get(in_key, 1))
    return count


@dataclass(frozen=True)
class CostModel:
    """Synthetic benchmark timings for desk-scale runs without hardware.

    ``mode`` is ``constant_per_driver`` (ms per call, keyed by driver, ``"*"``
    as fallback), ``flops_linear`` (seconds per flop) or ``echo`` (replay the
    observed average).
    """

    mode: str
    per_driver: Mapping[str, float] = field(default_factory=dict)
    seconds_per_flop: float = 0.0

    def __post_init__(self):
        if self.mode not in ("constant_per_driver", "flops_linear", "echo"):
            raise ValueError(f"unknown cost model mode {self.mode!r}")
        if self.mode == "constant_per_driver":
            if not self.per_driver or any(not v > 0 for v in self.per_driver.values()):
                raise ValueError("per-driver costs must be positive")
        if self.mode == "flops_linear" and not self.seconds_per_flop > 0:
            raise ValueError("seconds_per_flop must be positive")

    def cost_ms(self, d: ProblemDescriptor, observed_avg_ms: float) -> float:
        if self.mode == "echo":
            return observed_avg_ms
        if self.mode == "constant_per_driver":
            cost = self.per_driver.get(d.driver, self.per_driver.get("*"))
            if cost is None:
                raise KeyError(f"no constant cost for driver {d.driver!r}")
            return cost
        return estimate_flops(d) * self.seconds_per_flop * 1000.0


def synthetic_run(descriptors: DescriptorSet, model: CostModel) -> dict[str, BenchResult]:
    results = {}
    for key, entry in descriptors.entries.items():
        cost = model.cost_ms(entry.descriptor, entry.observed_avg_ms)
        results[key] = BenchResult(key, cost, cost, 1)
    return results


@dataclass(frozen=True)
class ProjectedEntry:
    driver: str
    calls: int
    observed_avg_ms: float
    achievable_ms: float

    @property
    def observed_total(self) -> float:
        return self.calls * self.observed_avg_ms

    @property
    def achievable_total(self) -> float:
        return self.calls * self.achievable_ms

    @property
    def efficiency(self) -> float:
        return _ratio(self.achievable_total, self.observed_total)


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return math.inf if num > 0 else 1.0
    return num / den


@dataclass(frozen=True)
class ProjectionReport:
    per_entry: dict[str, ProjectedEntry]
    overall_efficiency: float
    per_kind_efficiency: dict[str, float]
    coverage: float
    unmatched: tuple[str, ...] = ()
    basis: str = "min"

    def candidates(self, threshold: float) -> list[str]:
        """Descriptor ids whose own efficiency falls below ``threshold``."""
        return [k for k, e in self.per_entry.items() if e.efficiency < threshold]

    def to_dict(self) -> dict:
        return {
            "type": "projection",
            "basis": self.basis,
            "overall_efficiency": self.overall_efficiency,
            "coverage": self.coverage,
            "per_kind_efficiency": dict(sorted(self.per_kind_efficiency.items())),
            "per_entry": [
                {
                    "descriptor_id": k,
                    "driver": e.driver,
                    "calls": e.calls,
                    "observed_avg_ms": e.observed_avg_ms,
                    "achievable_ms": e.achievable_ms,
                    "observed_total": e.observed_total,
                    "achievable_total": e.achievable_total,
                    "efficiency": e.efficiency,
                }
                for k, e in self.per_entry.items()
            ],
            "unmatched": list(self.unmatched),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProjectionReport":
        per_entry = {
            e["descriptor_id"]: ProjectedEntry(e["driver"], int(e["calls"]), float(e["observed_avg_ms"]), float(e["achievable_ms"]))
            for e in data["per_entry"]
        }
        return cls(
            per_entry,
            float(data["overall_efficiency"]),
            {k: float(v) for k, v in data["per_kind_efficiency"].items()},
            float(data["coverage"]),
            tuple(data.get("unmatched", ())),
            data.get("basis", "min"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def project(
    descriptors: DescriptorSet,
    results: Mapping[str, BenchResult],
    basis: str = "min",
) -> ProjectionReport:
    """Project achievable model time from per-descriptor benchmark results.

    ``basis`` picks ``min_ms`` (default, a ceiling) or ``avg_ms`` as the
    achievable time.
    """
    if basis not in ("min", "avg"):
        raise ValueError("basis must be 'min' or 'avg'")
    per_entry: dict[str, ProjectedEntry] = {}
    unmatched = []
    for key in sorted(descriptors.entries):
        entry = descriptors.entries[key]
        res = results.get(key)
        if res is None:
            unmatched.append(key)
            continue
        achievable = res.min_ms if basis == "min" else res.avg_ms
        per_entry[key] = ProjectedEntry(entry.descriptor.driver, entry.call_count, entry.observed_avg_ms, achievable)
    if not per_entry:
        raise NoCoverage("no descriptor has a benchmark result")

    achieved = math.fsum(e.achievable_total for e in per_entry.values())
    observed = math.fsum(e.observed_total for e in per_entry.values())
    by_kind: dict[str, list[ProjectedEntry]] = {}
    for e in per_entry.values():
        by_kind.setdefault(e.driver, []).append(e)
    per_kind = {
        k: _ratio(math.fsum(e.achievable_total for e in es), math.fsum(e.observed_total for e in es))
        for k, es in by_kind.items()
    }
    total_observed = math.fsum(e.observed_total_ms for e in descriptors.entries.values())
    if total_observed > 0:
        coverage = observed / total_observed
    else:
        coverage = len(per_entry) / len(descriptors.entries)
    return ProjectionReport(
        per_entry, _ratio(achieved, observed), per_kind, min(coverage, 1.0), tuple(unmatched), basis
    )

