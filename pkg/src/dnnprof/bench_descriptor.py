"""benchDNN-style problem descriptors built from verbose records.

Each descriptor is rendered as one batch line, e.g.::

    --conv --dir=FWD_D --cfg=f32 --alg=direct mb32ic16ih32iw32oc32oh16ow16kh3kw3sh2sw2ph1pw1

and that line doubles as the descriptor id. Timing results come back as a
CSV with header ``descriptor_id,avg_ms,min_ms,runs``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .verbose_log import PrimitiveRecord, parse_problem

DEFAULT_LAYOUT = "abcd"  # nchw

DRIVERS = {
    "convolution": "conv",
    "eltwise": "eltwise",
    "matmul": "matmul",
    "rnn": "rnn",
    "batch_normalization": "bnorm",
    "pooling": "pool",
    "reorder": "reorder",
    "softmax": "softmax",
    "inner_product": "ip",
    "sum": "sum",
    "binary": "binary",
    "reduction": "reduction",
    "concat": "concat",
    "deconvolution": "deconv",
    "layer_normalization": "lnorm",
    "lrn": "lrn",
    "shuffle": "shuffle",
    "prelu": "prelu",
    "resampling": "resampling",
}

DIRECTORIES = ("FWD_I", "FWD_D", "FWD_B", "BWD_D", "BWD_W", "BWD_WB", "BWD_DW")

_ALG_PREFIXES = ("convolution_", "deconvolution_", "eltwise_", "pooling_", "binary_", "reduction_", "resampling_", "lrn_", "softmax_")

# emission order of named dims; dilation keys are skipped when zero
_DIM_ORDER = (
    "mb", "g", "ic", "id", "ih", "iw", "oc", "od", "oh", "ow",
    "kd", "kh", "kw", "sd", "sh", "sw", "pd", "ph", "pw", "dd", "dh", "dw",
    "m", "n", "k",
)
_DILATION = ("dd", "dh", "dw")


class UnsupportedDriver(ValueError):
    pass


class EmptySet(ValueError):
    pass


class InvalidDescriptor(ValueError):
    pass


class FormatError(ValueError):
    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}" if line_no is not None else message)


@dataclass(frozen=True)
class ProblemDescriptor:
    driver: str
    configuration: str
    directory: str
    dims: Mapping[str, int] = field(default_factory=dict)
    layout_tag: str = DEFAULT_LAYOUT
    algorithm: Optional[str] = None
    post_ops: Optional[str] = None
    raw_problem: str = ""

    @property
    def problem(self) -> str:
        if not self.dims:
            return self.raw_problem
        parts = []
        for key in _DIM_ORDER:
            if key not in self.dims:
                continue
            if key in _DILATION and self.dims[key] == 0:
                continue
            parts.append(f"{key}{self.dims[key]}")
        return "".join(parts)

    @property
    def descriptor_id(self) -> str:
        return self.to_line()

    def to_line(self) -> str:
        parts = [f"--{self.driver}", f"--dir={self.directory}", f"--cfg={self.configuration}"]
        if self.algorithm:
            parts.append(f"--alg={self.algorithm}")
        if self.post_ops:
            parts.append(f"--attr-post-ops={self.post_ops}")
        if self.layout_tag != DEFAULT_LAYOUT:
            parts.append(f"--tag={self.layout_tag}")
        if self.problem:
            parts.append(self.problem)
        return " ".join(parts)

    @classmethod
    def from_line(cls, line: str) -> "ProblemDescriptor":
        tokens = line.split()
        if not tokens or not tokens[0].startswith("--") or "=" in tokens[0]:
            raise FormatError(f"not a batch line: {line!r}")
        driver = tokens[0][2:]
        opts: dict[str, str] = {}
        problem = ""
        for tok in tokens[1:]:
            if tok.startswith("--"):
                key, _, value = tok[2:].partition("=")
                opts[key] = value
            else:
                problem = tok
        dims = parse_problem(problem)
        if dims and _format_dims(dims) != problem:
            dims = {}
        return cls(
            driver=driver,
            configuration=opts.get("cfg", "f32"),
            directory=opts.get("dir", "FWD_D"),
            dims=dims,
            layout_tag=opts.get("tag", DEFAULT_LAYOUT),
            algorithm=opts.get("alg"),
            post_ops=opts.get("attr-post-ops"),
            raw_problem="" if dims else problem,
        )

    def validate(self) -> None:
        """Check the conv output-shape relation for every spatial axis present."""
        if self.driver != "conv":
            return
        d = self.dims
        for i, o, k, s, p, dl in (
            ("id", "od", "kd", "sd", "pd", "dd"),
            ("ih", "oh", "kh", "sh", "ph", "dh"),
            ("iw", "ow", "kw", "sw", "pw", "dw"),
        ):
            if not all(key in d for key in (i, o, k, s, p)):
                continue
            if d[s] <= 0:
                raise InvalidDescriptor(f"{s} must be positive in {self.descriptor_id}")
            k_eff = (d[k] - 1) * (d.get(dl, 0) + 1) + 1
            expected = (d[i] + 2 * d[p] - k_eff) // d[s] + 1
            if d[o] != expected:
                raise InvalidDescriptor(
                    f"{o}={d[o]} but ({i} + 2{p} - {k})/{s} + 1 = {expected} in {self.descriptor_id}"
                )


def _format_dims(dims: Mapping[str, int]) -> str:
    return ProblemDescriptor("x", "f32", "FWD_D", dims).problem


def _normalize_alg(alg: Optional[str]) -> Optional[str]:
    if not alg:
        return None
    alg = alg.lower()
    for prefix in _ALG_PREFIXES:
        if alg.startswith(prefix):
            return alg[len(prefix):]
    return alg


def _post_ops(attributes: str) -> Optional[str]:
    for token in attributes.split():
        for prefix in ("attr-post-ops:", "post_ops:"):
            if token.startswith(prefix):
                value = token[len(prefix):].strip("'\"").replace(";", "+").strip("+")
                return value or None
    return None


def _directory(record: PrimitiveRecord) -> str:
    has_bias = record.tensor("bia", "diff_bia") is not None
    return {
        "forward_training": "FWD_B" if has_bias else "FWD_D",
        "forward_inference": "FWD_I",
        "backward_data": "BWD_D",
        "backward_weights": "BWD_WB" if has_bias else "BWD_W",
        "backward": "BWD_DW",
        "undef": "FWD_I",
    }[record.direction]


def descriptor_from_record(record: PrimitiveRecord) -> ProblemDescriptor:
    """Map an exec record onto benchDNN parameters."""
    driver = DRIVERS.get(record.primitive_kind)
    if driver is None:
        raise UnsupportedDriver(f"no benchmark driver for primitive {record.primitive_kind!r}")
    src = record.tensor("src", "diff_src")
    layout = src.layout_tag if src is not None else DEFAULT_LAYOUT
    # "ab", "abc", "abcde" are the plain dense order at other ranks; keep the default
    if layout in ("any", "undef") or "abcdefghijkl".startswith(layout):
        layout = DEFAULT_LAYOUT
    dims = {k: v for k, v in record.dims.items() if not (k in _DILATION and v == 0)}
    return ProblemDescriptor(
        driver=driver,
        configuration=record.config_dtype if record.tensors else "f32",
        directory=_directory(record),
        dims=dims,
        layout_tag=layout,
        algorithm=_normalize_alg(record.algorithm),
        post_ops=_post_ops(record.attributes),
        raw_problem="" if dims else record.problem,
    )


@dataclass
class DescriptorEntry:
    descriptor: ProblemDescriptor
    call_count: int = 0
    observed_total_ms: float = 0.0

    @property
    def observed_avg_ms(self) -> float:
        return self.observed_total_ms / self.call_count


@dataclass
class DescriptorSet:
    entries: dict[str, DescriptorEntry] = field(default_factory=dict)
    unsupported: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries.values())

    def add(self, descriptor: ProblemDescriptor, time_ms: float, calls: int = 1) -> None:
        key = descriptor.descriptor_id
        entry = self.entries.get(key)
        if entry is None:
            entry = self.entries[key] = DescriptorEntry(descriptor)
        entry.call_count += calls
        entry.observed_total_ms += time_ms

    @property
    def observed_total_ms(self) -> float:
        return math.fsum(e.observed_total_ms for e in self.entries.values())


def dedupe(records: Iterable[PrimitiveRecord], skip_unsupported: bool = True) -> DescriptorSet:
    """Merge exec records with identical descriptors, keeping call multiplicity."""
    out = DescriptorSet()
    for r in records:
        if r.event_kind != "exec":
            continue
        try:
            d = descriptor_from_record(r)
        except UnsupportedDriver:
            if not skip_unsupported:
                raise
            out.unsupported += 1
            continue
        out.add(d, r.time_ms)
    return out


def emit_batch(descriptors: DescriptorSet) -> str:
    """One batch line per entry, sorted by descriptor id, LF terminated."""
    if not descriptors.entries:
        raise EmptySet("no descriptors to emit")
    for entry in descriptors:
        entry.descriptor.validate()
    return "".join(key + "\n" for key in sorted(descriptors.entries))


@dataclass(frozen=True)
class BenchResult:
    descriptor_id: str
    avg_ms: float
    min_ms: float
    runs: int = 1

    def __post_init__(self):
        if not (self.avg_ms > 0 and self.min_ms > 0):
            raise ValueError("benchmark times must be positive")
        if self.min_ms > self.avg_ms:
            raise ValueError("min_ms must not exceed avg_ms")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")


RESULTS_HEADER = ["descriptor_id", "avg_ms", "min_ms", "runs"]


def ingest_results(text: str) -> dict[str, BenchResult]:
    rows = csv.reader(io.StringIO(text))
    header = next(rows, None)
    if header is None or [h.strip() for h in header] != RESULTS_HEADER:
        raise FormatError("expected header " + ",".join(RESULTS_HEADER), 1)
    results: dict[str, BenchResult] = {}
    for line_no, row in enumerate(rows, start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 4:
            raise FormatError(f"expected 4 columns, got {len(row)}", line_no)
        key = row[0].strip()
        try:
            res = BenchResult(key, float(row[1]), float(row[2]), int(row[3]))
        except ValueError as exc:
            raise FormatError(str(exc), line_no) from None
        prev = results.get(key)
        if prev is None or res.min_ms < prev.min_ms:
            results[key] = res
    return results


def export_results(results: Mapping[str, BenchResult]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(RESULTS_HEADER)
    for key in sorted(results):
        r = results[key]
        w.writerow([key, repr(r.avg_ms), repr(r.min_ms), r.runs])
    return out.getvalue()
