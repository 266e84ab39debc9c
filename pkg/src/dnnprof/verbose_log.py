"""Parser for oneDNN verbose logs.

A verbose execution line has eleven comma separated fields::

    marker,event,engine,primitive,impl,direction,tensors,attributes,aux,problem,time_ms

``marker`` is ``dnnl_verbose`` or ``onednn_verbose``. Lines that do not start
with a marker are skipped, so framework output interleaved with the verbose
trace is tolerated.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Sequence, TextIO, Union

MARKERS = ("dnnl_verbose", "onednn_verbose")

KNOWN_PRIMITIVES = frozenset(
    {
        "convolution",
        "inner_product",
        "matmul",
        "batch_normalization",
        "eltwise",
        "pooling",
        "reorder",
        "softmax",
        "rnn",
        "sum",
        "binary",
        "reduction",
        "concat",
    }
)

DIRECTIONS = (
    "forward_training",
    "forward_inference",
    "backward_data",
    "backward_weights",
    "backward",
    "undef",
)
FORWARD_DIRECTIONS = frozenset({"forward_training", "forward_inference"})
_DIRECTION_ALIASES = {"forward_scoring": "forward_inference", "forward": "forward_training"}

DATA_TYPES = ("f32", "bf16", "f16", "f64", "s32", "s8", "u8", "undef")
KNOWN_ROLES = frozenset({"src", "wei", "bia", "dst", "diff_src", "diff_wei", "diff_dst"})

# shape-only problems ("32x16x32x32") map onto nchw-style names by rank
_SHAPE_KEYS = {
    1: ("mb",),
    2: ("mb", "ic"),
    3: ("mb", "ic", "iw"),
    4: ("mb", "ic", "ih", "iw"),
    5: ("mb", "ic", "id", "ih", "iw"),
}
DIM_KEYS = (
    "mb", "g", "ic", "oc", "id", "ih", "iw", "od", "oh", "ow",
    "kd", "kh", "kw", "sd", "sh", "sw", "pd", "ph", "pw", "dd", "dh", "dw",
    "m", "n", "k",
)
_DIM_TOKEN = re.compile(r"(mb|ic|oc|id|ih|iw|od|oh|ow|kd|kh|kw|sd|sh|sw|pd|ph|pw|dd|dh|dw|g|m|n|k)(\d+)")

N_FIELDS = 11


class MalformedRecord(ValueError):
    """A verbose exec/create line that cannot be turned into a record."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class TensorDesc:
    role: str
    data_type: str
    layout_tag: str
    extra: str = ""

    @classmethod
    def parse(cls, text: str) -> "TensorDesc":
        # role_dtype:properties:format_kind:tag[:strides]:flags
        fields = text.split(":")
        role, data_type = _split_role_dtype(fields[0])
        if len(fields) >= 4:
            tag = fields[3]
            extra = ":".join(fields[1:3] + fields[4:])
        elif len(fields) >= 2:
            tag = fields[-1]
            extra = ":".join(fields[1:-1])
        else:
            raise MalformedRecord(f"tensor descriptor without layout: {text!r}")
        if not tag:
            tag = "any"
        return cls(role, data_type, tag, extra)

    def to_text(self) -> str:
        parts = self.extra.split(":")
        head = f"{self.role}_{self.data_type}"
        if len(parts) == 1:
            return ":".join([head, parts[0], self.layout_tag])
        return ":".join([head] + parts[:2] + [self.layout_tag] + parts[2:])

    @property
    def is_diff(self) -> bool:
        return self.role.startswith("diff_")


def _split_role_dtype(text: str) -> tuple[str, str]:
    for dt in DATA_TYPES:
        suffix = "_" + dt
        if text.endswith(suffix) and len(text) > len(suffix):
            return text[: -len(suffix)], dt
    raise MalformedRecord(f"unrecognised tensor role/data type: {text!r}")


def parse_problem(problem: str) -> dict[str, int]:
    """Best-effort dimension map for a problem string.

    Unrecognised tokens are ignored; the result may be partially filled.
    """
    dims: dict[str, int] = {}
    text = problem.strip()
    if not text:
        return dims
    if ":" in text and "x" in text and not _DIM_TOKEN.match(text):
        # matmul "MxK:KxN:MxN", optionally batched
        try:
            shapes = [[int(v) for v in part.split("x")] for part in text.split(":")]
        except ValueError:
            return dims
        src, wei = shapes[0], shapes[1]
        if len(src) >= 2 and len(wei) >= 2:
            dims["m"], dims["k"], dims["n"] = src[-2], src[-1], wei[-1]
            batch = 1
            for v in src[:-2]:
                batch *= v
            if len(src) > 2:
                dims["mb"] = batch
        return dims
    if re.fullmatch(r"\d+(x\d+)*", text):
        values = [int(v) for v in text.split("x")]
        keys = _SHAPE_KEYS.get(len(values))
        if keys:
            dims.update(zip(keys, values))
        return dims
    for token in text.split("_"):
        if re.fullmatch(f"(?:{_DIM_TOKEN.pattern})+", token):
            for key, value in _DIM_TOKEN.findall(token):
                dims[key] = int(value)
    return dims


@dataclass(frozen=True)
class PrimitiveRecord:
    event_kind: str
    engine: str
    primitive_kind: str
    impl_name: str
    direction: str
    tensors: tuple[TensorDesc, ...]
    attributes: str
    algorithm: Optional[str]
    problem: str
    time_ms: float
    aux: str = ""
    dims: Mapping[str, int] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.time_ms >= 0:
            raise ValueError(f"time_ms must be >= 0, got {self.time_ms}")
        if not self.dims and self.problem:
            object.__setattr__(self, "dims", parse_problem(self.problem))

    def tensor(self, *roles: str) -> Optional[TensorDesc]:
        for role in roles:
            for t in self.tensors:
                if t.role == role:
                    return t
        return None

    @property
    def config_dtype(self) -> str:
        """Data-type configuration string, e.g. ``f32`` or ``u8s8u8``."""
        picked = [
            t.data_type
            for roles in (("src", "diff_src"), ("wei", "diff_wei"), ("dst", "diff_dst"))
            if (t := self.tensor(*roles)) is not None
        ]
        if not picked:
            picked = [t.data_type for t in self.tensors[:1]]
        if not picked:
            return "undef"
        if len(set(picked)) == 1:
            return picked[0]
        return "".join(picked)

    def to_line(self, marker: str = "onednn_verbose") -> str:
        """Canonical verbose line; ``parse_line`` gives back an equal record."""
        return ",".join(
            [
                marker,
                self.event_kind,
                self.engine,
                self.primitive_kind,
                self.impl_name,
                self.direction,
                " ".join(t.to_text() for t in self.tensors),
                self.attributes,
                self.aux,
                self.problem,
                repr(float(self.time_ms)),
            ]
        )


@dataclass(frozen=True)
class Header:
    text: str


@dataclass
class ProfileLog:
    records: list[PrimitiveRecord]
    source_name: str = "<stream>"
    lines_total: int = 0
    lines_skipped: int = 0
    header_info: Optional[str] = None
    headers: int = 0

    @property
    def exec_records(self) -> list[PrimitiveRecord]:
        return [r for r in self.records if r.event_kind == "exec"]

    def to_csv(self) -> str:
        return export_csv(self.records)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _normalize_fields(fields: list[str]) -> Optional[list[str]]:
    """Strip timestamps / newer-format tokens; return fields starting at the marker."""
    if len(fields) >= 2 and fields[0] not in MARKERS and fields[1] in MARKERS and _is_number(fields[0]):
        fields = fields[1:]
    if not fields or fields[0] not in MARKERS:
        return None
    # onednn_verbose,<timestamp>,... and onednn_verbose,primitive,exec,...
    if len(fields) >= 3 and _is_number(fields[1]):
        fields = [fields[0]] + fields[2:]
    if len(fields) >= 3 and fields[1] == "primitive" and fields[2] != "":
        fields = [fields[0]] + fields[2:]
    return fields


def _event_kind(text: str) -> Optional[str]:
    if text == "exec":
        return "exec"
    if text == "create" or text.startswith("create:"):
        return "create"
    return None


def parse_line(line: str, line_no: Optional[int] = None) -> Union[PrimitiveRecord, Header, None]:
    """Classify one line as a record, a header (``info``) or a skip (``None``)."""
    line = line.rstrip("\r\n")
    fields = _normalize_fields(line.split(","))
    if fields is None or len(fields) < 2:
        return None
    if fields[1] == "info":
        return Header(",".join(fields[2:]))
    event = _event_kind(fields[1])
    if event is None:
        return None
    if len(fields) < N_FIELDS:
        raise MalformedRecord(f"expected {N_FIELDS} fields, got {len(fields)}", line_no)

    _, _, engine, primitive, impl, direction, tensor_text, attributes, aux, problem, time_text = fields[:N_FIELDS]
    extras = fields[N_FIELDS:]
    try:
        time_ms = float(time_text)
    except ValueError:
        raise MalformedRecord(f"non-numeric time {time_text!r}", line_no) from None
    if not time_ms >= 0 or time_ms == float("inf"):
        raise MalformedRecord(f"invalid time {time_text!r}", line_no)

    direction = _DIRECTION_ALIASES.get(direction, direction)
    if direction not in DIRECTIONS:
        raise MalformedRecord(f"unknown direction {direction!r}", line_no)
    try:
        tensors = tuple(TensorDesc.parse(t) for t in tensor_text.split())
    except MalformedRecord as exc:
        raise MalformedRecord(str(exc), line_no) from None
    if direction in FORWARD_DIRECTIONS and any(t.is_diff for t in tensors):
        raise MalformedRecord("forward primitive with diff tensors", line_no)

    attributes = " ".join(filter(None, [attributes.strip()] + [e.strip() for e in extras]))
    algorithm = None
    for token in aux.split():
        if token.startswith("alg:"):
            algorithm = token[4:]
            break
    return PrimitiveRecord(
        event_kind=event,
        engine=engine,
        primitive_kind=primitive,
        impl_name=impl,
        direction=direction,
        tensors=tensors,
        attributes=attributes,
        algorithm=algorithm,
        problem=problem,
        time_ms=time_ms,
        aux=aux,
    )


def _iter_lines(source: Union[str, TextIO, Iterable[str]]) -> Iterator[str]:
    if isinstance(source, str):
        source = io.StringIO(source)
    for line in source:
        yield line.rstrip("\r\n")


def parse_log(source: Union[str, TextIO, Iterable[str]], strict: bool = True, source_name: str = "<stream>") -> ProfileLog:
    """Parse a whole log. In lenient mode malformed record lines become skips."""
    log = ProfileLog(records=[], source_name=source_name)
    for line_no, line in enumerate(_iter_lines(source), start=1):
        log.lines_total += 1
        try:
            item = parse_line(line, line_no)
        except MalformedRecord:
            if strict:
                raise
            item = None
        if isinstance(item, PrimitiveRecord):
            log.records.append(item)
        elif isinstance(item, Header):
            log.headers += 1
            if log.header_info is None:
                log.header_info = item.text
        else:
            log.lines_skipped += 1
    return log


def read_log(path, strict: bool = True) -> ProfileLog:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_log(fh, strict=strict, source_name=str(path))


CSV_HEADER = ("idx", "event", "engine", "primitive", "impl", "direction", "dtypes", "layout", "attributes", "algorithm", "problem", "time_ms")


def export_csv(records: Sequence[PrimitiveRecord]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for idx, r in enumerate(records):
        writer.writerow(
            [
                idx,
                r.event_kind,
                r.engine,
                r.primitive_kind,
                r.impl_name,
                r.direction,
                "|".join(f"{t.role}:{t.data_type}" for t in r.tensors),
                "|".join(f"{t.role}:{t.layout_tag}" for t in r.tensors),
                r.attributes,
                r.algorithm or "",
                r.problem,
                repr(float(r.time_ms)),
            ]
        )
    return out.getvalue()
