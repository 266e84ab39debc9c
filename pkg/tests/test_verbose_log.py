import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnnprof.verbose_log import (
    CSV_HEADER,
    Header,
    MalformedRecord,
    PrimitiveRecord,
    TensorDesc,
    parse_line,
    parse_log,
    parse_problem,
    read_log,
)

CONV = (
    "dnnl_verbose,exec,cpu,convolution,jit:avx512_core,forward_training,"
    "src_f32::blocked:abcd:f0 wei_f32::blocked:Abcd16a:f0 dst_f32::blocked:aBcd16b:f0,,"
    "alg:convolution_direct,mb32_ic16oc32_ih32oh16kh3sh2ph1_iw32ow16kw3sw2pw1,12.345"
)


def test_conv_line_fields():
    r = parse_line(CONV)
    assert isinstance(r, PrimitiveRecord)
    assert r.event_kind == "exec"
    assert r.engine == "cpu"
    assert r.primitive_kind == "convolution"
    assert r.impl_name == "jit:avx512_core"
    assert r.direction == "forward_training"
    assert r.time_ms == 12.345
    assert r.algorithm == "convolution_direct"
    assert [t.role for t in r.tensors] == ["src", "wei", "dst"]
    assert [t.layout_tag for t in r.tensors] == ["abcd", "Abcd16a", "aBcd16b"]
    assert r.dims == {
        "mb": 32, "ic": 16, "oc": 32, "ih": 32, "oh": 16, "kh": 3, "sh": 2, "ph": 1,
        "iw": 32, "ow": 16, "kw": 3, "sw": 2, "pw": 1,
    }
    assert r.config_dtype == "f32"


def test_noise_and_header():
    assert parse_line("Epoch 1: loss=0.52") is None
    assert parse_line("") is None
    h = parse_line("dnnl_verbose,info,oneDNN v2.6.0 (commit abc)")
    assert isinstance(h, Header)
    assert "v2.6.0" in h.text


def test_create_event_and_marker_variants():
    r = parse_line(CONV.replace("dnnl_verbose,exec", "onednn_verbose,create:cache_miss"))
    assert r.event_kind == "create"


def test_leading_timestamp_is_dropped():
    r = parse_line("1693312345.123," + CONV)
    assert r == parse_line(CONV)


def test_extra_fields_go_to_attributes():
    r = parse_line(CONV + ",extra1,extra2")
    assert r.time_ms == 12.345
    assert "extra1" in r.attributes and "extra2" in r.attributes


def test_unknown_primitive_is_kept():
    line = CONV.replace(",convolution,", ",fancy_new_op,")
    assert parse_line(line).primitive_kind == "fancy_new_op"


@pytest.mark.parametrize(
    "line",
    [
        "dnnl_verbose,exec,cpu,convolution",
        CONV.replace(",12.345", ",abc"),
        CONV.replace(",12.345", ",-1"),
        CONV.replace(",12.345", ",inf"),
        CONV.replace("forward_training", "diagonal"),
        CONV.replace("src_f32", "diff_src_f32"),
    ],
)
def test_malformed_lines(line):
    with pytest.raises(MalformedRecord) as exc:
        parse_line(line, line_no=7)
    assert exc.value.line_no == 7


def test_matmul_problem_dims():
    assert parse_problem("2x3:3x4:2x4") == {"m": 2, "k": 3, "n": 4}
    assert parse_problem("") == {}
    # unparseable pieces leave the map partial, never raise
    assert parse_problem("mb2_garbage")["mb"] == 2


def test_tensor_desc_roundtrip():
    for text in ["src_f32::blocked:abcd:f0", "wei_bf16:p:blocked:Abcd16a:f0", "dst_u8::blocked:acdb:f0:s8"]:
        assert TensorDesc.parse(text).to_text() == text
    assert TensorDesc.parse("src_f32::blocked::f0").layout_tag == "any"


def test_parse_log_empty():
    log = parse_log("")
    assert log.records == [] and log.lines_total == 0 and log.lines_skipped == 0


def test_parse_log_three_lines():
    text = CONV + "\ndnnl_verbose,info,oneDNN v2.6.0\nhello world\n"
    log = parse_log(text)
    assert len(log.records) == 1
    assert log.header_info == "oneDNN v2.6.0"
    assert log.lines_skipped == 1
    assert log.lines_total == 3


def test_parse_log_strict_reports_line():
    text = "noise\n" + CONV.replace(",12.345", ",abc") + "\n"
    with pytest.raises(MalformedRecord) as exc:
        parse_log(text)
    assert exc.value.line_no == 2
    lenient = parse_log(text, strict=False)
    assert lenient.records == [] and lenient.lines_skipped == 2


def test_crlf_and_file_objects(tmp_path):
    p = tmp_path / "log.txt"
    p.write_bytes((CONV + "\r\n" + CONV + "\r\n").encode())
    log = read_log(p)
    assert len(log.records) == 2 and log.records[0].time_ms == 12.345
    assert parse_log(io.StringIO(CONV + "\n")).records == log.records[:1]


def test_csv_export_header():
    out = parse_log(CONV).to_csv()
    head, row = out.splitlines()
    assert head == ",".join(CSV_HEADER)
    assert "src:f32|wei:f32|dst:f32" in row
    assert "src:abcd|wei:Abcd16a|dst:aBcd16b" in row
    assert out.endswith("\n")


# properties ------------------------------------------------------------------

roles = st.sampled_from(["src", "wei", "bia", "dst"])
dtypes = st.sampled_from(["f32", "bf16", "s8", "u8", "f16"])
tags = st.sampled_from(["abcd", "acdb", "aBcd16b", "a", "ab", "any"])


@st.composite
def record_lines(draw):
    tensors = " ".join(
        f"{draw(roles)}_{draw(dtypes)}::blocked:{draw(tags)}:f0" for _ in range(draw(st.integers(1, 4)))
    )
    kind = draw(st.sampled_from(["convolution", "reorder", "matmul", "eltwise", "pooling", "sum"]))
    direction = draw(st.sampled_from(["forward_training", "forward_inference", "undef"]))
    event = draw(st.sampled_from(["exec", "create"]))
    t = draw(st.floats(0, 1e4, allow_nan=False, allow_infinity=False))
    problem = draw(st.sampled_from(["mb2ic3ih8iw8", "2x3:3x4:2x4", "1x2x3x4", ""]))
    attrs = draw(st.sampled_from(["", "attr-scratchpad:user", "attr-post-ops:eltwise_relu"]))
    alg = draw(st.sampled_from(["", "alg:eltwise_relu alpha:0 beta:0", "alg:convolution_direct"]))
    return f"onednn_verbose,{event},cpu,{kind},jit:uni,{direction},{tensors},{attrs},{alg},{problem},{t!r}"


@settings(max_examples=200, deadline=None)
@given(record_lines())
def test_record_roundtrip(line):
    r = parse_line(line)
    assert parse_line(r.to_line()) == r


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.one_of(record_lines(), st.sampled_from(["noise", "", "dnnl_verbose,info,x"])), max_size=20),
    st.lists(st.one_of(record_lines(), st.sampled_from(["noise", "", "dnnl_verbose,info,y"])), max_size=20),
)
def test_concat_property(a, b):
    la, lb = parse_log(a), parse_log(b)
    both = parse_log(a + b)
    assert both.records == la.records + lb.records
    assert both.lines_total == la.lines_total + lb.lines_total
    assert both.lines_skipped + len(both.records) + both.headers == both.lines_total


@settings(max_examples=30, deadline=None)
@given(st.lists(record_lines(), max_size=15))
def test_stream_and_text_agree(lines):
    text = "\n".join(lines) + "\n"
    assert parse_log(io.StringIO(text)).records == parse_log(text).records == parse_log(lines).records
