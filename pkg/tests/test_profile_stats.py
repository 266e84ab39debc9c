import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnnprof.profile_stats import (
    GranularityMismatch,
    GroupKey,
    ProfileDiff,
    ProfileSummary,
    TraceSpan,
    compare,
    fragmentation,
    spans_from_log,
    summarize,
)
from dnnprof.verbose_log import PrimitiveRecord, TensorDesc, parse_log


def rec(kind, t, direction="forward_training", dtype="f32", event="exec"):
    tensors = (TensorDesc("src", dtype, "abcd"), TensorDesc("dst", dtype, "abcd"))
    if direction.startswith("backward"):
        tensors = (TensorDesc("diff_src", dtype, "abcd"), TensorDesc("diff_dst", dtype, "abcd"))
    return PrimitiveRecord(event, "cpu", kind, "jit", direction, tensors, "", None, "", t)


def test_empty_summary():
    s = summarize([])
    assert s.groups == () and s.total_time_ms == 0 and s.total_calls == 0


def test_two_kind_shares():
    s = summarize([rec("convolution", 2.0), rec("reorder", 1.0)])
    assert [str(g.key) for g in s.groups] == ["convolution", "reorder"]
    assert s.group("convolution").share == pytest.approx(2 / 3, abs=1e-15)
    assert s.group("reorder").share == pytest.approx(1 / 3, abs=1e-15)


def test_kind_dir_backward_share():
    s = summarize(
        [
            rec("convolution", 1.0),
            rec("convolution", 2.0, "backward_data"),
            rec("convolution", 1.0, "backward_weights"),
        ],
        "kind-dir",
    )
    assert len(s.groups) == 3
    back = math.fsum(g.share for g in s.groups if g.key.direction.startswith("backward"))
    assert back == 0.75
    assert s.groups[0].key == GroupKey("convolution", "backward_data")


def test_granularity_fields_absent():
    s = summarize([rec("convolution", 1.0, dtype="bf16")], "kind")
    key = s.groups[0].key
    assert key.direction is None and key.data_type is None
    full = summarize([rec("convolution", 1.0, dtype="bf16")], "kind-dir-dtype").groups[0].key
    assert str(full) == "convolution/forward_training/bf16"
    assert GroupKey.parse(str(full)) == full


def test_create_excluded_by_default():
    rs = [rec("convolution", 5.0, event="create"), rec("convolution", 1.0)]
    assert summarize(rs).total_time_ms == 1.0
    assert summarize(rs, include_create=True).total_time_ms == 6.0


def test_tie_broken_by_key():
    s = summarize([rec("reorder", 1.0), rec("eltwise", 1.0)])
    assert [str(g.key) for g in s.groups] == ["eltwise", "reorder"]


def test_avg_and_totals():
    s = summarize([rec("convolution", 1.0), rec("convolution", 3.0)])
    g = s.groups[0]
    assert g.call_count == 2 and g.avg_time_ms == 2.0 and s.total_calls == 2


def test_compare_examples():
    ref = summarize([rec("convolution", 2.0), rec("reorder", 1.0), rec("batch_normalization", 0.5)])
    tgt = summarize([rec("convolution", 4.0), rec("reorder", 1.0)])
    d = compare(ref, tgt)
    assert {str(k): v.ratio for k, v in d.per_key.items()} == {"convolution": 2.0, "reorder": 1.0}
    assert d.missing_in_target == {GroupKey("batch_normalization")}
    assert d.missing_in_reference == frozenset()
    assert d.overall_ratio == 5.0 / 3.5


def test_compare_worked_ratio():
    d = compare(summarize([rec("convolution", 2.0), rec("reorder", 1.0)]), summarize([rec("convolution", 4.0), rec("reorder", 1.0)]))
    assert d.overall_ratio == 5 / 3


def test_compare_identity_and_zero_reference():
    s = summarize([rec("convolution", 2.0), rec("reorder", 0.0)])
    d = compare(s, s)
    assert all(v.ratio == 1.0 for v in d.per_key.values())
    t = summarize([rec("convolution", 2.0), rec("reorder", 1.0)])
    d2 = compare(s, t)
    assert math.isinf(d2.per_key[GroupKey("reorder")].ratio)
    assert GroupKey("reorder") in d2.discrepancies()


def test_call_delta():
    d = compare(summarize([rec("convolution", 1.0)]), summarize([rec("convolution", 1.0)] * 3))
    assert d.per_key[GroupKey("convolution")].call_delta == 2


def test_granularity_mismatch():
    with pytest.raises(GranularityMismatch):
        compare(summarize([], "kind"), summarize([], "kind-dir"))


def test_json_roundtrips():
    s = summarize([rec("convolution", 2.0), rec("reorder", 1.0, "backward_data")], "kind-dir")
    assert ProfileSummary.from_dict(s.to_dict()) == s
    d = compare(s, summarize([rec("convolution", 4.0)], "kind-dir"))
    back = ProfileDiff.from_dict(d.to_dict())
    assert back.per_key == d.per_key and back.missing_in_target == d.missing_in_target


def test_csv_headers():
    s = summarize([rec("convolution", 2.0)])
    assert s.to_csv().splitlines()[0] == "key,calls,total_ms,avg_ms,share"


def test_fragmentation_examples():
    def spans(names):
        return [TraceSpan(n, i, i + 1) for i, n in enumerate(names)]

    assert fragmentation(spans("a")) == 0.0
    assert fragmentation([]) == 0.0
    assert fragmentation(spans("aaaa")) == 0.0
    assert fragmentation(spans("abab")) == 1.0
    with pytest.raises(ValueError):
        TraceSpan("x", 2.0, 1.0)


def test_spans_from_log():
    log = parse_log(
        [
            "onednn_verbose,exec,cpu,reorder,jit,undef,src_f32::blocked:abcd:f0,,,1x2,1.5",
            "onednn_verbose,exec,cpu,convolution,jit,forward_training,src_f32::blocked:abcd:f0,,,mb1,2.0",
        ]
    )
    spans = spans_from_log(log)
    assert [(s.name, s.start, s.end) for s in spans] == [("reorder", 0.0, 1.5), ("convolution", 1.5, 3.5)]


# properties ------------------------------------------------------------------

kinds = st.sampled_from(["convolution", "reorder", "eltwise", "matmul", "pooling"])
dirs = st.sampled_from(["forward_training", "forward_inference", "backward_data", "backward_weights"])
times = st.one_of(st.just(0.0), st.floats(1e-6, 1e3))
records = st.lists(st.builds(rec, kinds, times, dirs, st.sampled_from(["f32", "bf16"])), max_size=40)
grans = st.sampled_from(["kind", "kind-dir", "kind-dir-dtype"])


@settings(max_examples=100, deadline=None)
@given(records, grans, st.randoms(use_true_random=False))
def test_summary_order_free(rs, gran, rnd):
    shuffled = list(rs)
    rnd.shuffle(shuffled)
    assert summarize(rs, gran) == summarize(shuffled, gran)


@settings(max_examples=100, deadline=None)
@given(records, grans)
def test_summary_invariants(rs, gran):
    s = summarize(rs, gran)
    assert sum(g.call_count for g in s.groups) == s.total_calls
    assert math.isclose(math.fsum(g.total_time_ms for g in s.groups), s.total_time_ms, rel_tol=1e-6, abs_tol=1e-12)
    if s.total_time_ms > 0:
        assert abs(math.fsum(g.share for g in s.groups) - 1.0) <= 1e-9
    totals = [g.total_time_ms for g in s.groups]
    assert totals == sorted(totals, reverse=True)


@settings(max_examples=100, deadline=None)
@given(records, records, grans)
def test_compare_properties(a, b, gran):
    sa, sb = summarize(a, gran), summarize(b, gran)
    ab, ba = compare(sa, sb), compare(sb, sa)
    keys_a = {g.key for g in sa.groups}
    keys_b = {g.key for g in sb.groups}
    assert set(ab.per_key) | ab.missing_in_target | ab.missing_in_reference == keys_a | keys_b
    assert not (set(ab.per_key) & (ab.missing_in_target | ab.missing_in_reference))
    assert ab.missing_in_target == ba.missing_in_reference
    for k, v in ab.per_key.items():
        if v.ref_time > 0 and v.target_time > 0:
            assert abs(v.ratio * ba.per_key[k].ratio - 1.0) <= 1e-12
    ident = compare(sa, sa)
    assert all(v.ratio == 1.0 for v in ident.per_key.values())
    assert not ident.missing_in_target and not ident.missing_in_reference


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.sampled_from("abc"), max_size=30),
    st.floats(-1e3, 1e3, allow_nan=False),
    st.floats(1e-3, 1e3, allow_nan=False),
)
def test_fragmentation_shift_scale(names, shift, scale):
    spans = [TraceSpan(n, float(i), i + 1.0) for i, n in enumerate(names)]
    moved = [TraceSpan(s.name, s.start * scale + shift, s.end * scale + shift) for s in spans]
    f = fragmentation(spans)
    assert 0.0 <= f <= 1.0
    assert fragmentation(moved) == f
