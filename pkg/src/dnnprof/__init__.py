"""Profiling tools for oneDNN verbose logs plus a fused focal-loss kernel."""

from .bench_descriptor import (
    BenchResult,
    DescriptorSet,
    ProblemDescriptor,
    dedupe,
    emit_batch,
    ingest_results,
)
from .bf16 import round_bf16
from .focal import (
    ElementBuffer,
    FocalParams,
    KernelStats,
    focal_backward,
    focal_backward_numeric,
    focal_forward_general,
    focal_forward_reference,
    focal_forward_simplified,
)
from .planner import RankPlan, SystemSpec, enumerate_plans
from .profile_stats import GroupKey, ProfileDiff, ProfileSummary, compare, fragmentation, summarize
from .projection import CostModel, ProjectionReport, project, synthetic_run
from .report import ReportConfig, render_diff, render_projection, render_summary
from .verbose_log import MalformedRecord, PrimitiveRecord, ProfileLog, TensorDesc, parse_line, parse_log, read_log

__version__ = "0.1.0"
