"""Rank/thread placement for data-parallel training on multi-socket CPUs.

Rules: one thread per core across the whole system, no rank spans a socket,
ranks spread evenly over sockets, and every rank gets its memory share.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass


class NoFeasiblePlan(ValueError):
    pass


@dataclass(frozen=True)
class SystemSpec:
    sockets: int
    cores_per_socket: int
    mem_total_gb: float
    mem_per_rank_gb: float

    def __post_init__(self):
        if self.sockets < 1 or self.cores_per_socket < 1:
            raise ValueError("sockets and cores_per_socket must be >= 1")
        if not (self.mem_total_gb > 0 and self.mem_per_rank_gb > 0):
            raise ValueError("memory sizes must be positive")

    @property
    def total_cores(self) -> int:
        return self.sockets * self.cores_per_socket


@dataclass(frozen=True)
class RankPlan:
    ranks: int
    threads_per_rank: int
    ranks_per_socket: int
    local_batch: int

    @property
    def total_threads(self) -> int:
        return self.ranks * self.threads_per_rank

    @property
    def global_batch(self) -> int:
        return self.ranks * self.local_batch

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total_threads"] = self.total_threads
        d["global_batch"] = self.global_batch
        return d


def is_valid(plan: RankPlan, spec: SystemSpec) -> bool:
    return (
        plan.total_threads == spec.total_cores
        and plan.ranks == plan.ranks_per_socket * spec.sockets
        and plan.ranks_per_socket * plan.threads_per_rank <= spec.cores_per_socket
        and plan.ranks * spec.mem_per_rank_gb <= spec.mem_total_gb
    )


def enumerate_plans(spec: SystemSpec, local_batch: int) -> list[RankPlan]:
    """All valid placements, most ranks first."""
    if local_batch < 1:
        raise ValueError("local_batch must be >= 1")
    plans = []
    # filling every core with no socket-spanning rank forces
    # ranks_per_socket * threads_per_rank == cores_per_socket
    for threads in range(1, spec.cores_per_socket + 1):
        if spec.cores_per_socket % threads:
            continue
        per_socket = spec.cores_per_socket // threads
        plan = RankPlan(per_socket * spec.sockets, threads, per_socket, local_batch)
        if is_valid(plan, spec):
            plans.append(plan)
    if not plans:
        raise NoFeasiblePlan(
            f"memory admits {int(spec.mem_total_gb // spec.mem_per_rank_gb)} ranks; "
            f"at least {spec.sockets} are needed"
        )
    plans.sort(key=lambda p: -p.ranks)
    return plans


def batch_advisory(plan: RankPlan, max_global_batch: int) -> str | None:
    if plan.global_batch <= max_global_batch:
        return None
    return (
        f"{plan.ranks} ranks x local batch {plan.local_batch} gives global batch "
        f"{plan.global_batch} > {max_global_batch}; larger global batches push the "
        f"convergence point out, consider reducing the local batch size"
    )


def render_plans(plans: list[RankPlan], fmt: str = "text", max_global_batch: int | None = None) -> str:
    if fmt == "json":
        rows = []
        for p in plans:
            d = p.to_dict()
            if max_global_batch is not None:
                d["advisory"] = batch_advisory(p, max_global_batch)
            rows.append(d)
        return json.dumps({"type": "plans", "plans": rows}, indent=2) + "\n"
    lines = [f"{'ranks':>6} {'threads':>8} {'per_socket':>10} {'total':>6} {'global_batch':>12}"]
    notes = []
    for p in plans:
        lines.append(
            f"{p.ranks:>6} {p.threads_per_rank:>8} {p.ranks_per_socket:>10} {p.total_threads:>6} {p.global_batch:>12}"
        )
        if max_global_batch is not None and (msg := batch_advisory(p, max_global_batch)):
            notes.append(msg)
    return "\n".join(lines + notes) + "\n"
