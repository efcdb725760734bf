"""Configuration search: enumerate, estimate, Pareto-filter, pick the winner.

The candidate space is the cross product of parallelism degrees and batch
sizes, pruned by model consistency, memory fit, and the GPU budget. Every
surviving candidate is estimated under each requested serving mode; failures
are recorded, never fatal. Results reduce to the Pareto frontier in the
(user speed, cluster throughput per GPU) plane and a single recommended
deployment.
"""

from __future__ import annotations

import json
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

from . import __version__
from .model import (
    ModelSpec,
    ParallelConfig,
    ParallelConfigError,
    check_consistency,
    fits_memory,
)
from .perfdb import PerfDatabase, PerfDbError
from .serving_modes import (
    DEFAULT_DISAGG,
    DisaggConstants,
    DisaggPlan,
    InfeasibleConfigError,
    PerfEstimate,
    WorkloadSpec,
    decode_candidate,
    estimate_aggregated,
    estimate_disaggregated,
    estimate_static,
    prefill_candidate,
)

REPORT_SCHEMA = "llmconf-report/1"

DEFAULT_BATCHES = tuple(2**i for i in range(10))  # 1..512


class SearchError(RuntimeError):
    """Search could not produce a report."""


@dataclass(frozen=True)
class CandidateSpace:
    """Axes of the deployment cross product plus fixed runtime knobs."""

    tp_values: tuple[int, ...] = (1, 2, 4, 8)
    pp_values: tuple[int, ...] = (1, 2, 4)
    ep_values: tuple[int, ...] = (1, 2, 4, 8)
    dp_values: tuple[int, ...] = (1, 2, 4, 8)
    batch_values: tuple[int, ...] = DEFAULT_BATCHES
    ctx_capacity: int | None = None
    chunked_prefill: bool = True
    kv_mem_fraction: float = 0.9
    cuda_graph: bool = True
    # pool preselection keeps the replica sweep bounded; candidates are ranked
    # by sequence rate per GPU before pairing
    prefill_pool_cap: int = 8
    decode_pool_cap: int = 16

    def config(self, tp: int, pp: int, ep: int, dp: int, batch: int, backend: str) -> ParallelConfig:
        return ParallelConfig(
            tp=tp, pp=pp, ep=ep, dp=dp, batch=batch,
            ctx_capacity=self.ctx_capacity,
            chunked_prefill=self.chunked_prefill,
            kv_mem_fraction=self.kv_mem_fraction,
            cuda_graph=self.cuda_graph,
            backend=backend,
        )


def enumerate_candidates(
    model: ModelSpec,
    space: CandidateSpace,
    workload: WorkloadSpec,
    db: PerfDatabase,
    enforce_budget: bool = True,
) -> list[ParallelConfig]:
    """Valid deployment candidates in a fixed nested-loop order.

    Disaggregated pool workers skip the budget check (``enforce_budget=False``)
    since the budget applies to replica totals, not single workers.
    """
    batches = workload.batch_sweep or space.batch_values
    budgets = set(workload.gpu_budgets)
    out = []
    for tp in sorted(space.tp_values):
        for pp in sorted(space.pp_values):
            for ep in sorted(set(space.ep_values) if model.moe else {1}):
                for dp in sorted(space.dp_values):
                    for batch in sorted(batches):
                        try:
                            cfg = space.config(tp, pp, ep, dp, batch, db.backend)
                        except ParallelConfigError:
                            continue
                        if check_consistency(model, cfg):
                            continue
                        if enforce_budget and budgets and cfg.gpus() not in budgets:
                            continue
                        if not fits_memory(model, cfg, db.hardware, workload):
                            continue
                        out.append(cfg)
    return out


@dataclass(frozen=True)
class ResultRow:
    """One evaluated deployment in metric space, any serving mode."""

    mode: str
    config_label: str
    speed: float
    throughput_per_gpu: float
    ttft_ms: float
    tpot_ms: float
    gpus: int
    detail: PerfEstimate | DisaggPlan

    def meets_sla(self, workload: WorkloadSpec) -> bool:
        if workload.ttft_limit_ms is not None and self.ttft_ms > workload.ttft_limit_ms:
            return False
        floor = workload.speed_floor()
        return floor is None or self.speed >= floor

    def to_doc(self) -> dict:
        doc = self.detail.to_doc()
        doc["config"] = self.config_label
        return doc


def _estimate_row(est: PerfEstimate) -> ResultRow:
    return ResultRow(
        est.mode, est.cfg.key(), est.speed, est.throughput_per_gpu,
        est.ttft_ms, est.tpot_ms, est.gpus, est,
    )


def _plan_row(plan: DisaggPlan) -> ResultRow:
    label = f"P:{plan.x}x{plan.prefill.cfg.key()}|D:{plan.y}x{plan.decode.cfg.key()}"
    return ResultRow(
        "disaggregated", label, plan.speed, plan.throughput_per_gpu,
        plan.ttft_ms, plan.tpot_ms, plan.gpus, plan,
    )


def pareto_filter(rows: Sequence[ResultRow]) -> list[ResultRow]:
    """Rows not weakly dominated in (speed, throughput_per_gpu), speed-descending.

    A row is dominated when another is at least as good on both axes and
    strictly better on one. Ties on both axes are all kept. Sort by speed
    descending, then one pass tracking the best throughput seen so far: a row
    survives iff it tops its speed group and beats every faster group.
    """
    by_speed: dict[float, list[ResultRow]] = {}
    for row in rows:
        by_speed.setdefault(row.speed, []).append(row)

    frontier = []
    best_thru = -math.inf
    for speed in sorted(by_speed, reverse=True):
        group = by_speed[speed]
        top = max(r.throughput_per_gpu for r in group)
        if top > best_thru:
            frontier.extend(r for r in group if r.throughput_per_gpu == top)
            best_thru = top
    return frontier


def select_best(rows: Sequence[ResultRow], workload: WorkloadSpec) -> ResultRow | None:
    """Highest-throughput SLA-feasible row; ties prefer speed, then fewer GPUs."""
    feasible = [r for r in rows if r.meets_sla(workload)]
    if not feasible:
        return None
    return min(
        feasible,
        key=lambda r: (-r.throughput_per_gpu, -r.speed, r.gpus, r.mode, r.config_label),
    )


def nearest_miss(rows: Sequence[ResultRow], workload: WorkloadSpec) -> dict | None:
    """Least-violating row when nothing is feasible, with the violation factors."""
    if not rows:
        return None

    def violation(row: ResultRow) -> float:
        worst = 1.0
        if workload.ttft_limit_ms is not None and row.ttft_ms > workload.ttft_limit_ms:
            worst = max(worst, row.ttft_ms / workload.ttft_limit_ms)
        floor = workload.speed_floor()
        if floor is not None and row.speed < floor:
            worst = max(worst, math.inf if row.speed == 0 else floor / row.speed)
        return worst

    row = min(rows, key=lambda r: (violation(r), r.config_label))
    doc = row.to_doc()
    worst = violation(row)
    doc["violation_factor"] = worst if math.isfinite(worst) else None
    return doc


@dataclass
class SearchReport:
    model: str
    backend: str
    workload: WorkloadSpec
    rows: list[ResultRow]
    frontier: list[ResultRow]
    best: ResultRow | None
    skipped: list[dict]
    enumerated: int
    total_ms: float
    per_candidate_ms: list[float]

    def to_doc(self) -> dict:
        on_frontier = {id(r) for r in self.frontier}
        doc_by_id = {}
        rows = []
        feasible_count = 0
        for r in self.rows:
            doc = r.to_doc()
            doc["feasible"] = r.meets_sla(self.workload)
            doc["frontier"] = id(r) in on_frontier
            feasible_count += doc["feasible"]
            doc_by_id[id(r)] = doc
            rows.append(doc)
        return {
            "schema": REPORT_SCHEMA,
            "version": __version__,
            "model": self.model,
            "backend": self.backend,
            "workload": self.workload.to_doc(),
            "counts": {
                "enumerated": self.enumerated,
                "evaluated": len(self.rows),
                "feasible": feasible_count,
                "frontier": len(self.frontier),
                "skipped": len(self.skipped),
            },
            "rows": rows,
            "frontier": [doc_by_id[id(r)] for r in self.frontier],
            "best": self.best.to_doc() if self.best else None,
            "diagnostics": None if self.best else nearest_miss(self.rows, self.workload),
            "skipped": self.skipped,
            "timing": {
                "total_ms": self.total_ms,
                "per_candidate_median_ms": (
                    statistics.median(self.per_candidate_ms) if self.per_candidate_ms else 0.0
                ),
            },
        }

    def to_json(self) -> str:
        # allow_nan=False: the doc must stay valid for strict JSON parsers
        return json.dumps(self.to_doc(), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _timed(fn: Callable[[], PerfEstimate]) -> tuple[PerfEstimate | None, str | None, float]:
    start = time.perf_counter()
    try:
        est = fn()
        return est, None, (time.perf_counter() - start) * 1000.0
    except (InfeasibleConfigError, PerfDbError, ParallelConfigError) as e:
        return None, f"{type(e).__name__}: {e}", (time.perf_counter() - start) * 1000.0


def _pool_rank(c) -> tuple:
    return (-c.seq_rate / c.gpus, c.cfg.key())


def run_search(
    db: PerfDatabase,
    model: ModelSpec,
    workload: WorkloadSpec,
    space: CandidateSpace = CandidateSpace(),
    jobs: int = 1,
    disagg_constants: DisaggConstants = DEFAULT_DISAGG,
) -> SearchReport:
    """Full pipeline: enumerate, estimate every mode, reduce to a report.

    Results are independent of ``jobs``: work is dispatched to a thread pool
    but collected in submission order, and every estimate is a pure function
    of its inputs.
    """
    if jobs < 1:
        raise SearchError("jobs must be >= 1")
    start = time.perf_counter()

    candidates = enumerate_candidates(model, space, workload, db)
    rows: list[ResultRow] = []
    skipped: list[dict] = []
    durations: list[float] = []

    tasks: list[tuple[str, ParallelConfig, Callable[[], PerfEstimate]]] = []
    for mode, fn in (("static", estimate_static), ("aggregated", estimate_aggregated)):
        if mode not in workload.modes:
            continue
        for cfg in candidates:
            tasks.append((mode, cfg, lambda f=fn, c=cfg: f(db, model, c, workload)))

    if jobs == 1:
        outcomes = [_timed(fn) for _, _, fn in tasks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(lambda t: _timed(t[2]), tasks))
    for (mode, cfg, _), (est, reason, ms) in zip(tasks, outcomes):
        durations.append(ms)
        if est is not None:
            rows.append(_estimate_row(est))
        else:
            skipped.append({"mode": mode, "config": cfg.key(), "reason": reason})

    if "disaggregated" in workload.modes:
        workers = enumerate_candidates(model, space, workload, db, enforce_budget=False)
        prefill_pool, decode_pool = [], []
        for cfg in workers:
            est, reason, ms = _timed(lambda: prefill_candidate(db, model, cfg, workload))
            durations.append(ms)
            if est is not None:
                prefill_pool.append(est)
            else:
                skipped.append({"mode": "disaggregated/prefill", "config": cfg.key(), "reason": reason})
            est, reason, ms = _timed(lambda: decode_candidate(db, model, cfg, workload))
            durations.append(ms)
            if est is not None:
                decode_pool.append(est)
            else:
                skipped.append({"mode": "disaggregated/decode", "config": cfg.key(), "reason": reason})
        prefill_pool = sorted(prefill_pool, key=_pool_rank)[: space.prefill_pool_cap]
        decode_pool = sorted(decode_pool, key=_pool_rank)[: space.decode_pool_cap]
        for plan in estimate_disaggregated(workload, prefill_pool, decode_pool, disagg_constants):
            rows.append(_plan_row(plan))

    feasible = [r for r in rows if r.meets_sla(workload)]
    frontier = pareto_filter(feasible)
    best = select_best(rows, workload)
    total_ms = (time.perf_counter() - start) * 1000.0
    return SearchReport(
        model=model.name,
        backend=db.backend,
        workload=workload,
        rows=rows,
        frontier=frontier,
        best=best,
        skipped=skipped,
        enumerated=len(candidates),
        total_ms=total_ms,
        per_candidate_ms=durations,
    )


CSV_COLUMNS = (
    "mode", "config", "gpus", "batch", "ttft_ms", "tpot_ms", "speed",
    "throughput_per_gpu", "feasible", "frontier",
)


def csv_from_doc(doc: Mapping) -> str:
    """CSV of every evaluated row in a report document."""
    lines = [",".join(CSV_COLUMNS)]
    for row in doc["rows"]:
        if row["mode"] == "disaggregated":
            batch = row["decode"]["batch"]
        else:
            batch = row["batch"]
        speed = row["speed"]
        values = [
            row["mode"], row["config"], str(row["gpus"]), str(batch),
            f"{row['ttft_ms']:.6g}", f"{row['tpot_ms']:.6g}",
            "inf" if speed is None or math.isinf(speed) else f"{speed:.6g}",
            f"{row['throughput_per_gpu']:.6g}",
            "yes" if row["feasible"] else "no",
            "yes" if row["frontier"] else "no",
        ]
        lines.append(",".join(values))
    return "\n".join(lines) + "\n"


def export_csv(report: SearchReport) -> str:
    """Every evaluated row as CSV with feasibility and frontier flags."""
    return csv_from_doc(report.to_doc())
