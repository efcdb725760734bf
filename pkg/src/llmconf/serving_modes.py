"""Request-level performance models for the three serving arrangements.

``static``: whole batches prefill together, decode together, no admission
between. ``aggregated``: continuous batching with chunked prefill, where
context chunks ride along with decode steps. ``disaggregated``: separate
prefill and decode GPU pools sized so neither side starves the other.

All three produce time-to-first-token (TTFT), time-per-output-token (TPOT),
and the derived user speed and cluster throughput:

    speed = 1000 / TPOT                                  [tokens/s per user]
    throughput = 1000 / (TTFT + (OSL-1) * TPOT) * batch * OSL / gpus
                                                         [tokens/s per GPU]
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .estimator import get_gen_latency, get_mix_latency, get_step_latency
from .model import ModelSpec, ParallelConfig
from .moe_load import PowerLawParams
from .perfdb import PerfDatabase

SERVING_MODES = ("static", "aggregated", "disaggregated")

STATIC_DECODE_STRIDE = 32  # decode KV grows slowly; sample the loop at this stride
DEFAULT_CTX_CAPACITY_FLOOR = 2048

# chunked prefill reprocesses earlier chunks' KV; cost grows with chunk count
CHUNK_OVERLAP_BASE = 2.0
CHUNK_OVERLAP_SLOPE = 1.0 / 20.0
CHUNK_OVERLAP_CAP = 4.0
CHUNK_OVERLAP_PIVOT = 3
# steady in-flight batches overlap scheduling of the first few mixed steps
MIX_WARMUP_STEPS = 3


@dataclass(frozen=True)
class DisaggConstants:
    """Tunables for pool sizing; defaults follow measured serving systems."""

    ttft_headroom: float = 1.8  # queueing and transfer on top of raw prefill
    prefill_utilization: float = 0.90
    decode_utilization: float = 0.92
    max_prefill_replicas: int = 32
    max_decode_replicas: int = 64


DEFAULT_DISAGG = DisaggConstants()


class WorkloadError(ValueError):
    """Invalid workload description."""


class InfeasibleConfigError(RuntimeError):
    """This configuration cannot serve the workload at all."""


@dataclass(frozen=True)
class WorkloadSpec:
    """Traffic shape and service objectives for one search."""

    isl: int
    osl: int
    prefix_len: int = 0
    ttft_limit_ms: float | None = None
    tpot_limit_ms: float | None = None
    min_speed: float | None = None  # tokens/s per user; alternative to tpot_limit_ms
    gpu_budgets: tuple[int, ...] = ()
    modes: tuple[str, ...] = SERVING_MODES
    batch_sweep: tuple[int, ...] = ()
    moe_load: PowerLawParams | None = None

    def __post_init__(self) -> None:
        if self.isl < 1 or self.osl < 1:
            raise WorkloadError("isl and osl must be >= 1")
        if not 0 <= self.prefix_len < self.isl:
            raise WorkloadError("prefix_len must be in [0, isl)")
        for name in ("ttft_limit_ms", "tpot_limit_ms", "min_speed"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise WorkloadError(f"{name} must be positive when set")
        if self.tpot_limit_ms is not None and self.min_speed is not None:
            raise WorkloadError("set either tpot_limit_ms or min_speed, not both")
        unknown = set(self.modes) - set(SERVING_MODES)
        if unknown:
            raise WorkloadError(f"unknown serving modes: {sorted(unknown)}")
        if any(b < 1 for b in self.gpu_budgets):
            raise WorkloadError("gpu budgets must be positive")
        if any(b < 1 for b in self.batch_sweep):
            raise WorkloadError("batch sizes must be positive")

    def effective_isl(self) -> int:
        """Context tokens actually computed; the shared prefix is cache-hit."""
        return self.isl - self.prefix_len

    def speed_floor(self) -> float | None:
        """The user-speed bound implied by whichever latency objective is set."""
        if self.min_speed is not None:
            return self.min_speed
        if self.tpot_limit_ms is not None:
            return 1000.0 / self.tpot_limit_ms
        return None

    def tpot_ceiling(self) -> float | None:
        floor = self.speed_floor()
        return None if floor is None else 1000.0 / floor

    def to_doc(self) -> dict:
        doc: dict = {"isl": self.isl, "osl": self.osl, "prefix_len": self.prefix_len}
        for name in ("ttft_limit_ms", "tpot_limit_ms", "min_speed"):
            if getattr(self, name) is not None:
                doc[name] = getattr(self, name)
        if self.gpu_budgets:
            doc["gpu_budgets"] = list(self.gpu_budgets)
        doc["modes"] = list(self.modes)
        if self.batch_sweep:
            doc["batch_sweep"] = list(self.batch_sweep)
        if self.moe_load is not None:
            doc["moe_load"] = {
                "alpha": self.moe_load.alpha,
                "x_min": self.moe_load.x_min,
                "x_max": self.moe_load.x_max,
                "seed": self.moe_load.seed,
            }
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "WorkloadSpec":
        known = {
            "isl", "osl", "prefix_len", "ttft_limit_ms", "tpot_limit_ms", "min_speed",
            "gpu_budgets", "modes", "batch_sweep", "moe_load",
        }
        unknown = set(doc) - known
        if unknown:
            raise WorkloadError(f"unknown workload fields: {sorted(unknown)}")
        kwargs = dict(doc)
        for name in ("gpu_budgets", "modes", "batch_sweep"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        if kwargs.get("moe_load") is not None:
            kwargs["moe_load"] = PowerLawParams(**kwargs["moe_load"])
        return cls(**kwargs)


def _runtime_doc(cfg: ParallelConfig) -> dict:
    """Knobs a launch plan needs that the parallel block does not carry."""
    return {
        "ctx_capacity": cfg.ctx_capacity,
        "chunked_prefill": cfg.chunked_prefill,
        "kv_mem_fraction": cfg.kv_mem_fraction,
        "cuda_graph": cfg.cuda_graph,
        "backend": cfg.backend,
    }


def derive_metrics(
    ttft_ms: float, tpot_ms: float, batch: int, osl: int, gpus: int
) -> tuple[float, float]:
    """(user speed, cluster throughput per GPU) from the latency pair.

    A single-token response has no inter-token interval; its speed is
    reported as infinity and throughput falls back to the TTFT term alone.
    """
    speed = math.inf if tpot_ms == 0 else 1000.0 / tpot_ms
    request_ms = ttft_ms + (osl - 1) * tpot_ms
    throughput = 1000.0 / request_ms * batch * osl / gpus
    return speed, throughput


@dataclass(frozen=True)
class PerfEstimate:
    """Predicted serving behavior of one configuration under one workload."""

    mode: str
    model_name: str
    cfg: ParallelConfig
    ttft_ms: float
    tpot_ms: float
    speed: float
    throughput_per_gpu: float
    gpus: int
    batch: int

    @classmethod
    def build(
        cls, mode: str, model: ModelSpec, cfg: ParallelConfig,
        ttft_ms: float, tpot_ms: float, osl: int,
    ) -> "PerfEstimate":
        gpus = cfg.gpus()
        speed, thru = derive_metrics(ttft_ms, tpot_ms, cfg.batch, osl, gpus)
        return cls(mode, model.name, cfg, ttft_ms, tpot_ms, speed, thru, gpus, cfg.batch)

    def meets_sla(self, workload: WorkloadSpec) -> bool:
        if workload.ttft_limit_ms is not None and self.ttft_ms > workload.ttft_limit_ms:
            return False
        floor = workload.speed_floor()
        return floor is None or self.speed >= floor

    def to_doc(self) -> dict:
        return {
            "mode": self.mode,
            "model": self.model_name,
            "parallel": {
                "tp": self.cfg.tp, "pp": self.cfg.pp, "ep": self.cfg.ep, "dp": self.cfg.dp,
            },
            "batch": self.batch,
            "runtime": _runtime_doc(self.cfg),
            "gpus": self.gpus,
            "ttft_ms": self.ttft_ms,
            "tpot_ms": self.tpot_ms,
            "speed": self.speed if math.isfinite(self.speed) else None,
            "throughput_per_gpu": self.throughput_per_gpu,
        }


def resolve_ctx_capacity(cfg: ParallelConfig, workload: WorkloadSpec) -> int:
    """Per-iteration context token budget for chunked prefill."""
    if cfg.ctx_capacity is not None:
        return cfg.ctx_capacity
    return max(workload.effective_isl(), DEFAULT_CTX_CAPACITY_FLOOR)


# ---------------------------------------------------------------------------
# static batching

def estimate_static(
    db: PerfDatabase,
    model: ModelSpec,
    cfg: ParallelConfig,
    workload: WorkloadSpec,
    stride: int = STATIC_DECODE_STRIDE,
) -> PerfEstimate:
    """Whole-batch prefill then lockstep decode.

    The decode loop is sampled every ``stride`` tokens: the KV cache grows by
    one token per step, so latency between samples is flat enough to hold
    constant, cutting lookups by the stride factor.
    """
    if stride < 1:
        raise WorkloadError("stride must be >= 1")
    b = cfg.batch
    isl, osl = workload.isl, workload.osl
    chunk = workload.effective_isl()
    load = workload.moe_load

    ttft = get_step_latency(
        db, model, cfg, "prefill",
        n_ctx_tokens=b * chunk, seq_len=chunk, moe_load=load,
    ).total_ms

    t_gen = 0.0
    k = 0
    while k < osl - 1:
        kv = isl + k + 1
        step = get_step_latency(
            db, model, cfg, "decode", n_gen_tokens=b, seq_len=kv, moe_load=load
        ).total_ms
        run = min(stride, osl - 1 - k)
        t_gen += step * run
        k += run
    tpot = t_gen / (osl - 1) if osl > 1 else 0.0
    return PerfEstimate.build("static", model, cfg, ttft, tpot, osl)


# ---------------------------------------------------------------------------
# aggregated (continuous batching with chunked prefill)

def chunk_overlap_factor(total_ctx_iterations: int) -> float:
    """TTFT inflation from re-reading prior chunks' KV during chunked prefill."""
    raw = CHUNK_OVERLAP_BASE + (total_ctx_iterations - CHUNK_OVERLAP_PIVOT) * CHUNK_OVERLAP_SLOPE
    return min(max(raw, CHUNK_OVERLAP_BASE), CHUNK_OVERLAP_CAP)


def estimate_aggregated(
    db: PerfDatabase,
    model: ModelSpec,
    cfg: ParallelConfig,
    workload: WorkloadSpec,
) -> PerfEstimate:
    """Continuous batching: context chunks share iterations with decodes.

    A request's life has ``t_mix`` iterations that also carry someone's
    context chunk and ``t_gen`` pure decode iterations; TPOT blends the two
    latencies. When context work dominates (more chunk iterations than output
    tokens), every step is a mixed step and decode slots shrink.
    """
    b = cfg.batch
    isl, osl = workload.isl, workload.osl
    chunk_total = workload.effective_isl()
    c_ctx = resolve_ctx_capacity(cfg, workload)
    load = workload.moe_load

    if not cfg.chunked_prefill and chunk_total > c_ctx:
        raise InfeasibleConfigError(
            f"context of {chunk_total} tokens exceeds capacity {c_ctx} and chunking is off"
        )

    total_ctx_iters = math.ceil(chunk_total * b / c_ctx)
    chunks_per_request = math.ceil(chunk_total / c_ctx)
    chunk_tokens = min(c_ctx, chunk_total)

    if b == 1:
        t_mix, t_gen, n_mix_gen = 1, osl - 1, 0
    elif total_ctx_iters >= osl:
        # context-dominant: chunks from other requests fill every iteration
        n_mix_gen = max(1, int(b * osl / total_ctx_iters))
        t_mix, t_gen = osl, 0
    else:
        prefilling = math.ceil(c_ctx / chunk_total)
        n_mix_gen = b - prefilling
        if n_mix_gen < 1:
            raise InfeasibleConfigError(
                f"batch {b} too small to decode alongside {prefilling} prefilling requests"
            )
        t_mix, t_gen = total_ctx_iters, osl - total_ctx_iters

    l_mix = get_mix_latency(
        db, model, cfg, chunk_tokens=chunk_tokens, n_gen_tokens=n_mix_gen,
        isl=isl, osl=osl, moe_load=load,
    ).total_ms
    l_gen = get_gen_latency(
        db, model, cfg, n_gen_tokens=b, isl=isl, osl=osl, moe_load=load
    ).total_ms if (t_gen or b == 1) else 0.0

    ttft = l_mix * chunks_per_request * chunk_overlap_factor(total_ctx_iters)

    if b == 1:
        tpot = l_gen if osl > 1 else 0.0
    elif osl == 1:
        tpot = 0.0
    elif t_gen == 0:
        tpot = l_mix  # every step is a mixed step; no blend needed
    else:
        mix_steps = max(1, t_mix - MIX_WARMUP_STEPS)
        tpot = (l_mix * mix_steps + l_gen * t_gen) / (mix_steps + t_gen)
    return PerfEstimate.build("aggregated", model, cfg, ttft, tpot, osl)


# ---------------------------------------------------------------------------
# disaggregated (separate prefill and decode pools)

@dataclass(frozen=True)
class PoolCandidate:
    """One worker flavor for a pool: its latency and sustained sequence rate."""

    role: str  # "prefill" | "decode"
    cfg: ParallelConfig
    latency_ms: float  # TTFT for prefill workers, TPOT for decode workers
    seq_rate: float  # sequences/s one replica completes
    gpus: int


def prefill_candidate(
    db: PerfDatabase, model: ModelSpec, cfg: ParallelConfig, workload: WorkloadSpec
) -> PoolCandidate:
    chunk = workload.effective_isl()
    step = get_step_latency(
        db, model, cfg, "prefill",
        n_ctx_tokens=cfg.batch * chunk, seq_len=chunk, moe_load=workload.moe_load,
    )
    rate = cfg.batch * 1000.0 / step.total_ms
    return PoolCandidate("prefill", cfg, step.total_ms, rate, cfg.gpus())


def decode_candidate(
    db: PerfDatabase, model: ModelSpec, cfg: ParallelConfig, workload: WorkloadSpec
) -> PoolCandidate:
    step = get_gen_latency(
        db, model, cfg, n_gen_tokens=cfg.batch,
        isl=workload.isl, osl=workload.osl, moe_load=workload.moe_load,
    )
    if workload.osl == 1:
        rate = math.inf  # no decode work at all
    else:
        rate = cfg.batch * 1000.0 / ((workload.osl - 1) * step.total_ms)
    return PoolCandidate("decode", cfg, step.total_ms, rate, cfg.gpus())


@dataclass(frozen=True)
class DisaggPlan:
    """A sized two-pool deployment: x prefill replicas feeding y decode replicas."""

    prefill: PoolCandidate
    decode: PoolCandidate
    x: int
    y: int
    gpus: int
    r_sys: float  # sequences/s through the slower pool
    ttft_ms: float
    tpot_ms: float
    speed: float
    throughput_per_gpu: float

    def to_doc(self) -> dict:
        return {
            "mode": "disaggregated",
            "prefill": {
                "replicas": self.x,
                "parallel": {
                    "tp": self.prefill.cfg.tp, "pp": self.prefill.cfg.pp,
                    "ep": self.prefill.cfg.ep, "dp": self.prefill.cfg.dp,
                },
                "batch": self.prefill.cfg.batch,
                "runtime": _runtime_doc(self.prefill.cfg),
            },
            "decode": {
                "replicas": self.y,
                "parallel": {
                    "tp": self.decode.cfg.tp, "pp": self.decode.cfg.pp,
                    "ep": self.decode.cfg.ep, "dp": self.decode.cfg.dp,
                },
                "batch": self.decode.cfg.batch,
                "runtime": _runtime_doc(self.decode.cfg),
            },
            "gpus": self.gpus,
            "r_sys": self.r_sys,
            "ttft_ms": self.ttft_ms,
            "tpot_ms": self.tpot_ms,
            "speed": self.speed if math.isfinite(self.speed) else None,
            "throughput_per_gpu": self.throughput_per_gpu,
        }


def _plan_sort_key(plan: DisaggPlan) -> tuple:
    # prefer throughput, then fewer GPUs, then lower TTFT, then stable replica order
    return (-plan.throughput_per_gpu, plan.gpus, plan.ttft_ms, plan.x, plan.y)


def _build_plan(
    p: PoolCandidate, d: PoolCandidate, x: int, y: int,
    workload: WorkloadSpec, constants: DisaggConstants,
) -> DisaggPlan:
    gpus = x * p.gpus + y * d.gpus
    r_pre = p.seq_rate * x * constants.prefill_utilization
    r_dec = d.seq_rate * y * constants.decode_utilization
    r_sys = min(r_pre, r_dec)
    ttft = p.latency_ms * constants.ttft_headroom
    tpot = d.latency_ms
    speed = math.inf if tpot == 0 else 1000.0 / tpot
    thru = r_sys * workload.osl / gpus
    return DisaggPlan(p, d, x, y, gpus, r_sys, ttft, tpot, speed, thru)


def estimate_disaggregated(
    workload: WorkloadSpec,
    prefill_pool: Sequence[PoolCandidate],
    decode_pool: Sequence[PoolCandidate],
    constants: DisaggConstants = DEFAULT_DISAGG,
) -> list[DisaggPlan]:
    """Sweep replica counts for every worker pairing; best plan per pairing.

    Pool candidates failing their latency objective are dropped before the
    sweep: prefill workers must land under the TTFT limit including headroom,
    decode workers under the TPOT ceiling.
    """
    tpot_cap = workload.tpot_ceiling()
    prefill_ok = [
        p for p in prefill_pool
        if workload.ttft_limit_ms is None
        or p.latency_ms * constants.ttft_headroom <= workload.ttft_limit_ms
    ]
    decode_ok = [
        d for d in decode_pool if tpot_cap is None or d.latency_ms <= tpot_cap
    ]
    budgets = set(workload.gpu_budgets)

    plans = []
    for p in prefill_ok:
        for d in decode_ok:
            # ttft is fixed per pairing, so the tie-break inside the sweep
            # reduces to (throughput, gpus, x, y); objects are built only
            # for the winner
            best_key: tuple | None = None
            best_xy = (0, 0)
            for x in range(1, constants.max_prefill_replicas + 1):
                r_pre = p.seq_rate * x * constants.prefill_utilization
                g_pre = x * p.gpus
                for y in range(1, constants.max_decode_replicas + 1):
                    gpus = g_pre + y * d.gpus
                    if budgets and gpus not in budgets:
                        continue
                    r_sys = min(r_pre, d.seq_rate * y * constants.decode_utilization)
                    key = (-r_sys * workload.osl / gpus, gpus, x, y)
                    if best_key is None or key < best_key:
                        best_key, best_xy = key, (x, y)
            if best_key is not None:
                plans.append(_build_plan(p, d, *best_xy, workload, constants))
    plans.sort(key=_plan_sort_key)
    return plans


def best_disaggregated(
    workload: WorkloadSpec,
    prefill_pool: Sequence[PoolCandidate],
    decode_pool: Sequence[PoolCandidate],
    constants: DisaggConstants = DEFAULT_DISAGG,
) -> DisaggPlan | None:
    plans = estimate_disaggregated(workload, prefill_pool, decode_pool, constants)
    return plans[0] if plans else None
