"""Per-iteration latency estimation: plan lookup, pipeline bubble, expert skew.

One forward pass becomes a sum of database lookups over the iteration plan.
Pipeline parallelism stretches a step by the bubble factor (m + pp - 1) / m
with m microbatches; mixture-of-experts plans swap the balanced expert GEMM
for the busiest rank's token count under the configured load skew.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

from .model import IterationPlan, ModelSpec, ParallelConfig, decompose
from .moe_load import DEFAULT_MOE_LOAD, PowerLawParams, busiest_shard_tokens
from .perfdb import OperatorQuery, PerfDatabase, query_latency

# decode KV length grows during generation; estimates use the halfway point
GEN_KV_MIDPOINT = True


class EstimationError(RuntimeError):
    """Latency could not be estimated for this configuration."""


@dataclass(frozen=True)
class StepLatency:
    """One iteration's latency in milliseconds with a per-operator breakdown.

    ``total_ms`` is exactly the sum of the breakdown values; consumers may
    rely on additivity to machine precision.
    """

    total_ms: float
    breakdown: Mapping[str, float]

    def __post_init__(self) -> None:
        s = sum(self.breakdown.values())
        if self.total_ms and abs(s - self.total_ms) > 1e-9 * abs(self.total_ms):
            raise EstimationError(f"breakdown sums to {s}, total is {self.total_ms}")


def pipeline_bubble(pp: int, microbatches: int) -> float:
    """Latency stretch from pipeline fill and drain."""
    m = max(1, microbatches)
    return (m + pp - 1) / m


def resolve_moe_load(model: ModelSpec, requested: PowerLawParams | None) -> PowerLawParams | None:
    """Expert-load model to apply: the requested one, or the default for MoE models."""
    if model.moe is None:
        return None
    return requested if requested is not None else DEFAULT_MOE_LOAD


def _skewed_expert_tokens(
    model: ModelSpec, cfg: ParallelConfig, total_tokens: int, load: PowerLawParams
) -> int:
    """Expert GEMM token count on the busiest rank; never below the balanced share."""
    moe = model.moe
    pooled = total_tokens * max(1, cfg.ep // cfg.tp)
    balanced = math.ceil(pooled * moe.topk / cfg.ep)
    if cfg.ep == 1:
        return balanced
    tail = busiest_shard_tokens(load, moe.num_experts, pooled, moe.topk, cfg.ep)
    return max(balanced, tail)


@lru_cache(maxsize=1 << 16)
def _step_latency_cached(
    db: PerfDatabase,
    model: ModelSpec,
    cfg: ParallelConfig,
    phase: str,
    n_ctx_tokens: int,
    n_gen_tokens: int,
    seq_len: int,
    moe_load: PowerLawParams | None,
) -> StepLatency:
    plan = decompose(model, cfg, phase, n_ctx_tokens, n_gen_tokens, seq_len)
    bubble = pipeline_bubble(cfg.pp, cfg.batch)
    total_tokens = n_ctx_tokens + n_gen_tokens

    breakdown: dict[str, float] = {}
    for entry in plan.entries:
        query = entry.query
        if entry.label == "expert_ffn" and moe_load is not None and cfg.ep > 1:
            dims = query.dims()
            dims["tokens"] = _skewed_expert_tokens(model, cfg, total_tokens, moe_load)
            query = OperatorQuery(query.kind, query.quant, dims)
        ms = query_latency(db, query) * entry.repeat / 1000.0
        breakdown[entry.label] = breakdown.get(entry.label, 0.0) + ms * bubble
    return StepLatency(sum(breakdown.values()), breakdown)


def get_step_latency(
    db: PerfDatabase,
    model: ModelSpec,
    cfg: ParallelConfig,
    phase: str,
    n_ctx_tokens: int = 0,
    n_gen_tokens: int = 0,
    seq_len: int = 1,
    moe_load: PowerLawParams | None = None,
) -> StepLatency:
    """Latency of one forward pass; see ``decompose`` for the token arguments."""
    load = resolve_moe_load(model, moe_load)
    return _step_latency_cached(db, model, cfg, phase, n_ctx_tokens, n_gen_tokens, seq_len, load)


def _gen_kv_len(isl: int, osl: int) -> int:
    return isl + osl // 2 if GEN_KV_MIDPOINT else isl


def get_mix_latency(
    db: PerfDatabase,
    model: ModelSpec,
    cfg: ParallelConfig,
    chunk_tokens: int,
    n_gen_tokens: int,
    isl: int,
    osl: int,
    moe_load: PowerLawParams | None = None,
) -> StepLatency:
    """An in-flight-batching iteration: one context chunk plus decode steps.

    Decoding requests sit mid-generation on average, so their KV length is
    taken at ``isl + osl/2``.
    """
    return get_step_latency(
        db, model, cfg, "mixed",
        n_ctx_tokens=chunk_tokens,
        n_gen_tokens=n_gen_tokens,
        seq_len=_gen_kv_len(isl, osl),
        moe_load=moe_load,
    )


def get_gen_latency(
    db: PerfDatabase,
    model: ModelSpec,
    cfg: ParallelConfig,
    n_gen_tokens: int,
    isl: int,
    osl: int,
    moe_load: PowerLawParams | None = None,
) -> StepLatency:
    """A pure decode iteration with every request mid-generation."""
    return get_step_latency(
        db, model, cfg, "decode",
        n_gen_tokens=n_gen_tokens,
        seq_len=_gen_kv_len(isl, osl),
        moe_load=moe_load,
    )


def clear_caches() -> None:
    """Drop memoized step latencies (tests and long-lived services)."""
    _step_latency_cached.cache_clear()
