"""Model descriptions and their decomposition into per-iteration operator plans.

A transformer under a ``ParallelConfig`` is lowered to an ``IterationPlan``:
the multiset of operator queries one pipeline stage executes per forward pass,
with repeat counts. Latency estimation sums database lookups over this plan;
memory fitting uses the matching sharded weight and KV-cache footprints.

The expert-parallel sharding model: experts divide across ``ep`` ranks; when
``tp`` exceeds ``ep`` the expert FFN dim divides across the remaining ``tp/ep``
ranks, and when ``ep`` exceeds ``tp`` the expert-parallel group pools tokens
from ``ep/tp`` data-parallel replicas. Per-rank expert weights therefore
divide by ``max(ep, tp)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Mapping, Sequence

from .perfdb import (
    QUANT_BYTES,
    QUANT_FORMATS,
    GridAxes,
    HardwareSpec,
    OperatorQuery,
)

PHASES = ("prefill", "decode", "mixed")
ATTENTION_VARIANTS = ("MHA", "GQA", "MLA")
BACKENDS = ("trtllm", "vllm", "sglang", "dynamo")

MLA_KV_DIM = 576  # compressed latent (512) plus decoupled rope dims (64)
ACTIVATION_OVERHEAD_FRACTION = 0.05  # scratch, CUDA context, fragmentation


class ModelConfigError(ValueError):
    """Model description is internally inconsistent."""


class ParallelConfigError(ValueError):
    """Parallel mapping is incompatible with the model."""


@dataclass(frozen=True)
class MoESpec:
    """Mixture-of-experts block: routed experts plus an optional shared expert."""

    num_experts: int
    topk: int
    expert_intermediate: int
    shared_intermediate: int = 0

    def __post_init__(self) -> None:
        if self.num_experts < 2:
            raise ModelConfigError("num_experts must be >= 2")
        if not 1 <= self.topk <= self.num_experts:
            raise ModelConfigError("topk must be in [1, num_experts]")
        if self.expert_intermediate < 1:
            raise ModelConfigError("expert_intermediate must be >= 1")
        if self.shared_intermediate < 0:
            raise ModelConfigError("shared_intermediate must be >= 0")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture and quantization of one servable model."""

    name: str
    num_layers: int
    hidden_size: int
    num_heads: int
    kv_heads: int
    head_dim: int
    intermediate_size: int
    vocab_size: int
    attn_kind: str = "GQA"
    moe: MoESpec | None = None
    weight_quant: str = "fp16"
    kv_quant: str = "fp16"
    param_count: int | None = None
    mla_kv_dim: int = MLA_KV_DIM

    def __post_init__(self) -> None:
        for attr in ("num_layers", "hidden_size", "num_heads", "kv_heads", "head_dim", "vocab_size"):
            if getattr(self, attr) < 1:
                raise ModelConfigError(f"{attr} must be >= 1")
        if self.intermediate_size < 0:
            raise ModelConfigError("intermediate_size must be >= 0")
        if self.attn_kind not in ATTENTION_VARIANTS:
            raise ModelConfigError(f"attn_kind must be one of {ATTENTION_VARIANTS}")
        if self.kv_heads > self.num_heads or self.num_heads % self.kv_heads:
            raise ModelConfigError("kv_heads must divide num_heads")
        if self.weight_quant not in QUANT_FORMATS or self.kv_quant not in QUANT_FORMATS:
            raise ModelConfigError(f"quant formats must be from {QUANT_FORMATS}")
        if self.moe is None and self.intermediate_size < 1:
            raise ModelConfigError("dense models need intermediate_size >= 1")
        if self.param_count is not None and self.param_count < 1:
            raise ModelConfigError("param_count must be positive")

    def params(self) -> int:
        """Declared parameter count, or an analytical estimate from the shapes."""
        if self.param_count is not None:
            return self.param_count
        h, hd = self.hidden_size, self.head_dim
        if self.attn_kind == "MLA":
            attn = h * self.num_heads * hd + 2 * h * self.mla_kv_dim + self.num_heads * hd * h
        else:
            attn = h * hd * (2 * self.num_heads + 2 * self.kv_heads)
        if self.moe is None:
            ffn = 3 * h * self.intermediate_size
        else:
            ffn = h * self.moe.num_experts + self.expert_params() // self.num_layers
            if self.moe.shared_intermediate:
                ffn += 3 * h * self.moe.shared_intermediate
        return 2 * self.vocab_size * h + self.num_layers * (attn + ffn)

    def expert_params(self) -> int:
        """Routed-expert weights across all layers (0 for dense models)."""
        if self.moe is None:
            return 0
        return self.num_layers * self.moe.num_experts * 3 * self.hidden_size * self.moe.expert_intermediate

    def to_doc(self) -> dict:
        doc = {
            "name": self.name,
            "num_layers": self.num_layers,
            "hidden_size": self.hidden_size,
            "num_heads": self.num_heads,
            "kv_heads": self.kv_heads,
            "head_dim": self.head_dim,
            "intermediate_size": self.intermediate_size,
            "vocab_size": self.vocab_size,
            "attn_kind": self.attn_kind,
            "weight_quant": self.weight_quant,
            "kv_quant": self.kv_quant,
        }
        if self.moe is not None:
            doc["moe"] = {
                "num_experts": self.moe.num_experts,
                "topk": self.moe.topk,
                "expert_intermediate": self.moe.expert_intermediate,
                "shared_intermediate": self.moe.shared_intermediate,
            }
        if self.param_count is not None:
            doc["param_count"] = self.param_count
        if self.attn_kind == "MLA" and self.mla_kv_dim != MLA_KV_DIM:
            doc["mla_kv_dim"] = self.mla_kv_dim
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping) -> "ModelSpec":
        known = {
            "name", "num_layers", "hidden_size", "num_heads", "kv_heads", "head_dim",
            "intermediate_size", "vocab_size", "attn_kind", "moe", "weight_quant",
            "kv_quant", "param_count", "mla_kv_dim",
        }
        unknown = set(doc) - known
        if unknown:
            raise ModelConfigError(f"unknown model fields: {sorted(unknown)}")
        moe = None
        if doc.get("moe") is not None:
            moe = MoESpec(**doc["moe"])
        kwargs = {k: v for k, v in doc.items() if k != "moe"}
        return cls(moe=moe, **kwargs)


def load_model_spec(path: str | Path) -> ModelSpec:
    with open(path, encoding="utf-8") as f:
        return ModelSpec.from_doc(json.load(f))


@dataclass(frozen=True)
class ParallelConfig:
    """One deployment mapping: parallelism degrees plus runtime knobs."""

    tp: int = 1
    pp: int = 1
    ep: int = 1
    dp: int = 1
    batch: int = 1
    ctx_capacity: int | None = None  # chunked-prefill token budget per iteration
    chunked_prefill: bool = True
    kv_mem_fraction: float = 0.9
    cuda_graph: bool = True
    backend: str = "trtllm"

    def __post_init__(self) -> None:
        for attr in ("tp", "pp", "ep", "dp", "batch"):
            if getattr(self, attr) < 1:
                raise ParallelConfigError(f"{attr} must be >= 1")
        if self.ctx_capacity is not None and self.ctx_capacity < 1:
            raise ParallelConfigError("ctx_capacity must be >= 1 when set")
        if not 0.0 < self.kv_mem_fraction <= 1.0:
            raise ParallelConfigError("kv_mem_fraction must be in (0, 1]")
        if self.backend not in BACKENDS:
            raise ParallelConfigError(f"backend must be one of {BACKENDS}")

    def gpus(self) -> int:
        return self.tp * self.pp * self.dp

    def key(self) -> str:
        return f"tp{self.tp}pp{self.pp}ep{self.ep}dp{self.dp}b{self.batch}"


def check_consistency(model: ModelSpec, cfg: ParallelConfig) -> list[str]:
    """All reasons this (model, config) pair cannot run; empty means valid."""
    problems = []
    if model.num_heads % cfg.tp:
        problems.append(f"tp={cfg.tp} does not divide num_heads={model.num_heads}")
    if cfg.pp > model.num_layers:
        problems.append(f"pp={cfg.pp} exceeds num_layers={model.num_layers}")
    if model.moe is None:
        if cfg.ep != 1:
            problems.append("ep > 1 requires a mixture-of-experts model")
        if cfg.tp <= model.intermediate_size and model.intermediate_size % cfg.tp:
            problems.append(f"tp={cfg.tp} does not divide intermediate_size={model.intermediate_size}")
    else:
        moe = model.moe
        if moe.num_experts % cfg.ep:
            problems.append(f"ep={cfg.ep} does not divide num_experts={moe.num_experts}")
        if cfg.ep > cfg.tp * cfg.dp:
            problems.append(f"ep={cfg.ep} exceeds tp*dp={cfg.tp * cfg.dp}")
        hi, lo = max(cfg.ep, cfg.tp), min(cfg.ep, cfg.tp)
        if hi % lo:
            problems.append(f"ep={cfg.ep} and tp={cfg.tp} must nest (one divides the other)")
        elif cfg.tp > cfg.ep and moe.expert_intermediate % (cfg.tp // cfg.ep):
            problems.append(
                f"tp/ep={cfg.tp // cfg.ep} does not divide expert_intermediate={moe.expert_intermediate}"
            )
        if moe.shared_intermediate and cfg.tp <= moe.shared_intermediate and moe.shared_intermediate % cfg.tp:
            problems.append(f"tp={cfg.tp} does not divide shared_intermediate={moe.shared_intermediate}")
    return problems


@dataclass(frozen=True)
class PlanEntry:
    """One operator in the per-stage iteration, executed ``repeat`` times."""

    query: OperatorQuery
    repeat: int
    label: str


@dataclass(frozen=True)
class IterationPlan:
    """Operators one pipeline stage runs for a single forward pass."""

    phase: str
    entries: tuple[PlanEntry, ...]
    layers_per_stage: int

    def total_queries(self) -> int:
        return sum(e.repeat for e in self.entries)

    def labels(self) -> list[str]:
        return [e.label for e in self.entries]


def _attn_shard(model: ModelSpec, tp: int) -> tuple[int, int, int]:
    """(num_heads, kv_heads, head_dim) as seen by one tensor-parallel rank."""
    heads = model.num_heads // tp
    if model.attn_kind == "MLA":
        return heads, 1, model.mla_kv_dim
    return heads, max(1, model.kv_heads // tp), model.head_dim


def decompose(
    model: ModelSpec,
    cfg: ParallelConfig,
    phase: str,
    n_ctx_tokens: int = 0,
    n_gen_tokens: int = 0,
    seq_len: int = 1,
) -> IterationPlan:
    """Lower one forward pass to operator queries for a single pipeline stage.

    ``n_ctx_tokens`` is the total context tokens processed this pass,
    ``n_gen_tokens`` the number of sequences taking one generation step, and
    ``seq_len`` the per-sequence context length (prefill) or current KV length
    (decode and the generation half of mixed passes).
    """
    if phase not in PHASES:
        raise ParallelConfigError(f"phase must be one of {PHASES}")
    problems = check_consistency(model, cfg)
    if problems:
        raise ParallelConfigError("; ".join(problems))
    if phase == "prefill" and (n_ctx_tokens < 1 or n_gen_tokens):
        raise ParallelConfigError("prefill pass needs n_ctx_tokens >= 1 and no generation tokens")
    if phase == "decode" and (n_gen_tokens < 1 or n_ctx_tokens):
        raise ParallelConfigError("decode pass needs n_gen_tokens >= 1 and no context tokens")
    if phase == "mixed" and (n_ctx_tokens < 1 or n_gen_tokens < 0):
        raise ParallelConfigError("mixed pass needs n_ctx_tokens >= 1")
    if seq_len < 1:
        raise ParallelConfigError("seq_len must be >= 1")
    if phase == "prefill" and n_ctx_tokens % seq_len:
        raise ParallelConfigError(f"n_ctx_tokens={n_ctx_tokens} not a multiple of seq_len={seq_len}")

    tokens = n_ctx_tokens + n_gen_tokens
    h = model.hidden_size
    heads, kvh, hd = _attn_shard(model, cfg.tp)
    wq, kq = model.weight_quant, model.kv_quant
    layers = math.ceil(model.num_layers / cfg.pp)
    entries: list[PlanEntry] = []

    def gemm(label: str, m: int, n: int, k: int, repeat: int = 1) -> None:
        q = OperatorQuery("gemm", wq, {"m": m, "n": n, "k": k})
        entries.append(PlanEntry(q, repeat, label))

    entries.append(
        PlanEntry(
            OperatorQuery("embedding", wq, {"tokens": tokens, "hidden": h, "vocab": model.vocab_size}),
            1,
            "embedding",
        )
    )

    if model.attn_kind == "MLA":
        qkv_n = heads * model.head_dim + model.mla_kv_dim
    else:
        qkv_n = (heads + 2 * kvh) * model.head_dim
    gemm("qkv_proj", tokens, qkv_n, h, repeat=layers)

    if n_ctx_tokens:
        # a mixed pass fuses the chunk into one variable-length context call
        ctx_batch = 1 if phase == "mixed" else n_ctx_tokens // seq_len
        ctx_seq = n_ctx_tokens if phase == "mixed" else seq_len
        q = OperatorQuery(
            "attention_context",
            kq,
            {
                "batch": ctx_batch,
                "seq_len": ctx_seq,
                "num_heads": heads,
                "kv_heads": kvh,
                "head_dim": hd,
                "attn_kind": model.attn_kind,
            },
        )
        entries.append(PlanEntry(q, layers, "context_attention"))
    if n_gen_tokens:
        q = OperatorQuery(
            "attention_generation",
            kq,
            {
                "batch": n_gen_tokens,
                "seq_len": seq_len,
                "num_heads": heads,
                "kv_heads": kvh,
                "head_dim": hd,
                "attn_kind": model.attn_kind,
            },
        )
        entries.append(PlanEntry(q, layers, "generation_attention"))

    gemm("attn_out_proj", tokens, h, heads * model.head_dim, repeat=layers)

    if model.moe is None:
        inter = max(1, model.intermediate_size // cfg.tp)
        gemm("mlp_up", tokens, 2 * inter, h, repeat=layers)
        gemm("mlp_down", tokens, h, inter, repeat=layers)
    else:
        moe = model.moe
        gemm("moe_router", tokens, moe.num_experts, h, repeat=layers)
        if moe.shared_intermediate:
            shared = max(1, moe.shared_intermediate // cfg.tp)
            gemm("shared_expert_up", tokens, 2 * shared, h, repeat=layers)
            gemm("shared_expert_down", tokens, h, shared, repeat=layers)
        pooled = tokens * max(1, cfg.ep // cfg.tp)  # ep group spans ep/tp dp replicas
        expert_tokens = math.ceil(pooled * moe.topk / cfg.ep)
        inter = moe.expert_intermediate // max(1, cfg.tp // cfg.ep)
        moe_shape = {
            "tokens": expert_tokens,
            "experts": moe.num_experts // cfg.ep,
            "topk": moe.topk,
            "hidden": h,
            "intermediate": inter,
        }
        entries.append(PlanEntry(OperatorQuery("moe_gemm", wq, moe_shape), layers, "expert_ffn"))
        if cfg.ep > 1:
            xfer = {
                "tokens": tokens,
                "experts": moe.num_experts,
                "topk": moe.topk,
                "hidden": h,
                "intermediate": moe.expert_intermediate,
            }
            entries.append(PlanEntry(OperatorQuery("moe_dispatch", "fp16", xfer), layers, "expert_dispatch"))
            entries.append(PlanEntry(OperatorQuery("moe_combine", "fp16", xfer), layers, "expert_combine"))

    if cfg.tp > 1:
        msg = {"message_bytes": tokens * h * 2, "participant_count": cfg.tp}
        q = OperatorQuery("allreduce", "fp16", msg)
        entries.append(PlanEntry(q, layers, "attn_allreduce"))
        entries.append(PlanEntry(q, layers, "mlp_allreduce"))

    if cfg.pp > 1:
        q = OperatorQuery(
            "p2p", "fp16", {"message_bytes": tokens * h * 2, "participant_count": 2}
        )
        entries.append(PlanEntry(q, cfg.pp - 1, "stage_boundary"))

    return IterationPlan(phase, tuple(entries), layers)


def required_operator_kinds(model: ModelSpec, cfg: ParallelConfig | None = None) -> set[str]:
    """Operator kinds a database must cover to estimate this model."""
    kinds = {"gemm", "embedding", "attention_context", "attention_generation"}
    if cfg is None:
        cfg = ParallelConfig()
    if cfg.tp > 1:
        kinds.add("allreduce")
    if cfg.pp > 1:
        kinds.add("p2p")
    if model.moe is not None:
        kinds.add("moe_gemm")
        if cfg.ep > 1:
            kinds.update({"moe_dispatch", "moe_combine"})
    return kinds


# ---------------------------------------------------------------------------
# memory

@dataclass(frozen=True)
class MemoryFootprint:
    """Per-GPU byte budget for one configuration."""

    weight_bytes: float
    kv_bytes_per_token: float
    activation_bytes: float

    def total_static(self) -> float:
        return self.weight_bytes + self.activation_bytes


def memory_footprint(model: ModelSpec, cfg: ParallelConfig) -> MemoryFootprint:
    """Sharded per-GPU weights, per-token KV cache, and activation reserve."""
    bw = QUANT_BYTES[model.weight_quant]
    bkv = QUANT_BYTES[model.kv_quant]
    expert = model.expert_params()
    dense = max(0, model.params() - expert)
    weight = bw * (dense / cfg.tp + expert / max(cfg.ep, cfg.tp)) / cfg.pp

    layers = math.ceil(model.num_layers / cfg.pp)
    if model.attn_kind == "MLA":
        kv_token = layers * model.mla_kv_dim * bkv
    else:
        kv_token = 2 * layers * max(1, model.kv_heads // cfg.tp) * model.head_dim * bkv

    live_tokens = max(cfg.batch, cfg.ctx_capacity or 2048)
    activation = 4 * live_tokens * model.hidden_size * 2
    return MemoryFootprint(weight, kv_token, activation)


def fits_memory(
    model: ModelSpec,
    cfg: ParallelConfig,
    hw: HardwareSpec,
    workload=None,
) -> bool:
    """Whether weights, activations, and the workload's KV cache fit one GPU.

    ``workload`` needs ``isl`` and ``osl`` attributes; without it only the
    static footprint is checked. Boundary cases count as fitting.
    """
    fp = memory_footprint(model, cfg)
    overhead = ACTIVATION_OVERHEAD_FRACTION * hw.gpu_memory + fp.activation_bytes
    static = fp.weight_bytes + overhead
    if static > hw.gpu_memory:
        return False
    if workload is None:
        return True
    kv_budget = cfg.kv_mem_fraction * (hw.gpu_memory - static)
    kv_need = fp.kv_bytes_per_token * cfg.batch * (workload.isl + workload.osl)
    return kv_need <= kv_budget


# ---------------------------------------------------------------------------
# grid synthesis support

def _pow2(lo: int, hi: int, step: int = 1) -> tuple[int, ...]:
    return tuple(2**i for i in range(lo, hi + 1, step))

DEFAULT_AXES: dict[str, tuple[tuple[str, tuple[int, ...]], ...]] = {
    "gemm": (("m", _pow2(0, 15)),),
    "attention_context": (("batch", _pow2(0, 6)), ("seq_len", _pow2(5, 14))),
    "attention_generation": (("batch", _pow2(0, 10)), ("seq_len", _pow2(4, 17))),
    "allreduce": (("message_bytes", _pow2(12, 30, 2)),),
    "allgather": (("message_bytes", _pow2(12, 30, 2)),),
    "alltoall": (("message_bytes", _pow2(12, 30, 2)),),
    "p2p": (("message_bytes", _pow2(12, 30, 2)),),
    "moe_dispatch": (("tokens", _pow2(0, 15)),),
    "moe_combine": (("tokens", _pow2(0, 15)),),
    "moe_gemm": (("tokens", _pow2(0, 15)),),
    "embedding": (("tokens", _pow2(0, 15, 3)),),
}

_HARVEST_PASSES = (
    ("prefill", 1024, 0, 1024),
    ("decode", 0, 2, 1024),
    ("mixed", 1024, 2, 1024),
)


def grid_spec_for_model(
    model: ModelSpec,
    tp_values: Sequence[int] = (1, 2, 4, 8),
    pp_values: Sequence[int] = (1, 2, 4),
    ep_values: Sequence[int] | None = None,
    dp_values: Sequence[int] = (1, 8),
    axes: Mapping[str, tuple] | None = None,
) -> list[GridAxes]:
    """Every latency grid a database needs to serve this model's plans.

    Sweeps the candidate parallel mappings, harvests the distinct grid keys
    their plans touch, and attaches the default (or supplied) axis ranges.
    """
    if ep_values is None:
        ep_values = (1,) if model.moe is None else (1, 2, 4, 8)
    axis_table = dict(DEFAULT_AXES)
    if axes:
        axis_table.update(axes)

    keys: dict[tuple, OperatorQuery] = {}
    for tp, pp, ep, dp in product(tp_values, pp_values, ep_values, dp_values):
        try:
            cfg = ParallelConfig(tp=tp, pp=pp, ep=ep, dp=dp)
        except ParallelConfigError:
            continue
        if check_consistency(model, cfg):
            continue
        for phase, n_ctx, n_gen, seq in _HARVEST_PASSES:
            plan = decompose(model, cfg, phase, n_ctx, n_gen, seq)
            for entry in plan.entries:
                keys.setdefault(entry.query.grid_key(), entry.query)

    specs = []
    for key in sorted(keys, key=repr):
        kind, quant, fixed = key
        specs.append(GridAxes(kind=kind, quant=quant, fixed=fixed, axes=axis_table[kind]))
    return specs
