"""Launch-plan generation: turn a chosen configuration into deployable YAML.

Every backend plan carries the same three runtime controls under their
canonical names (``enable_cuda_graph``, ``kv_cache_free_gpu_mem_fraction``,
``enable_chunked_context``) plus backend-specific capacity flags drawn from a
profile data file. Emission is canonical: parsing a plan and re-emitting it
reproduces the bytes exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from .model import ModelSpec, ParallelConfig, ParallelConfigError, check_consistency
from .serving_modes import (
    DEFAULT_DISAGG,
    DisaggPlan,
    PerfEstimate,
    PoolCandidate,
    WorkloadSpec,
    resolve_ctx_capacity,
)

PROFILE_DIR = Path(__file__).parent / "profiles"

POOL_ROLES = ("combined", "prefill", "decode")

# sources a profile's extra flags may draw from
_FLAG_SOURCES = ("batch", "ctx_capacity", "kv_mem_fraction", "tp", "pp", "ep", "dp")


class GeneratorError(ValueError):
    """Plan cannot be built, parsed, or validated."""


@dataclass(frozen=True)
class BackendProfile:
    """Launcher identity and flag spellings for one serving backend."""

    backend: str
    version: str
    launcher: str
    extra_flags: tuple[tuple[str, str], ...]  # (flag name, source field)

    @classmethod
    def load(cls, backend: str, profile_dir: Path | None = None) -> "BackendProfile":
        path = (profile_dir or PROFILE_DIR) / f"{backend}.yaml"
        if not path.exists():
            known = sorted(p.stem for p in (profile_dir or PROFILE_DIR).glob("*.yaml"))
            raise GeneratorError(f"no profile for backend {backend!r}; available: {known}")
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
        unknown = set(doc) - {"backend", "version", "launcher", "extra_flags"}
        if unknown:
            raise GeneratorError(f"{path}: unknown profile fields {sorted(unknown)}")
        extras = tuple((k, v) for k, v in (doc.get("extra_flags") or {}).items())
        for flag, source in extras:
            if source not in _FLAG_SOURCES:
                raise GeneratorError(f"{path}: flag {flag!r} draws from unknown source {source!r}")
        return cls(doc["backend"], str(doc["version"]), doc["launcher"], extras)


@dataclass(frozen=True)
class PoolSpec:
    """One homogeneous worker group in a deployment."""

    role: str
    replicas: int
    tp: int
    pp: int
    ep: int
    dp: int
    batch: int
    flags: tuple[tuple[str, object], ...]

    def __post_init__(self) -> None:
        if self.role not in POOL_ROLES:
            raise GeneratorError(f"pool role must be one of {POOL_ROLES}")
        if self.replicas < 1:
            raise GeneratorError("replicas must be >= 1")

    def gpus(self) -> int:
        return self.replicas * self.tp * self.pp * self.dp

    def label(self) -> str:
        return f"{self.replicas} x TP{self.tp}"


@dataclass(frozen=True)
class LaunchPlan:
    """A deployable description of one chosen configuration."""

    backend: str
    version: str
    launcher: str
    model: str
    predicted: tuple[tuple[str, object], ...]
    pools: tuple[PoolSpec, ...]

    def __post_init__(self) -> None:
        if not self.pools:
            raise GeneratorError("a launch plan needs at least one pool")

    def total_gpus(self) -> int:
        return sum(p.gpus() for p in self.pools)

    def summary(self) -> str:
        if len(self.pools) == 1:
            return self.pools[0].label()
        parts = [f"{p.role[0].upper()}: {p.label()}" for p in self.pools]
        return ", ".join(parts)


def _canonical_flags(
    cfg: ParallelConfig, workload: WorkloadSpec, profile: BackendProfile
) -> tuple[tuple[str, object], ...]:
    values: dict[str, object] = {
        "enable_cuda_graph": cfg.cuda_graph,
        "kv_cache_free_gpu_mem_fraction": cfg.kv_mem_fraction,
        "enable_chunked_context": cfg.chunked_prefill,
    }
    sources: dict[str, object] = {
        "batch": cfg.batch,
        "ctx_capacity": resolve_ctx_capacity(cfg, workload),
        "kv_mem_fraction": cfg.kv_mem_fraction,
        "tp": cfg.tp, "pp": cfg.pp, "ep": cfg.ep, "dp": cfg.dp,
    }
    for flag, source in profile.extra_flags:
        values[flag] = sources[source]
    return tuple(values.items())


def _pool_from_cfg(
    role: str, replicas: int, cfg: ParallelConfig,
    workload: WorkloadSpec, profile: BackendProfile,
) -> PoolSpec:
    return PoolSpec(
        role=role, replicas=replicas,
        tp=cfg.tp, pp=cfg.pp, ep=cfg.ep, dp=cfg.dp, batch=cfg.batch,
        flags=_canonical_flags(cfg, workload, profile),
    )


def _round6(x: float) -> float:
    return x if math.isinf(x) else float(f"{x:.6g}")


def build_launch_plan(
    detail: PerfEstimate | DisaggPlan,
    model: ModelSpec,
    workload: WorkloadSpec,
    backend: str | None = None,
    profile_dir: Path | None = None,
) -> LaunchPlan:
    """Launch plan for one estimate; disaggregated plans become two pools."""
    if isinstance(detail, PerfEstimate):
        backend = backend or detail.cfg.backend
        profile = BackendProfile.load(backend, profile_dir)
        pools = (_pool_from_cfg("combined", 1, detail.cfg, workload, profile),)
        mode = detail.mode
        gpus = detail.gpus
    elif isinstance(detail, DisaggPlan):
        backend = backend or detail.decode.cfg.backend
        profile = BackendProfile.load(backend, profile_dir)
        pools = (
            _pool_from_cfg("prefill", detail.x, detail.prefill.cfg, workload, profile),
            _pool_from_cfg("decode", detail.y, detail.decode.cfg, workload, profile),
        )
        mode = "disaggregated"
        gpus = detail.gpus
    else:
        raise GeneratorError(f"cannot build a plan from {type(detail).__name__}")

    predicted = (
        ("mode", mode),
        ("ttft_ms", _round6(detail.ttft_ms)),
        ("tpot_ms", _round6(detail.tpot_ms)),
        ("speed", "inf" if math.isinf(detail.speed) else _round6(detail.speed)),
        ("throughput_per_gpu", _round6(detail.throughput_per_gpu)),
        ("gpus", gpus),
    )
    return LaunchPlan(
        backend=profile.backend,
        version=profile.version,
        launcher=profile.launcher,
        model=model.name,
        predicted=predicted,
        pools=pools,
    )


# ---------------------------------------------------------------------------
# rebuilding a plan from an echoed report entry

_RUNTIME_KEYS = {"ctx_capacity", "chunked_prefill", "kv_mem_fraction", "cuda_graph", "backend"}


def _entry_number(entry, name: str) -> float:
    value = entry.get(name)
    if name == "speed" and value is None:
        return math.inf
    if not isinstance(value, (int, float)) or isinstance(value, bool) or value < 0:
        raise GeneratorError(f"entry field {name!r} must be a non-negative number, got {value!r}")
    return float(value)


def _cfg_from_entry(block, model: ModelSpec, where: str) -> ParallelConfig:
    parallel = block.get("parallel")
    if not isinstance(parallel, dict) or set(parallel) != {"tp", "pp", "ep", "dp"}:
        raise GeneratorError(f"{where}: parallel block must give exactly tp/pp/ep/dp")
    runtime = block.get("runtime") or {}
    unknown = set(runtime) - _RUNTIME_KEYS
    if unknown:
        raise GeneratorError(f"{where}: unknown runtime fields {sorted(unknown)}")
    batch = block.get("batch")
    if not isinstance(batch, int) or batch < 1:
        raise GeneratorError(f"{where}: batch must be a positive integer")
    try:
        cfg = ParallelConfig(batch=batch, **parallel, **runtime)
    except (ParallelConfigError, TypeError) as e:
        raise GeneratorError(f"{where}: {e}") from None
    problems = check_consistency(model, cfg)
    if problems:
        raise GeneratorError(f"{where}: " + "; ".join(problems))
    return cfg


def plan_from_entry(
    entry,
    model: ModelSpec,
    workload: WorkloadSpec,
    backend: str | None = None,
    profile_dir: Path | None = None,
) -> LaunchPlan:
    """Launch plan from a report row echoed back by a client.

    The entry is not trusted: topology must be consistent with the model, GPU
    totals must match the parallel degrees, and metric fields must be numbers.
    """
    if not isinstance(entry, dict):
        raise GeneratorError("entry must be a report row document")
    mode = entry.get("mode")
    named = entry.get("model")
    if named is not None and named != model.name:
        raise GeneratorError(f"entry is for model {named!r}, not {model.name!r}")
    ttft = _entry_number(entry, "ttft_ms")
    tpot = _entry_number(entry, "tpot_ms")
    speed = _entry_number(entry, "speed")
    thru = _entry_number(entry, "throughput_per_gpu")

    if mode in ("static", "aggregated"):
        cfg = _cfg_from_entry(entry, model, "entry")
        if entry.get("gpus") != cfg.gpus():
            raise GeneratorError(
                f"entry claims {entry.get('gpus')} gpus but the topology uses {cfg.gpus()}"
            )
        label = entry.get("config")
        if label is not None and label != cfg.key():
            raise GeneratorError(f"entry label {label!r} does not match topology {cfg.key()!r}")
        detail: PerfEstimate | DisaggPlan = PerfEstimate(
            mode, model.name, cfg, ttft, tpot, speed, thru, cfg.gpus(), cfg.batch,
        )
    elif mode == "disaggregated":
        for role in ("prefill", "decode"):
            if not isinstance(entry.get(role), dict):
                raise GeneratorError(f"disaggregated entry needs a {role} block")
        pcfg = _cfg_from_entry(entry["prefill"], model, "prefill")
        dcfg = _cfg_from_entry(entry["decode"], model, "decode")
        x, y = entry["prefill"].get("replicas"), entry["decode"].get("replicas")
        for n in (x, y):
            if not isinstance(n, int) or n < 1:
                raise GeneratorError("replica counts must be positive integers")
        gpus = x * pcfg.gpus() + y * dcfg.gpus()
        if entry.get("gpus") != gpus:
            raise GeneratorError(
                f"entry claims {entry.get('gpus')} gpus but the pools use {gpus}"
            )
        label = entry.get("config")
        expect = f"P:{x}x{pcfg.key()}|D:{y}x{dcfg.key()}"
        if label is not None and label != expect:
            raise GeneratorError(f"entry label {label!r} does not match topology {expect!r}")
        r_sys = _entry_number(entry, "r_sys")
        # pool rates are not recoverable from a report row; only the
        # latencies and topology reach the emitted plan
        prefill = PoolCandidate(
            "prefill", pcfg, ttft / DEFAULT_DISAGG.ttft_headroom, 0.0, pcfg.gpus()
        )
        decode = PoolCandidate("decode", dcfg, tpot, 0.0, dcfg.gpus())
        detail = DisaggPlan(prefill, decode, x, y, gpus, r_sys, ttft, tpot, speed, thru)
    else:
        raise GeneratorError(f"entry has unknown mode {mode!r}")
    return build_launch_plan(detail, model, workload, backend=backend, profile_dir=profile_dir)


# ---------------------------------------------------------------------------
# canonical emission

def _plan_doc(plan: LaunchPlan) -> dict:
    return {
        "backend": plan.backend,
        "version": plan.version,
        "launcher": plan.launcher,
        "model": plan.model,
        "predicted": dict(plan.predicted),
        "pools": [
            {
                "role": p.role,
                "replicas": p.replicas,
                "tp": p.tp,
                "pp": p.pp,
                "ep": p.ep,
                "dp": p.dp,
                "batch": p.batch,
                "flags": dict(p.flags),
            }
            for p in plan.pools
        ],
    }


def emit_launch_plan(plan: LaunchPlan) -> str:
    """Canonical YAML with a human summary header derived from the content."""
    pred = dict(plan.predicted)
    header = (
        f"# launch plan: {plan.model} on {plan.backend} {plan.version} ({plan.summary()})\n"
        f"# predicted: {pred['mode']}, ttft {pred['ttft_ms']} ms, tpot {pred['tpot_ms']} ms, "
        f"{pred['throughput_per_gpu']} tok/s/gpu on {pred['gpus']} gpus\n"
    )
    body = yaml.safe_dump(_plan_doc(plan), sort_keys=False, default_flow_style=False)
    return header + body


_PLAN_KEYS = {"backend", "version", "launcher", "model", "predicted", "pools"}
_POOL_KEYS = {"role", "replicas", "tp", "pp", "ep", "dp", "batch", "flags"}
_PREDICTED_KEYS = ("mode", "ttft_ms", "tpot_ms", "speed", "throughput_per_gpu", "gpus")
CANONICAL_FLAGS = (
    "enable_cuda_graph",
    "kv_cache_free_gpu_mem_fraction",
    "enable_chunked_context",
)


def parse_launch_plan(text: str) -> LaunchPlan:
    """Strict inverse of ``emit_launch_plan``; unknown or missing keys fail."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise GeneratorError(f"bad YAML: {e}") from None
    if not isinstance(doc, dict):
        raise GeneratorError("launch plan must be a mapping")
    if set(doc) != _PLAN_KEYS:
        raise GeneratorError(
            f"plan keys must be exactly {sorted(_PLAN_KEYS)}, got {sorted(doc)}"
        )
    pred_doc = doc["predicted"]
    if tuple(pred_doc) != _PREDICTED_KEYS:
        raise GeneratorError(f"predicted keys must be {_PREDICTED_KEYS} in order")
    pools = []
    for i, pdoc in enumerate(doc["pools"]):
        if set(pdoc) != _POOL_KEYS:
            raise GeneratorError(f"pool #{i} keys must be exactly {sorted(_POOL_KEYS)}")
        flags = pdoc["flags"]
        missing = [f for f in CANONICAL_FLAGS if f not in flags]
        if missing:
            raise GeneratorError(f"pool #{i} is missing required flags {missing}")
        pools.append(
            PoolSpec(
                role=pdoc["role"], replicas=pdoc["replicas"],
                tp=pdoc["tp"], pp=pdoc["pp"], ep=pdoc["ep"], dp=pdoc["dp"],
                batch=pdoc["batch"], flags=tuple(flags.items()),
            )
        )
    return LaunchPlan(
        backend=doc["backend"],
        version=doc["version"],
        launcher=doc["launcher"],
        model=doc["model"],
        predicted=tuple(pred_doc.items()),
        pools=tuple(pools),
    )
