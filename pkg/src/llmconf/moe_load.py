"""Synthetic expert-load skew for mixture-of-experts latency estimates.

Balanced routing is the best case; real routers concentrate tokens on popular
experts. Expert popularity is drawn from a bounded power law, token counts are
apportioned exactly (largest-remainder), and the decisive quantity for latency
is the busiest expert-parallel rank, since every rank waits for the slowest.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

DEFAULT_ALPHA = 1.2
DEFAULT_X_MIN = 1.0
DEFAULT_X_MAX = 100.0


class MoELoadError(ValueError):
    """Invalid load-model parameters or infeasible token apportionment."""


@dataclass(frozen=True)
class PowerLawParams:
    """Bounded power-law popularity: density proportional to x^-alpha on [x_min, x_max].

    alpha = 0 degenerates to uniform popularity; alpha = 1 makes the inverse
    CDF singular and is rejected. Larger alpha concentrates mass near x_min,
    but the heaviest experts dominate token counts through the upper bound.
    """

    alpha: float = DEFAULT_ALPHA
    x_min: float = DEFAULT_X_MIN
    x_max: float = DEFAULT_X_MAX
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 2.0:
            raise MoELoadError(f"alpha={self.alpha} outside [0, 2]")
        if self.alpha == 1.0:
            raise MoELoadError("alpha=1 has a singular inverse CDF; use a nearby value")
        if not 0 < self.x_min < self.x_max:
            raise MoELoadError(f"need 0 < x_min < x_max, got [{self.x_min}, {self.x_max}]")


DEFAULT_MOE_LOAD = PowerLawParams()


@lru_cache(maxsize=4096)
def _cached_weights(params: PowerLawParams, num_experts: int) -> tuple[float, ...]:
    rng = np.random.default_rng(params.seed)
    u = rng.random(num_experts)
    e = 1.0 - params.alpha
    x = (u * (params.x_max**e - params.x_min**e) + params.x_min**e) ** (1.0 / e)
    return tuple(float(v) for v in x)


def sample_weights(params: PowerLawParams, num_experts: int) -> np.ndarray:
    """One popularity weight per expert via inverse-CDF sampling; seed-stable."""
    if num_experts < 1:
        raise MoELoadError("num_experts must be >= 1")
    return np.array(_cached_weights(params, num_experts))


def tokens_per_expert(weights: np.ndarray, total_tokens: int, topk: int) -> np.ndarray:
    """Integer token counts proportional to weight, summing to exactly total*topk.

    Each token picks ``topk`` distinct experts, so no expert can receive more
    than ``total_tokens``; overflow from very skewed weights spills to the
    next most popular experts.
    """
    weights = np.asarray(weights, dtype=float)
    num = len(weights)
    if total_tokens < 0 or topk < 1:
        raise MoELoadError("need total_tokens >= 0 and topk >= 1")
    if topk > num:
        raise MoELoadError(f"topk={topk} exceeds {num} experts")
    if np.any(weights <= 0):
        raise MoELoadError("weights must be positive")

    target = total_tokens * topk
    raw = weights / weights.sum() * target
    counts = np.floor(raw).astype(np.int64)
    frac = raw - counts
    # hand the remainder to the largest fractional parts, index-stable
    short = int(target - counts.sum())
    order = np.lexsort((np.arange(num), -frac))
    counts[order[:short]] += 1

    # enforce the per-expert ceiling, spilling by popularity
    over = counts - total_tokens
    surplus = int(over[over > 0].sum())
    if surplus:
        counts = np.minimum(counts, total_tokens)
        by_weight = np.lexsort((np.arange(num), -weights))
        for i in by_weight:
            if surplus == 0:
                break
            room = total_tokens - counts[i]
            take = min(room, surplus)
            counts[i] += take
            surplus -= take
    return counts


def build_assignment(counts: np.ndarray, topk: int) -> np.ndarray:
    """A 0/1 token-to-expert matrix with row sums topk and column sums counts.

    Tokens are assigned greedily to the experts with the largest remaining
    demand, which always meets exact column margins: at most ``topk`` experts
    can ever have demand equal to the remaining row count.
    """
    counts = np.asarray(counts, dtype=np.int64)
    target = int(counts.sum())
    if target % topk:
        raise MoELoadError(f"column sums {target} not divisible by topk={topk}")
    rows = target // topk
    if counts.max(initial=0) > rows:
        raise MoELoadError("an expert demands more tokens than exist")
    remaining = counts.copy()
    out = np.zeros((rows, len(counts)), dtype=np.int8)
    for t in range(rows):
        pick = np.lexsort((np.arange(len(counts)), -remaining))[:topk]
        out[t, pick] = 1
        remaining[pick] -= 1
    if remaining.any():
        raise MoELoadError("greedy assignment failed to meet margins")
    return out


def expert_shard_tokens(counts: np.ndarray, ep: int) -> np.ndarray:
    """Tokens landing on each expert-parallel rank (contiguous expert blocks)."""
    counts = np.asarray(counts, dtype=np.int64)
    if len(counts) % ep:
        raise MoELoadError(f"ep={ep} does not divide {len(counts)} experts")
    return counts.reshape(ep, -1).sum(axis=1)


def busiest_shard_tokens(
    params: PowerLawParams, num_experts: int, total_tokens: int, topk: int, ep: int
) -> int:
    """Expert tokens on the most loaded rank; the whole group waits for it."""
    weights = sample_weights(params, num_experts)
    counts = tokens_per_expert(weights, total_tokens, topk)
    return int(expert_shard_tokens(counts, ep).max())


def skew_factor(params: PowerLawParams, num_experts: int, total_tokens: int, topk: int) -> float:
    """Busiest single expert relative to the balanced share (1.0 = perfectly even)."""
    counts = tokens_per_expert(sample_weights(params, num_experts), total_tokens, topk)
    balanced = total_tokens * topk / num_experts
    return float(counts.max() / balanced) if balanced else 1.0
