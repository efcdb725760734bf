"""Expert-load skew model tests: apportionment, margins, skew ordering."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llmconf.moe_load import (
    MoELoadError,
    PowerLawParams,
    build_assignment,
    busiest_shard_tokens,
    expert_shard_tokens,
    sample_weights,
    skew_factor,
    tokens_per_expert,
)


class TestSampling:
    def test_seed_reproducible(self):
        p = PowerLawParams(alpha=1.2, seed=42)
        assert np.array_equal(sample_weights(p, 64), sample_weights(p, 64))

    def test_seeds_differ(self):
        a = sample_weights(PowerLawParams(seed=1), 64)
        b = sample_weights(PowerLawParams(seed=2), 64)
        assert not np.array_equal(a, b)

    def test_weights_within_bounds(self):
        for alpha in (0.0, 0.5, 1.2, 2.0):
            p = PowerLawParams(alpha=alpha, x_min=1, x_max=100, seed=3)
            w = sample_weights(p, 512)
            assert np.all(w >= 1.0) and np.all(w <= 100.0)

    def test_alpha_zero_is_uniform(self):
        w = sample_weights(PowerLawParams(alpha=0.0, x_min=1, x_max=100, seed=0), 8192)
        assert abs(w.mean() - 50.5) < 2.0
        # quartiles of a uniform draw land near the theoretical ones
        q1, q3 = np.quantile(w, [0.25, 0.75])
        assert abs(q1 - 25.75) < 3.0 and abs(q3 - 75.25) < 3.0

    def test_alpha_one_rejected(self):
        with pytest.raises(MoELoadError, match="alpha=1"):
            PowerLawParams(alpha=1.0)

    def test_alpha_out_of_range_rejected(self):
        with pytest.raises(MoELoadError):
            PowerLawParams(alpha=2.5)
        with pytest.raises(MoELoadError):
            PowerLawParams(alpha=-0.1)

    def test_bad_bounds_rejected(self):
        with pytest.raises(MoELoadError):
            PowerLawParams(x_min=10, x_max=10)
        with pytest.raises(MoELoadError):
            PowerLawParams(x_min=0, x_max=10)


class TestApportionment:
    @given(
        seed=st.integers(0, 10_000),
        experts=st.sampled_from([8, 32, 64, 256]),
        tokens=st.integers(0, 5000),
        topk=st.sampled_from([1, 2, 4, 8]),
        alpha=st.sampled_from([0.0, 0.5, 1.2, 1.9]),
    )
    @settings(max_examples=200, deadline=None)
    def test_counts_sum_exactly(self, seed, experts, tokens, topk, alpha):
        w = sample_weights(PowerLawParams(alpha=alpha, seed=seed), experts)
        counts = tokens_per_expert(w, tokens, topk)
        assert counts.sum() == tokens * topk
        assert counts.min() >= 0
        assert counts.max() <= tokens

    def test_exact_proportions_need_no_correction(self):
        counts = tokens_per_expert(np.array([3.0, 1.0]), 4, 1)
        assert counts.tolist() == [3, 1]

    def test_remainder_goes_to_largest_fraction(self):
        # raw = [2.5, 1.25, 1.25]: floor [2,1,1], one left, 0.5 beats 0.25
        counts = tokens_per_expert(np.array([2.0, 1.0, 1.0]), 5, 1)
        assert counts.tolist() == [3, 1, 1]

    def test_ceiling_spills_to_next_expert(self):
        # one overwhelming expert cannot take more than every token once
        counts = tokens_per_expert(np.array([1e9, 1.0, 1.0]), 10, 2)
        assert counts.max() == 10
        assert counts.sum() == 20

    def test_topk_larger_than_experts_rejected(self):
        with pytest.raises(MoELoadError, match="topk"):
            tokens_per_expert(np.ones(4), 10, 5)


class TestAssignment:
    @given(
        seed=st.integers(0, 500),
        experts=st.sampled_from([4, 8, 16]),
        tokens=st.integers(1, 200),
        topk=st.sampled_from([1, 2, 4]),
    )
    @settings(max_examples=100, deadline=None)
    def test_margins_exact(self, seed, experts, tokens, topk):
        w = sample_weights(PowerLawParams(alpha=1.2, seed=seed), experts)
        counts = tokens_per_expert(w, tokens, topk)
        m = build_assignment(counts, topk)
        assert m.shape == (tokens, experts)
        assert np.all(m.sum(axis=1) == topk)
        assert np.array_equal(m.sum(axis=0), counts)
        assert set(np.unique(m)) <= {0, 1}

    def test_tight_corner_case(self):
        # every expert demands every token: only satisfiable as all-ones
        counts = np.array([5, 5, 5])
        m = build_assignment(counts, 3)
        assert np.all(m == 1)

    def test_infeasible_demand_rejected(self):
        # 3 tokens total but one expert demands 5
        with pytest.raises(MoELoadError, match="more tokens"):
            build_assignment(np.array([5, 1]), 2)

    def test_non_divisible_total_rejected(self):
        with pytest.raises(MoELoadError, match="divisible"):
            build_assignment(np.array([3, 2]), 2)


class TestShards:
    def test_contiguous_blocks(self):
        counts = np.array([5, 1, 2, 2, 10, 0, 3, 1])
        assert expert_shard_tokens(counts, 4).tolist() == [6, 4, 10, 4]
        assert expert_shard_tokens(counts, 1).tolist() == [24]

    def test_ep_must_divide_experts(self):
        with pytest.raises(MoELoadError):
            expert_shard_tokens(np.ones(6, dtype=int), 4)

    def test_busiest_shard_at_least_mean(self):
        p = PowerLawParams(alpha=1.5, seed=9)
        tail = busiest_shard_tokens(p, 32, 1024, 2, ep=8)
        assert tail >= 1024 * 2 / 8

    def test_uniform_alpha_gives_flatter_shards(self):
        flat = busiest_shard_tokens(PowerLawParams(alpha=0.0, seed=5), 64, 4096, 2, 8)
        skewed = busiest_shard_tokens(PowerLawParams(alpha=1.9, seed=5), 64, 4096, 2, 8)
        assert flat < skewed


class TestSkewOrdering:
    def test_skew_increases_with_alpha(self):
        alphas = [0.2, 0.8, 1.5]
        means = []
        for alpha in alphas:
            factors = [
                skew_factor(PowerLawParams(alpha=alpha, seed=s), 64, 2048, 2)
                for s in range(100)
            ]
            means.append(sum(factors) / len(factors))
        assert means[0] < means[1] < means[2]

    def test_skew_factor_floor(self):
        # never below balanced share
        for s in range(20):
            assert skew_factor(PowerLawParams(alpha=0.3, seed=s), 32, 512, 2) >= 1.0
