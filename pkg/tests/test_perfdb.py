"""Latency database tests: interpolation oracles, rooflines, file format, synthesis."""

from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llmconf.perfdb import (
    DbParseError,
    DbValidationError,
    ExtrapolationError,
    GridAxes,
    HardwareSpec,
    MissingKeyError,
    OperatorQuery,
    OperatorRecord,
    PerfDatabase,
    UnsupportedOperatorError,
    generate_synthetic_db,
    load_db,
    query_latency,
    save_db,
    sol_estimate,
    validate_db,
)

HW = HardwareSpec(
    name="testgpu",
    gpu_memory=80 * 2**30,
    mem_bandwidth=3e12,
    compute_throughput={"fp16": 1e15, "fp8": 2e15},
    intra_node_bandwidth=400e9,
    inter_node_bandwidth=50e9,
    gpus_per_node=8,
)


def gemm_db(points: dict[int, float], n: int = 4096, k: int = 4096, **kwargs) -> PerfDatabase:
    records = [
        OperatorRecord(OperatorQuery("gemm", "fp16", {"m": m, "n": n, "k": k}), lat)
        for m, lat in points.items()
    ]
    return PerfDatabase.from_records(HW, "trtllm", "1.0", records, **kwargs)


def gemm_q(m: int, n: int = 4096, k: int = 4096) -> OperatorQuery:
    return OperatorQuery("gemm", "fp16", {"m": m, "n": n, "k": k})


class TestInterpolation:
    def test_exact_grid_point_returns_stored_value(self):
        db = gemm_db({16: 103.7, 64: 411.9})
        assert query_latency(db, gemm_q(16)) == 103.7
        assert query_latency(db, gemm_q(64)) == 411.9

    def test_log_midpoint_is_geometric_mean(self):
        # m=32 sits halfway between 16 and 64 in log space; with latencies
        # 100 and 400 the log-linear blend lands on sqrt(100*400) = 200.
        db = gemm_db({16: 100.0, 64: 400.0})
        assert query_latency(db, gemm_q(32)) == pytest.approx(200.0, rel=1e-12)

    def test_interpolation_is_cell_bounded(self):
        db = gemm_db({16: 100.0, 64: 400.0})
        for m in (17, 23, 40, 63):
            lat = query_latency(db, gemm_q(m))
            assert 100.0 <= lat <= 400.0

    def test_two_axis_interpolation(self):
        # attention grid 2x2 over (batch, seq_len); query the center point
        fixed = {"num_heads": 8, "kv_heads": 8, "head_dim": 64, "attn_kind": "MHA"}
        records = []
        lats = {(1, 128): 50.0, (1, 512): 200.0, (4, 128): 180.0, (4, 512): 720.0}
        for (b, s), lat in lats.items():
            q = OperatorQuery("attention_context", "fp16", {"batch": b, "seq_len": s, **fixed})
            records.append(OperatorRecord(q, lat))
        db = PerfDatabase.from_records(HW, "trtllm", "1.0", records)
        q = OperatorQuery("attention_context", "fp16", {"batch": 2, "seq_len": 256, **fixed})
        expected = math.exp(sum(0.25 * math.log(v) for v in lats.values()))
        assert query_latency(db, q) == pytest.approx(expected, rel=1e-12)
        # grid corners still exact
        q = OperatorQuery("attention_context", "fp16", {"batch": 4, "seq_len": 128, **fixed})
        assert query_latency(db, q) == 180.0

    def test_kv_len_is_not_a_grid_axis(self):
        fixed = {"num_heads": 8, "kv_heads": 8, "head_dim": 64, "attn_kind": "MHA"}
        q1 = OperatorQuery("attention_generation", "fp16", {"batch": 2, "seq_len": 128, **fixed})
        db = PerfDatabase.from_records(HW, "trtllm", "1.0", [OperatorRecord(q1, 42.0)])
        q2 = OperatorQuery(
            "attention_generation", "fp16", {"batch": 2, "seq_len": 128, "kv_len": 128, **fixed}
        )
        assert query_latency(db, q2) == 42.0

    @given(
        lats=st.lists(st.floats(1.0, 1e6), min_size=5, max_size=5),
        mq=st.integers(16, 256),
    )
    @settings(max_examples=300, deadline=None)
    def test_bounded_by_bracketing_grid_points(self, lats, mq):
        grid_ms = [16, 32, 64, 128, 256]
        db = gemm_db(dict(zip(grid_ms, lats)))
        lat = query_latency(db, gemm_q(mq))
        import bisect

        i = bisect.bisect_left(grid_ms, mq)
        if grid_ms[i] == mq:
            assert lat == lats[i]
        else:
            lo, hi = lats[i - 1], lats[i]
            assert min(lo, hi) * (1 - 1e-12) <= lat <= max(lo, hi) * (1 + 1e-12)

    @given(
        steps=st.lists(st.floats(0.0, 2.0), min_size=4, max_size=4),
        queries=st.lists(st.integers(16, 256), min_size=2, max_size=8),
    )
    @settings(max_examples=200, deadline=None)
    def test_monotone_grid_gives_monotone_interpolant(self, steps, queries):
        grid_ms = [16, 32, 64, 128, 256]
        lats, cur = [], 10.0
        for s in [0.0] + steps:
            cur *= 1.0 + s
            lats.append(cur)
        db = gemm_db(dict(zip(grid_ms, lats)))
        out = [query_latency(db, gemm_q(m)) for m in sorted(queries)]
        for a, b in zip(out, out[1:]):
            assert a <= b * (1 + 1e-12)


class TestExtrapolation:
    def test_strict_raises_outside_grid(self):
        db = gemm_db({16: 100.0, 64: 400.0}, extrapolation="strict")
        with pytest.raises(ExtrapolationError):
            query_latency(db, gemm_q(8))
        with pytest.raises(ExtrapolationError):
            query_latency(db, gemm_q(128))

    def test_clamp_uses_nearest_edge(self):
        db = gemm_db({16: 100.0, 64: 400.0})
        assert query_latency(db, gemm_q(8), policy="clamp") == 100.0
        assert query_latency(db, gemm_q(1024), policy="clamp") == 400.0

    def test_sol_policy_scales_roofline_by_edge_efficiency(self):
        db = gemm_db({16: 100.0, 64: 400.0})
        edge_eff = 400.0 / sol_estimate(gemm_q(64), HW)
        expected = sol_estimate(gemm_q(1024), HW) * edge_eff
        assert query_latency(db, gemm_q(1024), policy="sol") == pytest.approx(expected, rel=1e-12)

    def test_default_clamps_below_and_uses_sol_above(self):
        db = gemm_db({16: 100.0, 64: 400.0})
        assert query_latency(db, gemm_q(2)) == 100.0
        edge_eff = 400.0 / sol_estimate(gemm_q(64), HW)
        expected = sol_estimate(gemm_q(4096), HW) * edge_eff
        assert query_latency(db, gemm_q(4096)) == pytest.approx(expected, rel=1e-12)

    def test_missing_grid_reports_available_kinds(self):
        db = gemm_db({16: 100.0})
        q = OperatorQuery("embedding", "fp16", {"tokens": 4, "hidden": 64, "vocab": 1000})
        with pytest.raises(MissingKeyError, match="gemm"):
            query_latency(db, q)

    def test_backend_mismatch_rejected(self):
        db = gemm_db({16: 100.0})
        q = OperatorQuery("gemm", "fp16", {"m": 16, "n": 4096, "k": 4096}, backend="vllm")
        with pytest.raises(MissingKeyError, match="vllm"):
            query_latency(db, q)


class TestRoofline:
    def test_gemm_compute_bound(self):
        # 2*1024^3 FLOPs at 1e15 FLOP/s = 2.147483648 us; memory time is
        # 6291456 B / 3e12 = 2.097 us, so compute wins.
        lat = sol_estimate(OperatorQuery("gemm", "fp16", {"m": 1024, "n": 1024, "k": 1024}), HW)
        assert lat == pytest.approx(2.147483648, rel=1e-12)

    def test_gemm_memory_bound_small_m(self):
        # m=1: flops time = 2*1024*1024/1e15 = 2.1e-6 us; bytes = 2*(1024 +
        # 1024*1024 + 1024) = 2101248 B -> 0.700416 us, memory wins.
        lat = sol_estimate(OperatorQuery("gemm", "fp16", {"m": 1, "n": 1024, "k": 1024}), HW)
        assert lat == pytest.approx(2101248 / 3e12 * 1e6, rel=1e-12)

    def test_allreduce_ring_factor(self):
        q = OperatorQuery("allreduce", "fp16", {"message_bytes": 2**30, "participant_count": 8})
        expected = 2**30 * (2 * 7 / 8) / 400e9 * 1e6
        assert sol_estimate(q, HW) == pytest.approx(expected, rel=1e-12)

    def test_comm_switches_to_inter_node_link(self):
        qi = OperatorQuery("p2p", "fp16", {"message_bytes": 2**20, "participant_count": 2})
        qx = OperatorQuery("p2p", "fp16", {"message_bytes": 2**20, "participant_count": 16})
        assert sol_estimate(qi, HW) == pytest.approx(2**20 / 400e9 * 1e6, rel=1e-12)
        assert sol_estimate(qx, HW) == pytest.approx(2**20 / 50e9 * 1e6, rel=1e-12)

    def test_generation_attention_reads_kv_cache(self):
        q = OperatorQuery(
            "attention_generation",
            "fp16",
            {
                "batch": 4,
                "seq_len": 1,
                "kv_len": 2048,
                "num_heads": 8,
                "kv_heads": 8,
                "head_dim": 64,
                "attn_kind": "MHA",
            },
        )
        bytes_moved = 2 * 4 * 2048 * 2 * 8 * 64
        flops = 4 * 4 * 8 * 2048 * 64
        expected = max(flops / 1e15, bytes_moved / 3e12) * 1e6
        assert sol_estimate(q, HW) == pytest.approx(expected, rel=1e-12)

    def test_quant_without_compute_rate_rejected(self):
        q = OperatorQuery("gemm", "int4", {"m": 16, "n": 16, "k": 16})
        with pytest.raises(UnsupportedOperatorError):
            sol_estimate(q, HW)


class TestQueryValidation:
    def test_unknown_kind(self):
        with pytest.raises(DbParseError):
            OperatorQuery("conv2d", "fp16", {"m": 1, "n": 1, "k": 1})

    def test_missing_dim(self):
        with pytest.raises(DbParseError, match="missing"):
            OperatorQuery("gemm", "fp16", {"m": 1, "n": 1})

    def test_unexpected_dim(self):
        with pytest.raises(DbParseError, match="unexpected"):
            OperatorQuery("gemm", "fp16", {"m": 1, "n": 1, "k": 1, "batch": 2})

    def test_nonpositive_dim(self):
        with pytest.raises(DbParseError):
            OperatorQuery("gemm", "fp16", {"m": 0, "n": 1, "k": 1})

    def test_attention_requires_attn_kind(self):
        shape = {"batch": 1, "seq_len": 8, "num_heads": 4, "kv_heads": 4, "head_dim": 64}
        with pytest.raises(DbParseError, match="attn_kind"):
            OperatorQuery("attention_context", "fp16", shape)

    def test_participant_count_floor(self):
        with pytest.raises(DbParseError, match="participant_count"):
            OperatorQuery("allreduce", "fp16", {"message_bytes": 1024, "participant_count": 1})

    def test_nonpositive_latency_rejected(self):
        with pytest.raises(DbValidationError):
            OperatorRecord(gemm_q(16), 0.0)
        with pytest.raises(DbValidationError):
            OperatorRecord(gemm_q(16), -5.0)
        with pytest.raises(DbValidationError):
            OperatorRecord(gemm_q(16), float("nan"))

    def test_query_equality_ignores_dict_order(self):
        a = OperatorQuery("gemm", "fp16", {"m": 1, "n": 2, "k": 3})
        b = OperatorQuery("gemm", "fp16", {"k": 3, "m": 1, "n": 2})
        assert a == b and hash(a) == hash(b)


class TestGridValidation:
    def test_duplicate_coordinates_rejected(self):
        records = [OperatorRecord(gemm_q(16), 1.0), OperatorRecord(gemm_q(16), 2.0)]
        with pytest.raises(DbValidationError, match="duplicate"):
            PerfDatabase.from_records(HW, "trtllm", "1.0", records)

    def test_ragged_grid_rejected(self):
        fixed = {"num_heads": 8, "kv_heads": 8, "head_dim": 64, "attn_kind": "MHA"}
        records = [
            OperatorRecord(
                OperatorQuery("attention_context", "fp16", {"batch": b, "seq_len": s, **fixed}), 1.0
            )
            for b, s in [(1, 128), (1, 512), (4, 128)]
        ]
        with pytest.raises(DbValidationError, match="non-rectangular"):
            PerfDatabase.from_records(HW, "trtllm", "1.0", records)

    def test_validate_db_reports_missing_required_kinds(self):
        db = gemm_db({16: 100.0})
        report = validate_db(db, required_kinds=["gemm", "embedding"])
        assert not report.ok
        assert any("embedding" in g for g in report.gaps)
        assert validate_db(db, required_kinds=["gemm"]).ok


class TestFileFormat:
    def test_round_trip_preserves_records(self, tmp_path):
        db = gemm_db({16: 103.25, 64: 411.875, 256: 1609.5})
        path = tmp_path / "db.jsonl"
        save_db(db, path)
        loaded = load_db(path)
        assert loaded.backend == "trtllm"
        assert loaded.hardware == HW
        assert sorted(r.latency_us for r in loaded.records) == [103.25, 411.875, 1609.5]
        assert query_latency(loaded, gemm_q(16)) == 103.25

    def test_save_is_byte_deterministic(self, tmp_path):
        db = gemm_db({16: 100.0, 64: 400.0})
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_db(db, p1)
        save_db(load_db(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_unknown_record_field_rejected(self, tmp_path):
        db = gemm_db({16: 100.0})
        path = tmp_path / "db.jsonl"
        save_db(db, path)
        lines = path.read_text().splitlines()
        import json

        doc = json.loads(lines[1])
        doc["comment"] = "hand-tuned"
        path.write_text(lines[0] + "\n" + json.dumps(doc) + "\n")
        with pytest.raises(DbParseError, match="comment"):
            load_db(path)

    def test_unknown_header_field_rejected(self, tmp_path):
        db = gemm_db({16: 100.0})
        path = tmp_path / "db.jsonl"
        save_db(db, path)
        lines = path.read_text().splitlines()
        import json

        header = json.loads(lines[0])
        header["notes"] = "x"
        path.write_text(json.dumps(header) + "\n" + "\n".join(lines[1:]) + "\n")
        with pytest.raises(DbParseError, match="notes"):
            load_db(path)

    def test_bad_schema_rejected(self, tmp_path):
        path = tmp_path / "db.jsonl"
        path.write_text('{"schema":"other/9","hardware":{},"backend":"x","backend_version":"1"}\n')
        with pytest.raises(DbParseError, match="schema"):
            load_db(path)

    def test_parse_error_carries_line_number(self, tmp_path):
        db = gemm_db({16: 100.0})
        path = tmp_path / "db.jsonl"
        save_db(db, path)
        with open(path, "a") as f:
            f.write("{not json}\n")
        with pytest.raises(DbParseError, match=":3"):
            load_db(path)


SMALL_SPEC = [
    GridAxes(
        kind="gemm",
        quant="fp16",
        fixed=(("k", 4096), ("n", 4096)),
        axes=(("m", tuple(2**i for i in range(0, 13))),),
    ),
    GridAxes(
        kind="allreduce",
        quant="fp16",
        fixed=(("participant_count", 4),),
        axes=(("message_bytes", tuple(2**i for i in range(10, 28, 2))),),
    ),
]


class TestSyntheticGeneration:
    def test_same_seed_is_reproducible(self):
        a = generate_synthetic_db(HW, SMALL_SPEC, seed=7)
        b = generate_synthetic_db(HW, SMALL_SPEC, seed=7)
        assert a.records == b.records

    def test_different_seed_differs(self):
        a = generate_synthetic_db(HW, SMALL_SPEC, seed=7)
        b = generate_synthetic_db(HW, SMALL_SPEC, seed=8)
        assert a.records != b.records

    def test_efficiency_within_bounds(self):
        db = generate_synthetic_db(HW, SMALL_SPEC, seed=3)
        for rec in db.records:
            eff = rec.latency_us / sol_estimate(rec.query, HW)
            assert 1.0 <= eff <= 3.0

    def test_adjacent_grid_points_vary_smoothly(self):
        db = generate_synthetic_db(HW, SMALL_SPEC, seed=3)
        eff = {
            rec.query.coords(): rec.latency_us / sol_estimate(rec.query, HW)
            for rec in db.records
            if rec.query.kind == "gemm"
        }
        coords = sorted(eff)
        for a, b in zip(coords, coords[1:]):
            assert abs(eff[a] / eff[b] - 1.0) < 0.10

    def test_zero_amplitude_gives_constant_efficiency(self):
        db = generate_synthetic_db(HW, SMALL_SPEC, seed=3, efficiency_amplitude=0.0)
        for rec in db.records:
            assert rec.latency_us == pytest.approx(2.0 * sol_estimate(rec.query, HW), rel=1e-12)

    def test_provenance_marked_synthetic(self):
        db = generate_synthetic_db(HW, SMALL_SPEC, seed=3)
        assert all(r.provenance == "synthetic" for r in db.records)

    def test_saved_file_is_stable_across_runs(self, tmp_path):
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_db(generate_synthetic_db(HW, SMALL_SPEC, seed=11), p1)
        save_db(generate_synthetic_db(HW, SMALL_SPEC, seed=11), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_grid_axes_must_be_ascending(self):
        with pytest.raises(DbValidationError, match="ascending"):
            GridAxes("gemm", "fp16", (("k", 1), ("n", 1)), (("m", (4, 2)),))
