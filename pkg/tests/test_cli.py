"""End-to-end command-line tests via subprocess: exit codes, stream
separation, determinism across runs and job counts."""

from __future__ import annotations

import json
import os
import subprocess
import sys

import pytest

from llmconf.generator import parse_launch_plan, emit_launch_plan

CLI = [sys.executable, "-m", "llmconf.cli"]

SEARCH_ARGS = [
    "--model", "qwen-small", "--isl", "512", "--osl", "32",
    "--ttft-limit", "5000", "--min-speed", "5",
    "--tp", "1,2", "--pp", "1", "--dp", "1", "--batches", "1,8,64",
]


def run_cli(*args: str, env: dict | None = None) -> subprocess.CompletedProcess:
    full_env = dict(os.environ)
    full_env.pop("LLMCONF_DB", None)
    if env:
        full_env.update(env)
    return subprocess.run(
        CLI + list(args), capture_output=True, text=True, env=full_env, timeout=120,
    )


@pytest.fixture(scope="module")
def db_path(tmp_path_factory) -> str:
    path = str(tmp_path_factory.mktemp("db") / "qwen.jsonl")
    proc = run_cli(
        "dbgen", "--model", "qwen-small", "--hardware", "h100-sxm",
        "--seed", "3", "--tp", "1,2", "--pp", "1", "--dp", "1", "-o", path,
    )
    assert proc.returncode == 0, proc.stderr
    return path


class TestDbCommands:
    def test_dbgen_is_deterministic(self, db_path, tmp_path):
        again = tmp_path / "again.jsonl"
        proc = run_cli(
            "dbgen", "--model", "qwen-small", "--hardware", "h100-sxm",
            "--seed", "3", "--tp", "1,2", "--pp", "1", "--dp", "1", "-o", str(again),
        )
        assert proc.returncode == 0
        with open(db_path, "rb") as a, open(again, "rb") as b:
            assert a.read() == b.read()

    def test_dbcheck_passes_and_reports_kinds(self, db_path):
        proc = run_cli("dbcheck", "--db", db_path, "--model", "qwen-small", "--pp", "1")
        assert proc.returncode == 0
        assert proc.stdout.startswith("ok:")
        assert "gemm" in proc.stdout

    def test_dbcheck_probe_width_controls_requirements(self, db_path):
        # database was built for pp=1; a pp=2 deployment needs p2p grids
        proc = run_cli("dbcheck", "--db", db_path, "--model", "qwen-small", "--pp", "2")
        assert proc.returncode == 1
        assert "p2p" in proc.stdout

    def test_dbcheck_rejects_corrupt_file(self, db_path, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text(open(db_path).read() + "{not json\n")
        proc = run_cli("dbcheck", "--db", str(bad))
        assert proc.returncode == 1
        assert proc.stdout == ""
        assert "bad JSON" in proc.stderr

    def test_dbcheck_flags_missing_coverage(self, db_path):
        # the MoE model needs moe_gemm grids this dense database lacks
        proc = run_cli("dbcheck", "--db", db_path, "--model", "moe-small")
        assert proc.returncode == 1
        assert "moe_gemm" in proc.stdout


class TestEstimate:
    def test_json_document_on_stdout(self, db_path):
        proc = run_cli(
            "estimate", "--db", db_path, "--model", "qwen-small",
            "--isl", "512", "--osl", "32", "--batch", "8", "--tp", "2",
        )
        assert proc.returncode == 0, proc.stderr
        doc = json.loads(proc.stdout)
        assert doc["config"] == "tp2pp1ep1dp1b8"
        assert doc["mode"] == "aggregated"
        assert doc["ttft_ms"] > 0 and doc["tpot_ms"] > 0

    def test_single_token_output_reports_zero_tpot(self, db_path):
        proc = run_cli(
            "estimate", "--db", db_path, "--model", "qwen-small",
            "--isl", "512", "--osl", "1", "--batch", "4",
        )
        assert proc.returncode == 0, proc.stderr
        doc = json.loads(proc.stdout)
        assert doc["tpot_ms"] == 0.0
        assert doc["speed"] is None  # unbounded, not representable in JSON

    def test_inconsistent_parallelism_fails_clean(self, db_path):
        proc = run_cli(
            "estimate", "--db", db_path, "--model", "qwen-small",
            "--isl", "512", "--osl", "32", "--batch", "1", "--tp", "3",
        )
        assert proc.returncode == 1
        assert proc.stdout == ""
        assert "num_heads" in proc.stderr


class TestSearch:
    def test_report_on_stdout_logs_on_stderr(self, db_path):
        proc = run_cli("search", "--db", db_path, *SEARCH_ARGS)
        assert proc.returncode == 0, proc.stderr
        doc = json.loads(proc.stdout)  # stdout must be pure JSON
        assert doc["schema"] == "llmconf-report/1"
        assert doc["best"] is not None
        assert doc["counts"]["evaluated"] == len(doc["rows"])
        assert proc.stderr  # progress went to stderr

    def test_env_var_supplies_database(self, db_path):
        proc = run_cli("search", *SEARCH_ARGS, env={"LLMCONF_DB": db_path})
        assert proc.returncode == 0, proc.stderr

    def test_jobs_do_not_change_report(self, db_path):
        one = run_cli("search", "--db", db_path, *SEARCH_ARGS, "--jobs", "1")
        four = run_cli("search", "--db", db_path, *SEARCH_ARGS, "--jobs", "4")
        a, b = json.loads(one.stdout), json.loads(four.stdout)
        a.pop("timing"), b.pop("timing")
        assert a == b

    def test_unmeetable_objective_exits_one_with_diagnostics(self, db_path):
        proc = run_cli(
            "search", "--db", db_path, "--model", "qwen-small",
            "--isl", "512", "--osl", "32", "--min-speed", "1e9",
            "--tp", "1", "--pp", "1", "--dp", "1", "--batches", "1",
        )
        assert proc.returncode == 1
        doc = json.loads(proc.stdout)  # report still emitted for inspection
        assert doc["best"] is None
        assert doc["diagnostics"]["violation_factor"] > 1

    def test_csv_export_matches_saved_report(self, db_path, tmp_path):
        report = tmp_path / "r.json"
        csv_out = tmp_path / "r.csv"
        proc = run_cli(
            "search", "--db", db_path, *SEARCH_ARGS,
            "-o", str(report), "--csv", str(csv_out),
        )
        assert proc.returncode == 0
        exported = run_cli("export", "--report", str(report), "--format", "csv")
        assert exported.returncode == 0
        assert exported.stdout == csv_out.read_text()
        header, first = exported.stdout.splitlines()[:2]
        assert header.startswith("mode,config,gpus,batch")
        assert first.count(",") == header.count(",")

    def test_workload_file_with_set_overrides(self, db_path, tmp_path):
        wfile = tmp_path / "w.yaml"
        wfile.write_text(
            "isl: 512\nosl: 32\nttft_limit_ms: 5000\nmin_speed: 5\n"
            "modes: [static, aggregated]\n"
        )
        out = tmp_path / "report.json"
        proc = run_cli(
            "search", "--db", db_path, "--model", "qwen-small",
            "--workload", str(wfile), "--set", "osl=64",
            "--tp", "1,2", "--pp", "1", "--dp", "1", "--batches", "1,8,64",
            "--out", str(out),
        )
        assert proc.returncode == 0, proc.stderr
        doc = json.loads(out.read_text())
        assert doc["workload"]["osl"] == 64  # --set wins over the file
        assert doc["frontier"]

    def test_missing_sequence_lengths_is_usage_error(self, db_path):
        proc = run_cli("search", "--db", db_path, "--model", "qwen-small")
        assert proc.returncode == 2
        assert "isl" in proc.stderr


class TestGenerate:
    def test_yaml_round_trips(self, db_path):
        proc = run_cli("generate", "--db", db_path, *SEARCH_ARGS, "--backend", "sglang")
        assert proc.returncode == 0, proc.stderr
        plan = parse_launch_plan(proc.stdout)
        assert plan.backend == "sglang"
        assert emit_launch_plan(plan) == proc.stdout

    def test_no_feasible_deployment_is_failure(self, db_path):
        proc = run_cli(
            "generate", "--db", db_path, "--model", "qwen-small",
            "--isl", "512", "--osl", "32", "--min-speed", "1e9",
            "--tp", "1", "--pp", "1", "--dp", "1", "--batches", "1",
        )
        assert proc.returncode == 1
        assert proc.stdout == ""
        assert "no configuration" in proc.stderr

    def test_generate_from_saved_report_picks_frontier_entries(self, db_path, tmp_path):
        report = tmp_path / "r.json"
        assert run_cli("search", "--db", db_path, *SEARCH_ARGS,
                       "-o", str(report)).returncode == 0
        doc = json.loads(report.read_text())

        best = run_cli("generate", "--report", str(report))
        assert best.returncode == 0, best.stderr
        fresh = run_cli("generate", "--db", db_path, *SEARCH_ARGS)
        assert best.stdout == fresh.stdout  # same entry, same bytes

        picked = run_cli("generate", "--report", str(report), "--pick",
                         str(len(doc["frontier"]) - 1))
        assert picked.returncode == 0
        assert parse_launch_plan(picked.stdout).total_gpus() == doc["frontier"][-1]["gpus"]

    def test_pick_out_of_range_is_usage_error(self, db_path, tmp_path):
        report = tmp_path / "r.json"
        run_cli("search", "--db", db_path, *SEARCH_ARGS, "-o", str(report))
        proc = run_cli("generate", "--report", str(report), "--pick", "999")
        assert proc.returncode == 2
        assert "out of range" in proc.stderr


class TestUsageErrors:
    def test_missing_database_is_usage_error(self):
        proc = run_cli("dbcheck")
        assert proc.returncode == 2

    def test_conflicting_sla_flags(self, db_path):
        proc = run_cli(
            "search", "--db", db_path, "--model", "qwen-small",
            "--isl", "1", "--osl", "1", "--tpot-limit", "5", "--min-speed", "10",
        )
        assert proc.returncode == 2

    def test_unknown_bundled_name_lists_options(self, db_path):
        proc = run_cli(
            "estimate", "--db", db_path, "--model", "nope",
            "--isl", "8", "--osl", "8", "--batch", "1",
        )
        assert proc.returncode == 2
        assert "qwen-small" in proc.stderr

    def test_bad_int_list(self, db_path):
        proc = run_cli("search", "--db", db_path, "--model", "qwen-small",
                       "--isl", "8", "--osl", "8", "--tp", "1,x")
        assert proc.returncode == 2
