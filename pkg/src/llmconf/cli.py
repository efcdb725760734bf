"""Command-line interface.

One subcommand per task: build or check latency databases, estimate a single
configuration, search the deployment space, turn the winner into a launch
plan, serve the HTTP API, or convert a saved report.

Machine-readable output (JSON, YAML, CSV) goes to stdout or ``-o``; logs go to
stderr. Exit codes: 0 success, 1 the inputs were valid but the task failed
(infeasible workload, failed validation), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Sequence

import yaml

from . import __version__
from .generator import emit_launch_plan, plan_from_entry
from .model import (
    BACKENDS,
    ModelSpec,
    ParallelConfig,
    check_consistency,
    grid_spec_for_model,
    load_model_spec,
    required_operator_kinds,
)
from .moe_load import PowerLawParams
from .perfdb import (
    EXTRAPOLATION_POLICIES,
    HardwareSpec,
    PerfDatabase,
    PerfDbError,
    generate_synthetic_db,
    load_db,
    load_hardware_spec,
    save_db,
    validate_db,
)
from .search import REPORT_SCHEMA, CandidateSpace, csv_from_doc, run_search
from .serving_modes import (
    SERVING_MODES,
    WorkloadSpec,
    estimate_aggregated,
    estimate_static,
)

log = logging.getLogger("llmconf")

ENV_DB = "LLMCONF_DB"
_DATA_DIR = Path(__file__).parent


class UsageError(Exception):
    """Bad argument combination that argparse alone cannot catch."""


# ---------------------------------------------------------------------------
# argument helpers

def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _str_list(text: str) -> tuple[str, ...]:
    values = tuple(tok.strip() for tok in text.split(",") if tok.strip())
    if not values:
        raise argparse.ArgumentTypeError("expected at least one name")
    return values


def _resolve_data(arg: str, subdir: str, loader: Callable[[Path], object]):
    """A user-supplied path, or the stem of a bundled data file."""
    path = Path(arg)
    if path.exists():
        return loader(path)
    bundled = _DATA_DIR / subdir / f"{arg}.json"
    if bundled.exists():
        return loader(bundled)
    names = ", ".join(sorted(p.stem for p in (_DATA_DIR / subdir).glob("*.json")))
    raise UsageError(f"{arg!r} is neither a file nor a bundled name (bundled: {names})")


def _load_model(arg: str) -> ModelSpec:
    return _resolve_data(arg, "models", load_model_spec)


def _load_hardware(arg: str) -> HardwareSpec:
    return _resolve_data(arg, "hardware", load_hardware_spec)


def _open_db(args: argparse.Namespace) -> PerfDatabase:
    if not args.db:
        raise UsageError(f"--db is required (or set ${ENV_DB})")
    return load_db(args.db, extrapolation=args.extrapolation)


def _emit(text: str, output: str | None) -> None:
    if output and output != "-":
        Path(output).write_text(text, encoding="utf-8")
        log.info("wrote %s (%d bytes)", output, len(text))
    else:
        sys.stdout.write(text)


def _workload_from_args(args: argparse.Namespace) -> WorkloadSpec:
    """Workload document from a file, ``--set`` overrides, then direct flags."""
    doc: dict = {}
    if getattr(args, "workload", None):
        with open(args.workload, encoding="utf-8") as f:
            loaded = yaml.safe_load(f)
        if not isinstance(loaded, dict):
            raise UsageError(f"{args.workload}: workload file must hold a mapping")
        doc = loaded
    for item in getattr(args, "set", None) or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects key=value, got {item!r}")
        doc[key] = yaml.safe_load(raw)
    for attr, name in (
        ("isl", "isl"),
        ("osl", "osl"),
        ("prefix_len", "prefix_len"),
        ("ttft_limit", "ttft_limit_ms"),
        ("tpot_limit", "tpot_limit_ms"),
        ("min_speed", "min_speed"),
        ("modes", "modes"),
        ("budgets", "gpu_budgets"),
        ("batches", "batch_sweep"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            doc[name] = list(value) if isinstance(value, tuple) else value
    if getattr(args, "moe_alpha", None) is not None:
        doc["moe_load"] = {"alpha": args.moe_alpha, "seed": args.moe_seed}
    if "isl" not in doc or "osl" not in doc:
        raise UsageError("isl and osl are required (flags or a --workload file)")
    return WorkloadSpec.from_doc(doc)


def _space_from_args(args: argparse.Namespace) -> CandidateSpace:
    kwargs: dict = {}
    for attr, name in (
        ("tp", "tp_values"), ("pp", "pp_values"), ("ep", "ep_values"), ("dp", "dp_values"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            kwargs[name] = value
    if args.ctx_capacity is not None:
        kwargs["ctx_capacity"] = args.ctx_capacity
    if args.no_chunked_prefill:
        kwargs["chunked_prefill"] = False
    if args.kv_mem_fraction is not None:
        kwargs["kv_mem_fraction"] = args.kv_mem_fraction
    return CandidateSpace(**kwargs)


# ---------------------------------------------------------------------------
# subcommands

def _cmd_dbgen(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    hw = _load_hardware(args.hardware)
    grids = grid_spec_for_model(
        model,
        tp_values=args.tp or (1, 2, 4, 8),
        pp_values=args.pp or (1, 2, 4),
        ep_values=args.ep,
        dp_values=args.dp or (1, 8),
    )
    db = generate_synthetic_db(
        hw, grids, seed=args.seed, backend=args.backend,
        efficiency_amplitude=args.amplitude,
    )
    save_db(db, args.output)
    log.info("wrote %d records (%d grids) to %s", len(db.records), len(grids), args.output)
    return 0


def _cmd_dbcheck(args: argparse.Namespace) -> int:
    db = _open_db(args)
    required: set[str] = set()
    if args.model:
        model = _load_model(args.model)
        # the widest cfg the deployment will use decides which kinds must exist
        ep = args.ep if args.ep is not None else (2 if model.moe else 1)
        probe = ParallelConfig(tp=args.tp, pp=args.pp, ep=ep)
        required = required_operator_kinds(model, probe)
    report = validate_db(db, required)
    for line in report.lines():
        print(line)
    if report.ok:
        print(f"ok: {len(db.records)} records, kinds: {', '.join(sorted(db.kinds()))}")
        return 0
    return 1


def _cmd_estimate(args: argparse.Namespace) -> int:
    db = _open_db(args)
    model = _load_model(args.model)
    workload = _workload_from_args(args)
    cfg = ParallelConfig(
        tp=args.tp, pp=args.pp, ep=args.ep, dp=args.dp, batch=args.batch,
        ctx_capacity=args.ctx_capacity,
        chunked_prefill=not args.no_chunked_prefill,
        kv_mem_fraction=args.kv_mem_fraction if args.kv_mem_fraction is not None else 0.9,
        backend=db.backend,
    )
    problems = check_consistency(model, cfg)
    if problems:
        for p in problems:
            log.error("%s", p)
        return 1
    estimate = {"static": estimate_static, "aggregated": estimate_aggregated}[args.mode]
    est = estimate(db, model, cfg, workload)
    doc = est.to_doc()
    doc["config"] = cfg.key()
    _emit(json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n", args.output)
    return 0


def _cmd_search(args: argparse.Namespace) -> int:
    db = _open_db(args)
    model = _load_model(args.model)
    workload = _workload_from_args(args)
    report = run_search(db, model, workload, _space_from_args(args), jobs=args.jobs)
    _emit(report.to_json(), args.output)
    if args.csv:
        Path(args.csv).write_text(csv_from_doc(report.to_doc()), encoding="utf-8")
        log.info("wrote %s", args.csv)
    doc = report.to_doc()
    log.info(
        "evaluated %d rows (%d on frontier) in %.1f ms, median %.3f ms/candidate; best: %s",
        len(report.rows), len(report.frontier),
        doc["timing"]["total_ms"], doc["timing"]["per_candidate_median_ms"],
        report.best.config_label if report.best else "none",
    )
    return 0 if report.best else 1


def _load_report_doc(path: str) -> dict:
    if path == "-":
        doc = json.load(sys.stdin)
    else:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    if not isinstance(doc, dict) or doc.get("schema") != REPORT_SCHEMA:
        raise UsageError(f"not a search report (schema {doc.get('schema')!r})"
                         if isinstance(doc, dict) else "not a search report")
    return doc


def _pick_entry(doc: dict, pick: int | None) -> dict | None:
    if pick is None:
        return doc.get("best")
    frontier = doc.get("frontier") or []
    if not 0 <= pick < len(frontier):
        raise UsageError(f"--pick {pick} is out of range (frontier has {len(frontier)} entries)")
    return frontier[pick]


def _cmd_generate(args: argparse.Namespace) -> int:
    if args.report:
        doc = _load_report_doc(args.report)
        model = _load_model(args.model or doc["model"])
        workload = WorkloadSpec.from_doc(doc["workload"])
    else:
        if not args.model:
            raise UsageError("--model is required unless generating from a --report")
        db = _open_db(args)
        model = _load_model(args.model)
        workload = _workload_from_args(args)
        report = run_search(db, model, workload, _space_from_args(args), jobs=args.jobs)
        doc = report.to_doc()
    entry = _pick_entry(doc, args.pick)
    if entry is None:
        log.error("no configuration meets the objectives")
        if doc.get("diagnostics"):
            log.error("nearest miss: %s", json.dumps(doc["diagnostics"], sort_keys=True))
        return 1
    # the same entry-document path the HTTP API uses, so the bytes agree
    plan = plan_from_entry(entry, model, workload, backend=args.backend)
    _emit(emit_launch_plan(plan), args.output)
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.config)
    uvicorn.run(app, host=args.bind, port=args.port, log_level="info")
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    doc = _load_report_doc(args.report)
    if args.format == "csv":
        _emit(csv_from_doc(doc), args.output)
    else:
        _emit(json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n", args.output)
    return 0


# ---------------------------------------------------------------------------
# parser assembly

def _add_db_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--db", default=os.environ.get(ENV_DB),
                   help=f"latency database path (default: ${ENV_DB})")
    p.add_argument("--extrapolation", choices=EXTRAPOLATION_POLICIES, default="default",
                   help="off-grid query policy")


def _add_workload_args(p: argparse.ArgumentParser, sla: bool = True) -> None:
    p.add_argument("--workload", metavar="PATH", help="workload YAML file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one workload field (repeatable)")
    p.add_argument("--isl", type=int, help="input sequence length")
    p.add_argument("--osl", type=int, help="output sequence length")
    p.add_argument("--prefix-len", type=int, help="cached prefix tokens")
    p.add_argument("--moe-alpha", type=float, help="expert-load imbalance exponent")
    p.add_argument("--moe-seed", type=int, default=0, help="expert-load draw seed")
    if sla:
        p.add_argument("--ttft-limit", type=float, help="max time-to-first-token, ms")
        group = p.add_mutually_exclusive_group()
        group.add_argument("--tpot-limit", type=float, help="max time per output token, ms")
        group.add_argument("--min-speed", type=float, help="min per-user tokens/s")


def _add_space_args(p: argparse.ArgumentParser, single: bool = False) -> None:
    if single:
        for name in ("tp", "pp", "ep", "dp"):
            p.add_argument(f"--{name}", type=int, default=1)
        p.add_argument("--batch", type=int, required=True)
    else:
        for name in ("tp", "pp", "ep", "dp"):
            p.add_argument(f"--{name}", type=_int_list, metavar="N,N,...",
                           help=f"{name} degrees to sweep")
        p.add_argument("--batches", type=_int_list, metavar="N,N,...", help="batch sizes to sweep")
        p.add_argument("--budgets", type=_int_list, metavar="N,N,...", help="allowed GPU totals")
        p.add_argument("--modes", type=_str_list, metavar="M,M,...",
                       help=f"serving modes (default: {','.join(SERVING_MODES)})")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="worker threads (default: all CPUs); results are identical for any value")
    p.add_argument("--ctx-capacity", type=int, help="context tokens per iteration")
    p.add_argument("--no-chunked-prefill", action="store_true")
    p.add_argument("--kv-mem-fraction", type=float, help="fraction of free memory for KV cache")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="llmconf",
        description="Estimate and optimize LLM serving deployments from operator latency databases.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("dbgen", help="generate a synthetic latency database")
    p.add_argument("--model", required=True, help="model JSON path or bundled name")
    p.add_argument("--hardware", required=True, help="hardware JSON path or bundled name")
    p.add_argument("--backend", choices=BACKENDS, default="trtllm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--amplitude", type=float, default=0.8,
                   help="efficiency variation; 0 pins every latency at 2x roofline")
    for name in ("tp", "pp", "ep", "dp"):
        p.add_argument(f"--{name}", type=_int_list, metavar="N,N,...",
                       help=f"{name} degrees the database must cover")
    p.add_argument("-o", "--out", "--output", dest="output", required=True,
                   help="database file to write")
    p.set_defaults(func=_cmd_dbgen)

    p = sub.add_parser("dbcheck", help="validate a database and report coverage gaps")
    _add_db_arg(p)
    p.add_argument("--model", help="require operator coverage for this model")
    p.add_argument("--tp", type=int, default=2, help="widest tensor parallelism to cover")
    p.add_argument("--pp", type=int, default=2, help="widest pipeline parallelism to cover")
    p.add_argument("--ep", type=int, help="widest expert parallelism (default: 2 when MoE)")
    p.set_defaults(func=_cmd_dbcheck)

    p = sub.add_parser("estimate", help="estimate one configuration")
    _add_db_arg(p)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("static", "aggregated"), default="aggregated")
    _add_workload_args(p, sla=False)
    _add_space_args(p, single=True)
    p.add_argument("-o", "--out", "--output", dest="output",
                   help="write JSON here instead of stdout")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("search", help="sweep deployments and report the Pareto frontier")
    _add_db_arg(p)
    p.add_argument("--model", required=True)
    _add_workload_args(p)
    _add_space_args(p)
    p.add_argument("--csv", help="also write every evaluated row as CSV")
    p.add_argument("-o", "--out", "--output", dest="output",
                   help="write the JSON report here instead of stdout")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("generate", help="emit a launch plan for a chosen frontier entry")
    _add_db_arg(p)
    p.add_argument("--model", help="model JSON path or bundled name (default: the report's)")
    p.add_argument("--backend", choices=BACKENDS, help="override the entry's backend")
    p.add_argument("--report", metavar="PATH", help="saved search report (- for stdin); "
                   "omit to search first")
    p.add_argument("--pick", type=int, metavar="N",
                   help="frontier index to generate for (default: the best entry)")
    _add_workload_args(p)
    _add_space_args(p)
    p.add_argument("-o", "--out", "--output", dest="output",
                   help="write YAML here instead of stdout")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--config", required=True, help="service configuration YAML")
    p.add_argument("--bind", "--host", dest="bind", default="127.0.0.1",
                   help="interface to listen on")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("export", help="convert a saved search report")
    p.add_argument("--report", required=True, help="report JSON path, or - for stdin")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("-o", "--out", "--output", dest="output", help="write here instead of stdout")
    p.set_defaults(func=_cmd_export)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except (PerfDbError, ValueError, OSError, RuntimeError) as e:
        log.error("%s: %s", type(e).__name__, e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
