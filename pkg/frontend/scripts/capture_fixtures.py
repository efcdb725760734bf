"""Regenerate the test fixtures from a real service instance.

Run from the repository root after installing the Python package:

    python3 frontend/scripts/capture_fixtures.py

Writes a search response and the launch plan for its best entry into
frontend/tests/fixtures/, so the UI tests assert against genuine API bytes.
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from llmconf.model import grid_spec_for_model, load_model_spec
from llmconf.perfdb import generate_synthetic_db, load_hardware_spec, save_db
from llmconf.service import create_app

FIXTURES = Path(__file__).parent.parent / "tests" / "fixtures"
DATA = Path(__file__).parents[2] / "src" / "llmconf"

WORKLOAD = {"isl": 512, "osl": 32, "ttft_limit_ms": 5000.0, "min_speed": 5.0}
SPACE = {"tp_values": [1, 2], "pp_values": [1], "dp_values": [1], "batch_values": [1, 8, 64]}


def main() -> None:
    model = load_model_spec(DATA / "models" / "qwen-small.json")
    hw = load_hardware_spec(DATA / "hardware" / "h100-sxm.json")
    grids = grid_spec_for_model(model, tp_values=(1, 2), pp_values=(1,), dp_values=(1,))
    db = generate_synthetic_db(hw, grids, seed=3)

    with tempfile.TemporaryDirectory() as tmp:
        db_path = Path(tmp) / "qwen.jsonl"
        save_db(db, db_path)
        client = TestClient(create_app({"databases": {"qwen-h100": str(db_path)}}))

        search = client.post("/api/v1/search", json={
            "db": "qwen-h100", "model": "qwen-small",
            "workload": WORKLOAD, "space": SPACE,
        })
        search.raise_for_status()
        report = search.json()

        generate = client.post("/api/v1/generate", json={
            "model": "qwen-small", "workload": WORKLOAD,
            "entry": report["best"], "backend": "trtllm",
        })
        generate.raise_for_status()

        unmeetable = client.post("/api/v1/search", json={
            "db": "qwen-h100", "model": "qwen-small",
            "workload": {**WORKLOAD, "min_speed": 1e9}, "space": SPACE,
        })
        assert unmeetable.status_code == 422

    FIXTURES.mkdir(parents=True, exist_ok=True)
    (FIXTURES / "search-response.json").write_text(search.text, encoding="utf-8")
    (FIXTURES / "launch.yaml").write_bytes(generate.content)
    (FIXTURES / "empty-response.json").write_text(unmeetable.text, encoding="utf-8")
    print(f"wrote {len(report['frontier'])} frontier entries and "
          f"{len(generate.content)} plan bytes to {FIXTURES}")


if __name__ == "__main__":
    main()
