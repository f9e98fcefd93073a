"""Export real service responses as frontend test fixtures.

Drives a replay run to the first selection pause and snapshots the run
summary and the pending stage view exactly as the UI would receive them.
Rerun after regenerating the toy cassette.
"""

import json
from pathlib import Path

from fastapi.testclient import TestClient

from peerqda.service import create_app

ROOT = Path(__file__).parent.parent
OUT = ROOT / "frontend" / "test" / "fixtures"


def main() -> None:
    import tempfile

    with tempfile.TemporaryDirectory() as scratch:
        app = create_app(Path(scratch) / "runs")
        with TestClient(app) as client:
            run_id = client.post(
                "/v1/runs",
                json={
                    "dataset": str(ROOT / "datasets" / "toy"),
                    "policy": "interactive",
                    "model": {"model": "scripted-qda"},
                    "cassette": str(ROOT / "tests" / "fixtures" / "toy_cassette.json"),
                    "cassette_mode": "replay",
                    "include_self_refine": True,
                },
            ).json()["run_id"]
            seq = 0
            for _ in range(100):
                page = client.get(
                    f"/v1/runs/{run_id}/events", params={"since": seq, "timeout": 2}
                ).json()
                seq = page["next"]
                if page["status"] == "awaiting_selection":
                    break
            else:
                raise RuntimeError("run never paused for selection")
            summary = client.get(f"/v1/runs/{run_id}").json()
            pointer = summary["awaiting"]
            stage = client.get(
                f"/v1/runs/{run_id}/interviews/{pointer['interview']}/stages/{pointer['stage']}"
            ).json()
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "run_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    (OUT / "stage_view.json").write_text(json.dumps(stage, indent=2) + "\n")
    print(f"wrote fixtures to {OUT}")


if __name__ == "__main__":
    main()
