import json
import time
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from peerqda.pipeline import run_digest
from peerqda.service import create_app

DATASET = str(Path(__file__).parent.parent / "datasets" / "toy")
CASSETTE = str(Path(__file__).parent / "fixtures" / "toy_cassette.json")


def replay_body(policy="keepall", **kw):
    body = {
        "dataset": DATASET,
        "policy": policy,
        "model": {"model": "scripted-qda"},
        "cassette": CASSETTE,
        "cassette_mode": "replay",
        "include_self_refine": True,
    }
    body.update(kw)
    return body


@pytest.fixture()
def client(tmp_path):
    app = create_app(tmp_path / "runs")
    with TestClient(app) as c:
        c.runs_root = tmp_path / "runs"
        yield c


def wait_for_status(client, run_id, wanted, timeout=30.0):
    deadline = time.time() + timeout
    seq = 0
    while time.time() < deadline:
        response = client.get(f"/v1/runs/{run_id}/events", params={"since": seq, "timeout": 2})
        body = response.json()
        seq = body["next"]
        if body["status"] == wanted:
            return
    raise AssertionError(f"run {run_id} never reached {wanted}")


class TestRunLifecycle:
    def test_create_and_complete(self, client):
        response = client.post("/v1/runs", json=replay_body())
        assert response.status_code == 201
        run_id = response.json()["run_id"]
        wait_for_status(client, run_id, "complete")
        summary = client.get(f"/v1/runs/{run_id}").json()
        assert summary["status"] == "complete"
        assert set(summary["interviews"]) == {"i1", "i2", "i3"}

    def test_unknown_run_404(self, client):
        response = client.get("/v1/runs/nope")
        assert response.status_code == 404
        assert response.json()["kind"] == "not_found"

    def test_invalid_body_422(self, client):
        response = client.post("/v1/runs", json={"policy": "keepall"})
        assert response.status_code == 422
        assert response.json()["kind"] == "validation"

    def test_unknown_policy_422(self, client):
        response = client.post("/v1/runs", json=replay_body(policy="zealous"))
        assert response.status_code == 422

    def test_duplicate_run_id_conflicts(self, client):
        first = client.post("/v1/runs", json=replay_body(run_id="fixed-id"))
        assert first.status_code == 201
        wait_for_status(client, "fixed-id", "complete")
        second = client.post("/v1/runs", json=replay_body(run_id="fixed-id"))
        assert second.status_code == 409

    def test_stage_endpoint_serves_variants_and_logs(self, client):
        run_id = client.post("/v1/runs", json=replay_body()).json()["run_id"]
        wait_for_status(client, run_id, "complete")
        stage = client.get(f"/v1/runs/{run_id}/interviews/i1/stages/code").json()
        assert stage["initial"]["structure"]
        assert set(stage["refinements"]) == {"theory", "data", "applied", "selfrefine"}
        for body in stage["refinements"].values():
            assert body["operations"]["counts"]
        assert stage["selection"] == "initial"

    def test_report_endpoint(self, client):
        run_id = client.post("/v1/runs", json=replay_body()).json()["run_id"]
        wait_for_status(client, run_id, "complete")
        report = client.get(f"/v1/runs/{run_id}/report").json()
        assert report["levels"]["code"]["aggregate"]["initial"]["recall"] > 0


class TestSelectionLoop:
    def test_interactive_selection_cycle(self, client):
        run_id = client.post("/v1/runs", json=replay_body(policy="interactive")).json()["run_id"]
        wait_for_status(client, run_id, "awaiting_selection")
        summary = client.get(f"/v1/runs/{run_id}").json()
        assert summary["awaiting"] == {"interview": "i1", "stage": "code"}

        response = client.post(
            f"/v1/runs/{run_id}/interviews/i1/stages/code/selection",
            json={"perspective": "theory"},
        )
        assert response.status_code == 200
        wait_for_status(client, run_id, "awaiting_selection")
        summary = client.get(f"/v1/runs/{run_id}").json()
        assert summary["awaiting"] == {"interview": "i1", "stage": "subtheme"}
        assert summary["interviews"]["i1"]["stages"]["code"]["selection"] == "theory"

    def test_selection_conflict_second_client_409(self, client):
        run_id = client.post("/v1/runs", json=replay_body(policy="interactive")).json()["run_id"]
        wait_for_status(client, run_id, "awaiting_selection")
        url = f"/v1/runs/{run_id}/interviews/i1/stages/code/selection"
        first = client.post(url, json={"perspective": "data"})
        assert first.status_code == 200
        # a concurrent client that had the same stage open picks differently
        second = client.post(url, json={"perspective": "theory"})
        assert second.status_code == 409
        assert second.json()["kind"] == "conflict"
        # while repeating the accepted selection stays idempotent
        repeat = client.post(url, json={"perspective": "data"})
        assert repeat.status_code == 200

    def test_selection_on_completed_run_409(self, client):
        run_id = client.post("/v1/runs", json=replay_body()).json()["run_id"]
        wait_for_status(client, run_id, "complete")
        response = client.post(
            f"/v1/runs/{run_id}/interviews/i1/stages/code/selection",
            json={"perspective": "theory"},
        )
        assert response.status_code == 409

    def test_selection_of_failed_perspective_rejected(self, client):
        run_id = client.post("/v1/runs", json=replay_body(policy="interactive")).json()["run_id"]
        wait_for_status(client, run_id, "awaiting_selection")
        response = client.post(
            f"/v1/runs/{run_id}/interviews/i1/stages/code/selection",
            json={"perspective": "selfrefine"},
        )
        assert response.status_code == 422


class TestAuth:
    def test_token_gate(self, tmp_path):
        app = create_app(tmp_path / "runs", auth_token="sesame")
        with TestClient(app) as client:
            assert client.get("/v1/runs/x").status_code == 401
            assert (
                client.get("/v1/runs/x", headers={"X-Auth-Token": "sesame"}).status_code == 404
            )


class TestHttpCliEquivalence:
    def test_http_run_matches_cli_run(self, client, tmp_path):
        from click.testing import CliRunner

        from peerqda.cli import main

        run_id = client.post("/v1/runs", json=replay_body()).json()["run_id"]
        wait_for_status(client, run_id, "complete")
        http_report = client.get(f"/v1/runs/{run_id}/report").json()

        cli_dir = tmp_path / "cli-run"
        result = CliRunner().invoke(
            main,
            [
                "run",
                "--dataset", DATASET,
                "--run-dir", str(cli_dir),
                "--policy", "keepall",
                "--model", "scripted-qda",
                "--replay", CASSETTE,
                "--self-refine",
            ],
        )
        assert result.exit_code == 0, result.output
        assert run_digest(client.runs_root / run_id) == run_digest(cli_dir)

        from peerqda.evaluate import evaluate_run

        cli_report = evaluate_run(cli_dir)
        assert cli_report == http_report
