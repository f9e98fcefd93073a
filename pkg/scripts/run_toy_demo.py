"""Offline end-to-end demo: replay the toy dataset, evaluate, print tables.

No network, no credentials: agent replies come from the recorded cassette.
Usage: python scripts/run_toy_demo.py [run_dir]
"""

import sys
import tempfile
from pathlib import Path

from peerqda.evaluate import diversity_csv, evaluate_run, metrics_csv, operations_csv
from peerqda.gateway import Cassette, ChatGateway, ModelConfig
from peerqda.pipeline import PipelineRunner, RunConfig, SelectionPolicy, run_digest

ROOT = Path(__file__).parent.parent


def main() -> None:
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else None
    scratch = None
    if target is None:
        scratch = tempfile.TemporaryDirectory()
        target = Path(scratch.name) / "run"

    config = RunConfig(
        dataset=str(ROOT / "datasets" / "toy"),
        model=ModelConfig(model="scripted-qda"),
        policy=SelectionPolicy.parse("keepall"),
        include_self_refine=True,
        cassette=str(ROOT / "tests" / "fixtures" / "toy_cassette.json"),
        cassette_mode="replay",
    )
    gateway = ChatGateway(
        config.model, cassette=Cassette.load(config.cassette)
    )
    runner = PipelineRunner(target, config, gateway)
    status = runner.run()
    print(f"pipeline: {status} (live calls: {gateway.live_calls})")
    print(f"digest:   {run_digest(target)}")

    report = evaluate_run(target)
    for level in report["levels"]:
        print(f"\n== {level} level ==")
        print(metrics_csv(report, level), end="")
    print("\n== diversity robustness (code level) ==")
    print(diversity_csv(report), end="")
    print("\n== operation frequencies ==")
    print(operations_csv(report), end="")
    if scratch:
        scratch.cleanup()


if __name__ == "__main__":
    main()
