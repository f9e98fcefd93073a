"""Operator CLI: run pipelines, evaluate, diff structures, export tables, serve.

Exit codes: 0 success, 1 validation problem, 2 transport/backend failure,
3 state conflict.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .errors import (
    AgentError,
    BackendConfigError,
    ContractError,
    DatasetError,
    QdaError,
    ReplayMissError,
    SchemaError,
    StateConflictError,
    StructureParseError,
    TransportError,
)
from .evaluate import diversity_csv, evaluate_run, metrics_csv, operations_csv
from .gateway import ModelConfig
from .model import parse
from .ops import diff as diff_structures, log_to_text
from .pipeline import PipelineRunner, RunConfig, SelectionPolicy, build_gateway, run_digest

EXIT_VALIDATION = 1
EXIT_BACKEND = 2
EXIT_CONFLICT = 3


def _exit_for(error: QdaError) -> int:
    if isinstance(error, StateConflictError):
        return EXIT_CONFLICT
    if isinstance(error, (TransportError, BackendConfigError, ReplayMissError, AgentError)):
        return EXIT_BACKEND
    return EXIT_VALIDATION


def _fail(error: QdaError) -> None:
    click.echo(f"error: {error}", err=True)
    sys.exit(_exit_for(error))


@click.group()
def main():
    """Hierarchical coding with peer-debriefing refinement."""


@main.command()
@click.option("--dataset", required=True, type=click.Path(exists=True), help="Dataset directory.")
@click.option("--run-dir", required=True, type=click.Path(), help="Run state directory.")
@click.option("--policy", default="interactive", show_default=True,
              help="interactive | fixed:<perspective> | keepall")
@click.option("--endpoint", default="http://localhost:8000/v1", show_default=True)
@click.option("--model", default="local-model", show_default=True)
@click.option("--temperature", default=0.0, show_default=True)
@click.option("--model-config", "model_config_path", type=click.Path(exists=True),
              help="JSON file with the full backend config (endpoint, model, "
                   "temperature, timeout, max_retries, credential_env, "
                   "requests_per_minute); overrides the individual flags.")
@click.option("--replay", "replay_cassette", type=click.Path(exists=True),
              help="Replay this cassette; no network.")
@click.option("--record", "record_cassette", type=click.Path(),
              help="Record live replies into this cassette.")
@click.option("--scripted", is_flag=True, help="Use the offline scripted backend.")
@click.option("--self-refine", is_flag=True, help="Also run the perspective-free refiner.")
@click.option("--workers", default=2, show_default=True)
@click.option("--attempts", default=3, show_default=True, help="Attempt budget per agent.")
def run(dataset, run_dir, policy, endpoint, model, temperature, model_config_path,
        replay_cassette, record_cassette, scripted, self_refine, workers, attempts):
    """Run (or resume) the three-stage pipeline over a dataset."""
    try:
        if replay_cassette and record_cassette:
            raise ContractError("choose either --replay or --record, not both")
        if model_config_path:
            backend_config = ModelConfig.from_json(
                json.loads(Path(model_config_path).read_text("utf-8"))
            )
        else:
            backend_config = ModelConfig(endpoint=endpoint, model=model, temperature=temperature)
        config = RunConfig(
            dataset=dataset,
            model=backend_config,
            policy=SelectionPolicy.parse(policy),
            include_self_refine=self_refine,
            workers=workers,
            attempt_budget=attempts,
            backend="scripted" if scripted else "http",
            cassette=replay_cassette or record_cassette,
            cassette_mode="replay" if replay_cassette else ("record" if record_cassette else None),
        )
        runner = PipelineRunner(run_dir, config, build_gateway(config))
        status = runner.run()
    except QdaError as e:
        _fail(e)
    click.echo(f"status: {status}")
    if status == "awaiting_selection":
        pointer = runner.manifest["awaiting"]
        click.echo(
            f"selection required: interview {pointer['interview']}, stage {pointer['stage']} "
            "(submit via the review UI or the HTTP API, then rerun)"
        )
    elif status == "failed":
        click.echo(f"failure: {runner.manifest['failure']}", err=True)
        sys.exit(EXIT_BACKEND)
    click.echo(f"artifacts: {run_dir}")
    click.echo(f"digest: {run_digest(run_dir)}")


@main.command(name="eval")
@click.option("--run-dir", required=True, type=click.Path(exists=True))
@click.option("--provider", default="hash", show_default=True,
              help='"hash", "hash:<dim>", or an embeddings endpoint URL.')
@click.option("--tau", default=0.7, show_default=True)
@click.option("--seeds", default="0,42,777,2026,99999", show_default=True)
@click.option("--embed-definitions", is_flag=True,
              help="Concatenate ground-truth definitions onto names for matching.")
def eval_cmd(run_dir, provider, tau, seeds, embed_definitions):
    """Compute metrics for a run and write report.json."""
    try:
        seed_list = [int(s) for s in seeds.split(",") if s.strip()]
        report = evaluate_run(
            run_dir,
            provider=provider,
            tau=tau,
            seeds=seed_list,
            embed_definitions=embed_definitions,
        )
    except QdaError as e:
        _fail(e)
    click.echo(f"report: {Path(run_dir) / 'report.json'}")
    for level, data in report["levels"].items():
        for condition, row in data["aggregate"].items():
            if row:
                click.echo(
                    f"{level:9s} {condition:11s} recall={row['recall']:.3f} "
                    f"match_rate={row['match_rate']:.3f} diversity={row['diversity_mean']:.3f} "
                    f"utilization={row['text_utilization']:.3f}"
                )


@main.command(name="diff")
@click.argument("before_file", type=click.Path(exists=True))
@click.argument("after_file", type=click.Path(exists=True))
def diff_cmd(before_file, after_file):
    """Infer the operation log between two structure JSON files."""
    try:
        before = parse(Path(before_file).read_text("utf-8")).structure
        after = parse(Path(after_file).read_text("utf-8")).structure
        log = diff_structures(before, after)
    except (StructureParseError, SchemaError, ContractError) as e:
        _fail(e)
    click.echo(log_to_text(log), nl=False)


@main.command()
@click.option("--run-dir", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), help="Directory for CSV tables (default: stdout).")
@click.option("--provider", default="hash", show_default=True)
@click.option("--tau", default=0.7, show_default=True)
def report(run_dir, out, provider, tau):
    """Export metric, diversity-robustness, and operation tables."""
    try:
        report_path = Path(run_dir) / "report.json"
        if report_path.exists():
            data = json.loads(report_path.read_text("utf-8"))
        else:
            data = evaluate_run(run_dir, provider=provider, tau=tau)
        tables: dict[str, str] = {}
        for level in data["levels"]:
            tables[f"metrics_{level}.csv"] = metrics_csv(data, level)
        tables["diversity_robustness.csv"] = diversity_csv(data)
        if data["operations"]:
            tables["operations.csv"] = operations_csv(data)
    except QdaError as e:
        _fail(e)
    if out:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, text in tables.items():
            (out_dir / name).write_text(text, "utf-8")
            click.echo(f"wrote {out_dir / name}")
    else:
        for name, text in tables.items():
            click.echo(f"# {name}")
            click.echo(text)


@main.command()
@click.option("--runs-root", required=True, type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8800, show_default=True)
@click.option("--token", default=None, help="Optional shared auth token (X-Auth-Token).")
def serve(runs_root, host, port, token):
    """Start the HTTP service (and the review UI when built)."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(runs_root, auth_token=token), host=host, port=port)


@main.command(name="import")
@click.argument("raw_dir", type=click.Path(exists=True))
@click.argument("out_dir", type=click.Path())
def import_cmd(raw_dir, out_dir):
    """Scaffold a dataset manifest from a directory of .txt transcripts."""
    from .corpus import scaffold

    try:
        path = scaffold(raw_dir, out_dir)
    except DatasetError as e:
        _fail(e)
    click.echo(f"wrote {path}")
    click.echo("fill in the research question and ground-truth stanzas before running")


if __name__ == "__main__":
    main()
