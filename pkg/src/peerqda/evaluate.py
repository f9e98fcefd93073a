"""Run evaluation: the four metrics per interview and condition, aggregated.

Which suites run is decided by the dataset's granularity flags: code-level
matching needs a codebook (per-interview code lists sharpen it); sub-theme
and theme matching need the hierarchy.  Matching is over name sets only;
pass embed_definitions=True to concatenate ground-truth definitions onto
names for sensitivity analysis.
"""

from __future__ import annotations

import json
from pathlib import Path

from .corpus import (
    GRANULARITY_PER_INTERVIEW,
    GRANULARITY_SUBTHEMES,
    GRANULARITY_THEMES,
    DatasetManifest,
    load as load_dataset,
)
from .errors import ContractError
from .metrics import (
    ROBUSTNESS_SEEDS,
    CachingProvider,
    EmbeddingProvider,
    MatchConfig,
    code_diversity,
    make_provider,
    match,
    text_utilization,
)
from .model import Level, label_sort_key
from .ops import COUNTED_KINDS, OperationLog, count_matrix
from .pipeline import CONDITIONS, RunConfig, result_from_file

_LEVEL_STAGE = {"code": Level.CODE, "subtheme": Level.SUBTHEME, "theme": Level.THEME}


def _load_body(run_dir: Path, iid: str, stage: str, condition: str) -> dict | None:
    path = run_dir / iid / stage / f"{condition}.json"
    if not path.exists():
        return None
    return json.loads(path.read_text("utf-8"))


def _generated_names(body: dict, iid: str) -> list[str]:
    result, _ = result_from_file(body, iid)
    s = result.structure
    return [s.roots[rid].name for rid in sorted(s.roots, key=label_sort_key)]


def _human_texts(dataset: DatasetManifest, level: str, iid: str, embed_definitions: bool):
    gt = dataset.ground_truth
    if level == "code":
        names = dataset.human_codes_for(iid)
        if embed_definitions:
            defs = {e.name: e.definition for e in gt.codebook}
            return [f"{n} {defs.get(n, '')}".strip() for n in names]
        return names
    if level == "subtheme":
        return list(gt.subthemes) if gt.subthemes else []
    return list(gt.themes) if gt.themes else []


def evaluate_run(
    run_dir: str | Path,
    dataset: DatasetManifest | None = None,
    provider: EmbeddingProvider | str = "hash",
    tau: float = 0.7,
    seeds=ROBUSTNESS_SEEDS,
    embed_definitions: bool = False,
    write: bool = True,
) -> dict:
    """Compute the evaluation report for a run directory."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ContractError(f"no manifest.json under {run_dir}")
    manifest = json.loads(manifest_path.read_text("utf-8"))
    config = RunConfig.from_json(manifest["config"])
    if dataset is None:
        dataset = load_dataset(config.dataset)
    if isinstance(provider, str):
        provider = make_provider(provider)
    provider = CachingProvider(provider, path=run_dir / "embeddings.cache.json")
    match_config = MatchConfig(provider=provider, tau=tau)
    conditions = [c for c in CONDITIONS if c == "initial" or c in
                  [p.value for p in config.perspectives()]]

    granularity = dataset.granularity()
    levels = ["code"]
    if GRANULARITY_SUBTHEMES in granularity:
        levels.append("subtheme")
    if GRANULARITY_THEMES in granularity:
        levels.append("theme")

    interview_ids = [interview.id for interview in dataset.interviews]
    report: dict = {
        "format": 1,
        "dataset": dataset.id,
        "tau": tau,
        "seeds": list(seeds),
        "provider": provider.tag,
        "embed_definitions": embed_definitions,
        "conditions": conditions,
        "levels": {},
        "operations": {},
    }

    for level in levels:
        stage = _LEVEL_STAGE[level]
        per_interview: dict = {}
        for iid in interview_ids:
            human = _human_texts(dataset, level, iid, embed_definitions)
            rows: dict = {}
            for condition in conditions:
                body = _load_body(run_dir, iid, stage.value, condition)
                if body is None or body.get("failed"):
                    rows[condition] = None
                    continue
                generated = _generated_names(body, iid)
                result, _ = result_from_file(body, iid)
                report_m = match(generated, human, match_config)
                per_seed = [code_diversity(generated, match_config, s) for s in seeds]
                utilization = text_utilization(result.structure, dataset.interview(iid).text)
                rows[condition] = {
                    "recall": report_m.recall,
                    "match_rate": report_m.match_rate,
                    "diversity_per_seed": per_seed,
                    "text_utilization": utilization.rate,
                }
            per_interview[iid] = rows

        aggregate_rows: dict = {}
        for condition in conditions:
            rows = [per_interview[iid][condition] for iid in interview_ids]
            rows = [r for r in rows if r is not None]
            if not rows:
                aggregate_rows[condition] = None
                continue
            n = len(rows)
            seed_means = [
                sum(r["diversity_per_seed"][k] for r in rows) / n for k in range(len(seeds))
            ]
            mean = sum(seed_means) / len(seed_means)
            std = (sum((v - mean) ** 2 for v in seed_means) / len(seed_means)) ** 0.5
            aggregate_rows[condition] = {
                "recall": sum(r["recall"] for r in rows) / n,
                "match_rate": sum(r["match_rate"] for r in rows) / n,
                "diversity_per_seed": seed_means,
                "diversity_mean": mean,
                "diversity_std": std,
                "text_utilization": sum(r["text_utilization"] for r in rows) / n,
                "interviews_counted": n,
            }
        human_source = (
            "per_interview_codes"
            if level == "code" and GRANULARITY_PER_INTERVIEW in granularity
            else "codebook" if level == "code" else level + "s"
        )
        report["levels"][level] = {
            "human_source": human_source,
            "per_interview": per_interview,
            "aggregate": aggregate_rows,
        }

    # Operation frequency means (structure-changing kinds, Keep excluded).
    for stage in ("code", "subtheme", "theme"):
        stage_ops: dict = {}
        for condition in conditions:
            if condition == "initial":
                continue
            logs = []
            for iid in interview_ids:
                body = _load_body(run_dir, iid, stage, condition)
                if body and not body.get("failed") and "operations" in body:
                    logs.append(OperationLog.from_json(body["operations"]))
            if logs:
                means = count_matrix(logs)
                stage_ops[condition] = {kind.value: means[kind] for kind in COUNTED_KINDS}
        if stage_ops:
            report["operations"][stage] = stage_ops

    provider.save()
    if write:
        (run_dir / "report.json").write_text(
            json.dumps(report, indent=2, ensure_ascii=False, sort_keys=True) + "\n", "utf-8"
        )
    return report


# -- table exports -------------------------------------------------------------


def metrics_csv(report: dict, level: str) -> str:
    """One row per condition: recall, match rate, diversity, utilization."""
    lines = ["condition,recall,match_rate,code_diversity,text_utilization"]
    aggregate = report["levels"][level]["aggregate"]
    for condition in report["conditions"]:
        row = aggregate.get(condition)
        if row is None:
            lines.append(f"{condition},,,,")
            continue
        lines.append(
            f"{condition},{row['recall']:.4f},{row['match_rate']:.4f},"
            f"{row['diversity_mean']:.4f},{row['text_utilization']:.4f}"
        )
    return "\n".join(lines) + "\n"


def diversity_csv(report: dict, level: str = "code") -> str:
    """Per-seed diversity with mean and std, one row per condition."""
    seeds = report["seeds"]
    lines = ["condition," + ",".join(f"seed_{s}" for s in seeds) + ",mean,std"]
    aggregate = report["levels"][level]["aggregate"]
    for condition in report["conditions"]:
        row = aggregate.get(condition)
        if row is None:
            continue
        values = ",".join(f"{v:.4f}" for v in row["diversity_per_seed"])
        lines.append(f"{condition},{values},{row['diversity_mean']:.4f},{row['diversity_std']:.4f}")
    return "\n".join(lines) + "\n"


def operations_csv(report: dict) -> str:
    """Mean operation counts per interview: rows stage/condition, columns kinds."""
    lines = ["stage/condition," + ",".join(kind.value for kind in COUNTED_KINDS)]
    for stage, conditions in report["operations"].items():
        for condition, means in conditions.items():
            values = ",".join(f"{means[kind.value]:.4f}" for kind in COUNTED_KINDS)
            lines.append(f"{stage}/{condition},{values}")
    return "\n".join(lines) + "\n"
