"""Per-interview orchestration: coding agent, parallel debriefers, selection.

Every agent result is persisted to its own JSON file the moment it exists,
so a killed run resumes from disk without repeating completed work.  The
manifest tracks stage states and the selection pointer; in replay mode the
whole run directory is byte-deterministic (timestamps live only in the
manifest and are excluded from the digest).

Stage N's debriefers refine the stage-N coding result; the human (or
policy) selection is carried forward only as stage N+1's input.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .agents import AgentResult, AgentTask, run_agent
from .corpus import DatasetManifest, load as load_dataset
from .errors import AgentError, ContractError, StateConflictError
from .gateway import ChatGateway, ModelConfig
from .model import (
    DEBRIEF_PERSPECTIVES,
    CodingStructure,
    Level,
    Perspective,
    parse,
    serialize,
    verify_verbatim,
)
from .ops import OperationLog, diff

STAGES = (Level.CODE, Level.SUBTHEME, Level.THEME)

#: File stems for persisted results, keyed by manifest condition name.
CONDITIONS = ("initial", "theory", "data", "applied", "selfrefine")

_PERSPECTIVE_BY_NAME = {
    "theory": Perspective.THEORY,
    "data": Perspective.DATA,
    "applied": Perspective.APPLIED,
    "selfrefine": Perspective.SELF_REFINE,
}


@dataclass(frozen=True)
class SelectionPolicy:
    """interactive (human picks), fixed:<perspective>, or keepall.

    keepall evaluates every variant and continues the pipeline from the
    initial structure.
    """

    kind: str
    perspective: Perspective | None = None

    @classmethod
    def parse(cls, text: str) -> "SelectionPolicy":
        if text == "interactive":
            return cls(kind="interactive")
        if text == "keepall":
            return cls(kind="keepall")
        if text.startswith("fixed:"):
            name = text.split(":", 1)[1]
            if name == "initial":
                return cls(kind="fixed", perspective=Perspective.NONE)
            if name not in _PERSPECTIVE_BY_NAME:
                raise ContractError(f"unknown perspective in policy: {name!r}")
            return cls(kind="fixed", perspective=_PERSPECTIVE_BY_NAME[name])
        raise ContractError(f"unknown policy: {text!r}")

    def __str__(self) -> str:
        if self.kind == "fixed":
            return f"fixed:{self.perspective.value}"
        return self.kind


@dataclass
class RunConfig:
    dataset: str
    model: ModelConfig = field(default_factory=ModelConfig)
    policy: SelectionPolicy = field(default_factory=lambda: SelectionPolicy.parse("interactive"))
    include_self_refine: bool = False
    number_of_codes: str = "5 and 15"
    clustering_style: str = "Descriptive labels grounded in the interview text"
    coding_style: str = "Descriptive sub-theme names grounded in the codes"
    conceptualizing_style: str = "Concise high-level themes tied to the research question"
    attempt_budget: int = 3
    workers: int = 2
    allow_self_refine_selection: bool = False
    backend: str = "http"  # http | scripted (offline demo backend)
    cassette: str | None = None
    cassette_mode: str | None = None  # replay | record

    def perspectives(self) -> tuple[Perspective, ...]:
        if self.include_self_refine:
            return DEBRIEF_PERSPECTIVES + (Perspective.SELF_REFINE,)
        return DEBRIEF_PERSPECTIVES

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "model": self.model.to_json(),
            "policy": str(self.policy),
            "include_self_refine": self.include_self_refine,
            "number_of_codes": self.number_of_codes,
            "clustering_style": self.clustering_style,
            "coding_style": self.coding_style,
            "conceptualizing_style": self.conceptualizing_style,
            "attempt_budget": self.attempt_budget,
            "workers": self.workers,
            "allow_self_refine_selection": self.allow_self_refine_selection,
            "backend": self.backend,
            "cassette": self.cassette,
            "cassette_mode": self.cassette_mode,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        return cls(
            dataset=obj["dataset"],
            model=ModelConfig.from_json(obj["model"]),
            policy=SelectionPolicy.parse(obj["policy"]),
            include_self_refine=obj.get("include_self_refine", False),
            number_of_codes=obj.get("number_of_codes", "5 and 15"),
            clustering_style=obj.get("clustering_style", cls.clustering_style),
            coding_style=obj.get("coding_style", cls.coding_style),
            conceptualizing_style=obj.get("conceptualizing_style", cls.conceptualizing_style),
            attempt_budget=obj.get("attempt_budget", 3),
            workers=obj.get("workers", 2),
            allow_self_refine_selection=obj.get("allow_self_refine_selection", False),
            backend=obj.get("backend", "http"),
            cassette=obj.get("cassette"),
            cassette_mode=obj.get("cassette_mode"),
        )


def build_gateway(config: RunConfig) -> ChatGateway:
    """Gateway as described by a run config (used by CLI resume and service)."""
    from .gateway import Cassette, CassetteMode

    cassette = None
    if config.cassette:
        mode = CassetteMode(config.cassette_mode or "replay")
        if mode is CassetteMode.REPLAY:
            cassette = Cassette.load(config.cassette, mode)
        elif Path(config.cassette).exists():
            cassette = Cassette.load(config.cassette, mode)
            cassette.mode = mode
        else:
            cassette = Cassette(mode, {}, path=Path(config.cassette))
    transport = None
    if config.backend == "scripted":
        from .scripted import ScriptedQdaBackend

        transport = ScriptedQdaBackend()
    elif config.backend != "http":
        raise ContractError(f"unknown backend {config.backend!r}")
    return ChatGateway(config.model, cassette=cassette, transport=transport)


def coding_bindings(
    config: RunConfig, research_question: str, stage: Level, input_text: str
) -> dict[str, str]:
    if stage is Level.CODE:
        return {
            "researchQuestions": research_question,
            "inputData": input_text,
            "numberOfTopicClusters": config.number_of_codes,
            "clusteringStyle": config.clustering_style,
        }
    if stage is Level.SUBTHEME:
        return {
            "inputData": input_text,
            "numberOfTopicClusters": config.number_of_codes,
            "codingStyle": config.coding_style,
        }
    return {
        "researchQuestions": research_question,
        "inputData": input_text,
        "conceptualizingStyle": config.conceptualizing_style,
    }


def debrief_bindings(research_question: str, initial: AgentResult) -> dict[str, str]:
    return {
        "inputData": serialize(initial.structure, include_metadata=False),
        "explanation": initial.metadata.explanation_text(),
        "self_criticize": initial.metadata.reflection_text(),
        "researchQuestions": research_question,
    }


class EventLog:
    """In-memory status transition stream for long-polling clients."""

    def __init__(self):
        self._events: list[dict] = []
        self._cond = threading.Condition()

    def emit(self, kind: str, **data) -> None:
        with self._cond:
            self._events.append({"seq": len(self._events), "kind": kind, **data})
            self._cond.notify_all()

    def since(self, seq: int, timeout: float = 0.0) -> list[dict]:
        deadline = time.monotonic() + timeout
        with self._cond:
            while len(self._events) <= seq:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                self._cond.wait(remaining)
            return list(self._events[seq:])


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=True) + "\n", "utf-8")
    os.replace(tmp, path)


def _digest_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def result_to_file(result: AgentResult, log: OperationLog | None = None) -> dict:
    body = result.to_json()
    if log is not None:
        body["operations"] = log.to_json()
    return body


def result_from_file(obj: dict, source_interview: str) -> tuple[AgentResult, OperationLog | None]:
    parsed = parse(json.dumps(obj["structure"]), source_interview=source_interview)
    result = AgentResult(
        structure=parsed.structure,
        metadata=parsed.structure.metadata,
        modification_summary=obj.get("modification_summary"),
        raw_reply=obj.get("raw_reply", ""),
        attempts=obj.get("attempts", 1),
        repairs=tuple(obj.get("repairs", ())),
    )
    log = OperationLog.from_json(obj["operations"]) if "operations" in obj else None
    return result, log


class PipelineRunner:
    """Drives one run directory to completion (or to a selection pause)."""

    def __init__(self, run_dir: str | Path, config: RunConfig, gateway: ChatGateway,
                 events: EventLog | None = None, run_id: str | None = None):
        self.run_dir = Path(run_dir)
        self.config = config
        self.gateway = gateway
        self.events = events or EventLog()
        self.dataset: DatasetManifest = load_dataset(config.dataset)
        self._lock = threading.RLock()
        self.manifest = self._load_or_init(run_id)

    # -- manifest ------------------------------------------------------------

    @property
    def manifest_path(self) -> Path:
        return self.run_dir / "manifest.json"

    def _load_or_init(self, run_id: str | None) -> dict:
        if self.manifest_path.exists():
            return json.loads(self.manifest_path.read_text("utf-8"))
        manifest = {
            "format": 1,
            "run_id": run_id or f"run-{int(time.time())}",
            "dataset": str(self.config.dataset),
            "research_question": self.dataset.research_question,
            "config": self.config.to_json(),
            "status": "pending",
            "awaiting": None,
            "failure": None,
            "interviews": {
                interview.id: {
                    "state": "pending",
                    "stages": {
                        stage.value: {
                            "state": "pending",
                            "selection": None,
                            "input_digest": None,
                            "failures": {},
                        }
                        for stage in STAGES
                    },
                }
                for interview in self.dataset.interviews
            },
            "created_at": _utc_now(),
            "updated_at": _utc_now(),
        }
        self._save_manifest(manifest)
        return manifest

    def _save_manifest(self, manifest: dict | None = None) -> None:
        with self._lock:
            manifest = manifest if manifest is not None else self.manifest
            manifest["updated_at"] = _utc_now()
            _write_json(self.manifest_path, manifest)

    def _set_status(self, status: str, awaiting=None, failure=None) -> None:
        with self._lock:
            self.manifest["status"] = status
            self.manifest["awaiting"] = awaiting
            if failure is not None:
                self.manifest["failure"] = failure
            self._save_manifest()
        self.events.emit("status", status=status, awaiting=awaiting)

    def _stage_entry(self, iid: str, stage: Level) -> dict:
        return self.manifest["interviews"][iid]["stages"][stage.value]

    # -- file paths ------------------------------------------------------------

    def stage_dir(self, iid: str, stage: Level) -> Path:
        return self.run_dir / iid / stage.value

    def result_path(self, iid: str, stage: Level, condition: str) -> Path:
        return self.stage_dir(iid, stage) / f"{condition}.json"

    # -- agent plumbing ---------------------------------------------------------

    def _coding_bindings(self, stage: Level, input_text: str) -> dict[str, str]:
        return coding_bindings(self.config, self.dataset.research_question, stage, input_text)

    def _debrief_bindings(self, initial: AgentResult) -> dict[str, str]:
        return debrief_bindings(self.dataset.research_question, initial)

    def _run_initial(self, iid: str, stage: Level, input_text: str) -> AgentResult:
        task = AgentTask(
            stage=stage,
            perspective=None,
            bindings=self._coding_bindings(stage, input_text),
            backend=self.config.model.model,
            attempt_budget=self.config.attempt_budget,
        )
        result = run_agent(self.gateway, task, source_interview=iid)
        if stage is Level.CODE:
            off_verbatim = verify_verbatim(result.structure, input_text)
            if off_verbatim:
                self.events.emit(
                    "verbatim_warning",
                    interview=iid,
                    count=len(off_verbatim),
                    first=str(off_verbatim[0]),
                )
        return result

    def _run_debrief(
        self, iid: str, stage: Level, perspective: Perspective, initial: AgentResult
    ) -> tuple[AgentResult, OperationLog]:
        task = AgentTask(
            stage=stage,
            perspective=perspective,
            bindings=self._debrief_bindings(initial),
            backend=self.config.model.model,
            attempt_budget=self.config.attempt_budget,
        )
        result = run_agent(
            self.gateway, task, input_structure=initial.structure, source_interview=iid
        )
        return result, diff(initial.structure, result.structure)

    # -- stage execution -----------------------------------------------------------

    def _ensure_initial(self, iid: str, stage: Level, input_text: str) -> AgentResult:
        path = self.result_path(iid, stage, "initial")
        if path.exists():
            result, _ = result_from_file(json.loads(path.read_text("utf-8")), iid)
            return result
        result = self._run_initial(iid, stage, input_text)
        _write_json(path, result_to_file(result))
        self.events.emit("initial_ready", interview=iid, stage=stage.value)
        return result

    def _ensure_refinements(self, iid: str, stage: Level, initial: AgentResult) -> dict:
        """Run missing debriefers concurrently; returns condition -> loaded body."""
        pending: list[Perspective] = []
        for perspective in self.config.perspectives():
            if not self.result_path(iid, stage, perspective.value).exists():
                pending.append(perspective)

        def one(perspective: Perspective) -> None:
            path = self.result_path(iid, stage, perspective.value)
            try:
                result, log = self._run_debrief(iid, stage, perspective, initial)
                _write_json(path, result_to_file(result, log))
            except AgentError as e:
                _write_json(
                    path,
                    {"failed": True, "error": str(e), "raw_replies": e.raw_replies},
                )
                with self._lock:
                    self._stage_entry(iid, stage)["failures"][perspective.value] = str(e)
                    self._save_manifest()
            self.events.emit("refinement_ready", interview=iid, stage=stage.value,
                             perspective=perspective.value)

        if pending:
            with ThreadPoolExecutor(max_workers=len(pending)) as pool:
                list(pool.map(one, pending))

        out = {}
        for perspective in self.config.perspectives():
            body = json.loads(self.result_path(iid, stage, perspective.value).read_text("utf-8"))
            out[perspective.value] = body
        return out

    def _loaded_structure(self, iid: str, stage: Level, condition: str) -> CodingStructure:
        body = json.loads(self.result_path(iid, stage, condition).read_text("utf-8"))
        if body.get("failed"):
            raise ContractError(f"{condition} refinement failed for {iid}/{stage.value}")
        result, _ = result_from_file(body, iid)
        return result.structure

    def _ensure_stage(self, iid: str, stage: Level, input_structure: CodingStructure | None):
        """Returns (outcome, selected structure); outcome: ok|awaiting|failed."""
        entry = self._stage_entry(iid, stage)
        if stage is Level.CODE:
            input_text = self.dataset.interview(iid).text
        else:
            if input_structure is None:
                raise ContractError("higher stages need the prior selected structure")
            input_text = serialize(input_structure, include_metadata=False)
        input_digest = _digest_text(input_text)
        with self._lock:
            entry["input_digest"] = input_digest
            if entry["state"] == "pending":
                entry["state"] = "running"
            self._save_manifest()

        try:
            initial = self._ensure_initial(iid, stage, input_text)
        except AgentError as e:
            with self._lock:
                entry["state"] = "failed"
                entry["failures"]["initial"] = str(e)
                self.manifest["interviews"][iid]["state"] = "failed"
                self._save_manifest()
            return "failed", None

        self._ensure_refinements(iid, stage, initial)
        with self._lock:
            if entry["state"] == "running":
                entry["state"] = "refined"
                self._save_manifest()

        selection = entry.get("selection")
        if selection is None:
            policy = self.config.policy
            if policy.kind == "keepall":
                selection = "initial"
            elif policy.kind == "fixed":
                selection = (
                    "initial" if policy.perspective is Perspective.NONE else policy.perspective.value
                )
                if selection != "initial" and selection in entry["failures"]:
                    with self._lock:
                        entry["state"] = "failed"
                        self.manifest["interviews"][iid]["state"] = "failed"
                        self._save_manifest()
                    return "failed", None
            else:  # interactive
                self._set_status("awaiting_selection", awaiting={"interview": iid, "stage": stage.value})
                return "awaiting", None
            with self._lock:
                entry["selection"] = selection
                entry["state"] = "selected"
                self._save_manifest()
            self.events.emit("selection", interview=iid, stage=stage.value, selection=selection)

        selected = self._loaded_structure(iid, stage, selection)
        with self._lock:
            if entry["state"] != "selected":
                entry["state"] = "selected"
                self._save_manifest()
        return "ok", selected

    def run_interview(self, iid: str) -> str:
        with self._lock:
            if self.manifest["interviews"][iid]["state"] == "complete":
                return "complete"
            self.manifest["interviews"][iid]["state"] = "running"
            self._save_manifest()
        input_structure: CodingStructure | None = None
        for stage in STAGES:
            outcome, selected = self._ensure_stage(iid, stage, input_structure)
            if outcome != "ok":
                return outcome
            input_structure = selected
        with self._lock:
            self.manifest["interviews"][iid]["state"] = "complete"
            self._save_manifest()
        self.events.emit("interview_complete", interview=iid)
        return "complete"

    def run(self) -> str:
        """Drive all interviews; returns the final status string."""
        self._set_status("running")
        ids = [interview.id for interview in self.dataset.interviews]
        outcomes: dict[str, str] = {}
        if self.config.policy.kind == "interactive":
            # Interviews run sequentially so exactly one selection is pending
            # at any time.
            for iid in ids:
                outcome = outcomes[iid] = self.run_interview(iid)
                if outcome == "awaiting":
                    return "awaiting_selection"
        else:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                for iid, outcome in zip(ids, pool.map(self.run_interview, ids)):
                    outcomes[iid] = outcome
        self._save_recording()
        if any(outcome == "failed" for outcome in outcomes.values()):
            failed = sorted(iid for iid, o in outcomes.items() if o == "failed")
            self._set_status("failed", failure=f"interviews failed: {', '.join(failed)}")
            return "failed"
        self._set_status("complete")
        self.events.emit("run_complete")
        return "complete"

    def _save_recording(self) -> None:
        from .gateway import CassetteMode

        cassette = self.gateway.cassette
        if cassette is not None and cassette.mode is CassetteMode.RECORD and cassette.path:
            cassette.save()

    # -- selection --------------------------------------------------------------

    def submit_selection(self, iid: str, stage_name: str, condition: str) -> dict:
        """Record a human selection; idempotent for identical repeats."""
        if condition not in CONDITIONS:
            raise ContractError(f"unknown selection {condition!r}")
        try:
            stage = Level(stage_name)
        except ValueError:
            raise ContractError(f"unknown stage {stage_name!r}") from None
        with self._lock:
            if iid not in self.manifest["interviews"]:
                raise ContractError(f"unknown interview {iid!r}")
            entry = self._stage_entry(iid, stage)
            if entry.get("selection") == condition:
                return self.manifest  # idempotent repeat
            awaiting = self.manifest.get("awaiting")
            if (
                self.manifest["status"] != "awaiting_selection"
                or not awaiting
                or awaiting["interview"] != iid
                or awaiting["stage"] != stage.value
            ):
                raise StateConflictError(
                    f"run is not awaiting a selection at {iid}/{stage.value}"
                )
            if condition == "selfrefine" and not self.config.allow_self_refine_selection:
                raise ContractError(
                    "the self-refinement condition is an evaluation baseline; "
                    "selecting it is disabled by default"
                )
            if condition != "initial":
                if condition not in [p.value for p in self.config.perspectives()]:
                    raise ContractError(f"perspective {condition!r} not part of this run")
                if condition in entry["failures"]:
                    raise ContractError(f"perspective {condition!r} failed for this stage")
                if not self.result_path(iid, stage, condition).exists():
                    raise StateConflictError(f"{condition!r} refinement not available yet")
            entry["selection"] = condition
            entry["state"] = "selected"
            self.manifest["status"] = "pending"
            self.manifest["awaiting"] = None
            self._save_manifest()
        self.events.emit("selection", interview=iid, stage=stage.value, selection=condition)
        return self.manifest


def run_digest(run_dir: str | Path) -> str:
    """Digest of the deterministic run artifacts.

    Volatile manifest fields (timestamps, run id, dataset path) and non-result
    files (cassette, report, caches) are excluded, so two equivalent runs match
    byte-for-byte.
    """
    run_dir = Path(run_dir)
    volatile = ("created_at", "updated_at", "run_id", "dataset")
    digest = hashlib.sha256()
    for path in sorted(run_dir.rglob("*.json")):
        rel = path.relative_to(run_dir).as_posix()
        if rel in ("cassette.json", "report.json") or rel.endswith(".cache.json"):
            continue
        body = path.read_text("utf-8")
        if rel == "manifest.json":
            obj = json.loads(body)
            for key in volatile:
                obj.pop(key, None)
            # input bindings (paths) and scheduling knobs never influence
            # artifact content; two equivalent runs must digest identically
            config = obj.get("config", {})
            for key in ("dataset", "workers", "cassette", "cassette_mode"):
                config.pop(key, None)
            body = json.dumps(obj, sort_keys=True)
        digest.update(rel.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(body.encode("utf-8"))
        digest.update(b"\x00")
    return digest.hexdigest()


def verify_provenance(run_dir: str | Path) -> None:
    """Assert stage N+1 input digests equal stage N's selected structure digest."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text("utf-8"))
    for iid, interview in manifest["interviews"].items():
        prev_selected: str | None = None
        for stage in STAGES:
            entry = interview["stages"][stage.value]
            if entry["input_digest"] is None:
                break
            if stage is not Level.CODE:
                if prev_selected is None:
                    raise ContractError(f"{iid}/{stage.value} ran without a prior selection")
                if entry["input_digest"] != prev_selected:
                    raise ContractError(
                        f"{iid}/{stage.value}: input digest does not match the "
                        "previous stage's selected structure"
                    )
            selection = entry.get("selection")
            if selection is None:
                break
            body = json.loads(
                (run_dir / iid / stage.value / f"{selection}.json").read_text("utf-8")
            )
            result, _ = result_from_file(body, iid)
            prev_selected = _digest_text(serialize(result.structure, include_metadata=False))
