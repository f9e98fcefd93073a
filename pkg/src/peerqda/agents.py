"""Agent execution: render a template, call the backend, repair and validate.

run_agent never returns an invalid structure: replies go through a repair
ladder (fence stripping, preamble trimming, quote normalization), then
schema parsing, structural validation, and, for debriefing tasks, the
refinement legality check.  On failure the agent is reprompted with the
violation list appended, up to its attempt budget.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import (
    AgentError,
    ContractError,
    RepairError,
    SchemaError,
    StructureParseError,
)
from .gateway import ChatGateway
from .model import (
    CodingStructure,
    Level,
    Perspective,
    StageMetadata,
    parse,
    validate,
)
from .ops import check_refinement
from .templates import load_template


@dataclass(frozen=True)
class AgentTask:
    """One unit of LLM work: stage x perspective x bindings.

    perspective None means the hierarchical coding agent; a debriefing
    perspective requires an input structure at run time.  backend is a
    display tag recorded for provenance (the gateway owns the real config).
    """

    stage: Level
    perspective: Perspective | None
    bindings: dict[str, str] = field(default_factory=dict)
    backend: str = ""
    attempt_budget: int = 3

    def __post_init__(self):
        if self.attempt_budget < 1:
            raise ContractError("attempt budget must be >= 1")
        if self.perspective is Perspective.NONE:
            raise ContractError("the initial condition is not an agent task")

    @property
    def is_debrief(self) -> bool:
        return self.perspective is not None


@dataclass(frozen=True)
class AgentResult:
    structure: CodingStructure
    metadata: StageMetadata | None
    modification_summary: str | None
    raw_reply: str
    attempts: int
    repairs: tuple[str, ...]

    def to_json(self) -> dict:
        from .model import structure_to_json

        return {
            "structure": structure_to_json(self.structure, include_metadata=True),
            "modification_summary": self.modification_summary,
            "attempts": self.attempts,
            "repairs": list(self.repairs),
            "raw_reply": self.raw_reply,
        }


_FENCE_RE = re.compile(r"^```[a-zA-Z]*\s*\n?(.*?)\n?```\s*$", re.S)
_SMART_QUOTES = {"“": '"', "”": '"', "‘": "'", "’": "'"}


def repair(raw: str) -> tuple[str, list[str]]:
    """Salvage candidate JSON text from a raw reply; tags name each step."""
    import json as _json

    if not raw or not raw.strip():
        raise RepairError("empty reply")
    text = raw.strip()
    tags: list[str] = []
    fence = _FENCE_RE.match(text)
    if fence:
        text = fence.group(1)
        tags.append("strip_fences")
    start, end = text.find("{"), text.rfind("}")
    if start == -1 or end == -1 or end < start:
        raise RepairError("no JSON object in reply")
    if text[:start].strip() or text[end + 1 :].strip():
        tags.append("trim_preamble")
    text = text[start : end + 1]
    try:
        _json.loads(text)
        return text, tags
    except ValueError:
        pass
    normalized = text
    for smart, plain in _SMART_QUOTES.items():
        normalized = normalized.replace(smart, plain)
    if normalized != text:
        try:
            _json.loads(normalized)
            tags.append("normalize_quotes")
            return normalized, tags
        except ValueError:
            pass
    # Still unparseable; hand the trimmed text back so parse errors carry offsets.
    return text, tags


def render_task(task: AgentTask) -> str:
    return load_template(task.stage, task.perspective).render(task.bindings)


def _problems_for(
    task: AgentTask,
    reply_text: str,
    input_structure: CodingStructure | None,
    source_interview: str,
):
    """Parse and check one reply; returns (result, problems, repair_tags)."""
    problems: list[str] = []
    try:
        json_text, tags = repair(reply_text)
    except RepairError as e:
        return None, [f"reply is not JSON: {e}"], []
    try:
        parsed = parse(json_text, source_interview=source_interview)
    except StructureParseError as e:
        return None, [f"malformed JSON at byte {e.offset}: {e}"], tags
    except SchemaError as e:
        missing = e.missing
        if missing and all(m.startswith("metadata.") for m in missing):
            parsed = parse(json_text, source_interview=source_interview, fill_missing_metadata=True)
            tags = tags + ["fill_metadata"]
        else:
            return None, [f"schema error: {e}"], tags

    structure = parsed.structure
    if structure.level is not task.stage:
        problems.append(
            f"wrong level: expected {task.stage.value}, got {structure.level.value}"
        )
        return None, problems, tags
    report = validate(structure)
    problems.extend(report.messages())
    if not task.is_debrief and structure.metadata is None:
        problems.append("missing metadata (explanation and self-reflection)")
    if task.is_debrief and input_structure is not None and not problems:
        legality = check_refinement(input_structure, structure)
        problems.extend(legality.messages())
    if problems:
        return None, problems, tags
    result = AgentResult(
        structure=structure,
        metadata=structure.metadata,
        modification_summary=parsed.modification_summary,
        raw_reply=reply_text,
        attempts=0,  # set by run_agent
        repairs=tuple(tags),
    )
    return result, [], tags


def run_agent(
    gateway: ChatGateway,
    task: AgentTask,
    input_structure: CodingStructure | None = None,
    source_interview: str = "",
) -> AgentResult:
    """Execute a task; retry with a violations block until budget runs out."""
    if task.is_debrief and input_structure is None:
        raise ContractError("debriefing tasks need the structure under review")
    base_prompt = render_task(task)
    prompt = base_prompt
    raw_replies: list[str] = []
    for attempt in range(1, task.attempt_budget + 1):
        reply = gateway.complete([{"role": "user", "content": prompt}])
        raw_replies.append(reply)
        result, problems, _ = _problems_for(task, reply, input_structure, source_interview)
        if result is not None:
            return AgentResult(
                structure=result.structure,
                metadata=result.metadata,
                modification_summary=result.modification_summary,
                raw_reply=reply,
                attempts=attempt,
                repairs=result.repairs,
            )
        prompt = (
            base_prompt
            + "\n\nVIOLATIONS:\nYour previous reply was rejected for these reasons; "
            + "produce a corrected reply that fixes all of them.\n"
            + "\n".join(f"- {p}" for p in problems)
        )
    raise AgentError(
        f"{task.stage.value}/{task.perspective.value if task.perspective else 'coding'} agent "
        f"failed after {task.attempt_budget} attempts; last problems: {problems[:3]}",
        raw_replies=raw_replies,
    )
